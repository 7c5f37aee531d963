"""Plain-text run configuration: [section] headers over key = value lines.

Lists are whitespace-separated. Unknown sections or keys are hard
errors, and every parse error names the offending line. serialize_config
writes back every resolved key so a run's config copy reparses to the
exact same settings.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .datasets import DatasetSpec
from .denoiser import MlpArch
from .forward import NORMALIZE_MODES, CompoundSchedule
from .metrics import METRIC_NAMES
from .sampler import SamplerConfig
from .schedules import ScheduleSpec, format_schedule, parse_schedule
from .training import TrainConfig


class ConfigError(Exception):
    """Unparseable or invalid run configuration."""


@dataclass(frozen=True)
class NetSettings:
    """Denoiser shape knobs; in_dim comes from the dataset at build time."""

    hidden_dims: tuple = (64, 64)
    time_embed_dim: int = 16
    cond_classes: int = 0
    self_cond: bool = False

    def __post_init__(self):
        if len(self.hidden_dims) < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden layer widths must be >= 1, got {self.hidden_dims}")
        if self.cond_classes < 0:
            raise ValueError(f"classes must be >= 0, got {self.cond_classes}")

    def build_arch(self, in_dim: int) -> MlpArch:
        return MlpArch(
            in_dim=in_dim,
            hidden_dims=tuple(self.hidden_dims),
            time_embed_dim=self.time_embed_dim,
            cond_classes=self.cond_classes if self.cond_classes > 0 else None,
            self_cond=self.self_cond,
        )


@dataclass(frozen=True)
class SweepSettings:
    """Grid axes and bookkeeping for a (schedule, scale) sweep."""

    schedules: tuple
    scales: tuple
    metric: str
    base_seed: int
    oracle: bool = False
    n_eval: int = 10000
    normalize: str = "off"

    def __post_init__(self):
        if len(self.schedules) < 1:
            raise ValueError("schedules grid is empty")
        if len(set(self.schedules)) != len(self.schedules):
            raise ValueError(f"duplicate schedule in grid: {self.schedules}")
        for s in self.schedules:
            parse_schedule(s)
        if len(self.scales) < 1:
            raise ValueError("scales grid is empty")
        if len(set(self.scales)) != len(self.scales):
            raise ValueError(f"duplicate scale in grid: {self.scales}")
        for b in self.scales:
            if not 0.0 < b <= 1.0:
                raise ValueError(f"scales must lie in (0, 1], got {b}")
        if self.metric not in METRIC_NAMES:
            raise ValueError(f"metric must be one of {METRIC_NAMES}, got {self.metric!r}")
        if self.base_seed < 0:
            raise ValueError(f"base_seed must be >= 0, got {self.base_seed}")
        if self.n_eval < 2:
            raise ValueError(f"n_eval must be >= 2, got {self.n_eval}")
        if self.normalize not in NORMALIZE_MODES:
            raise ValueError(
                f"normalize must be one of {NORMALIZE_MODES}, got {self.normalize!r}"
            )
        if self.oracle and self.metric != "covariance_error":
            raise ValueError("oracle sweeps score covariance_error only")
        if self.oracle and self.normalize != "off":
            raise ValueError("oracle sweeps need normalize = off (raw sampler inputs)")


@dataclass
class Config:
    """Every section a run file may carry; absent sections stay None."""

    dataset: Optional[DatasetSpec] = None
    compound: Optional[CompoundSchedule] = None
    train: Optional[TrainConfig] = None
    net: Optional[NetSettings] = None
    sampler: Optional[SamplerConfig] = None
    sweep: Optional[SweepSettings] = None


_SECTION_KEYS = {
    "dataset": {
        "kind": "str", "n_train": "int", "seed": "int", "dim": "int",
        "rho": "float", "modes": "int", "radius": "float", "std": "float",
        "base_res": "int", "upsample": "int",
    },
    "compound": {"schedule": "schedule", "input_scale": "float", "normalize": "str"},
    "train": {
        "steps": "int", "batch_size": "int", "lr": "float", "seed": "int",
        "optimizer": "str", "lr_decay": "str", "lr_decay_fraction": "float",
        "beta1": "float", "beta2": "float", "eps_opt": "float",
        "weight_decay": "float", "ema_decay": "float",
        "self_cond_rate": "float", "label_dropout": "float", "log_every": "int",
        "hidden": "int_list", "time_embed": "int", "classes": "int",
        "self_cond": "bool",
    },
    "sampler": {
        "steps": "int", "seed": "int", "step_kind": "str",
        "schedule": "schedule", "guidance_weight": "float",
        "signal_clamp": "opt_float",
    },
    "sweep": {
        "schedules": "schedule_list", "scales": "float_list", "metric": "str",
        "oracle": "bool", "base_seed": "int", "n_eval": "int",
        "normalize": "str",
    },
}

_NET_KEYS = ("hidden", "time_embed", "classes", "self_cond")


def _convert(raw: str, typ: str, lineno: int, key: str):
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "opt_float":
            return None if raw == "none" else float(raw)
        if typ == "bool":
            if raw not in ("true", "false"):
                raise ValueError("expected true or false")
            return raw == "true"
        if typ == "str":
            return raw
        if typ == "int_list":
            return tuple(int(tok) for tok in raw.split())
        if typ == "float_list":
            return tuple(float(tok) for tok in raw.split())
        if typ == "schedule":
            return parse_schedule(raw)
        if typ == "schedule_list":
            return tuple(format_schedule(parse_schedule(tok)) for tok in raw.split())
    except ValueError as e:
        raise ConfigError(f"line {lineno}: bad value for '{key}': {e}") from None
    raise AssertionError(f"unhandled value type {typ}")


def _section_lines(text: str):
    """Yield (lineno, section, key, value) for every assignment."""
    current = None
    seen_sections = set()
    seen_keys = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated section header")
            name = line[1:-1].strip()
            if name not in _SECTION_KEYS:
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            if name in seen_sections:
                raise ConfigError(f"line {lineno}: duplicate section [{name}]")
            seen_sections.add(name)
            current = name
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value' or a [section]")
        if current is None:
            raise ConfigError(f"line {lineno}: assignment before any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SECTION_KEYS[current]:
            raise ConfigError(f"line {lineno}: unknown key '{key}' in [{current}]")
        if (current, key) in seen_keys:
            raise ConfigError(f"line {lineno}: duplicate key '{key}' in [{current}]")
        seen_keys.add((current, key))
        yield lineno, current, key, value


def _build(section: str, ctor, values: dict):
    try:
        return ctor(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}]: {e}") from None


def parse_config_text(text: str) -> Config:
    sections: dict = {}
    for lineno, sect, key, raw in _section_lines(text):
        sections.setdefault(sect, {})[key] = _convert(
            raw, _SECTION_KEYS[sect][key], lineno, key
        )

    cfg = Config()
    if "dataset" in sections:
        cfg.dataset = _build("dataset", DatasetSpec, sections["dataset"])
    if "compound" in sections:
        cfg.compound = _build("compound", CompoundSchedule, sections["compound"])
    if "train" in sections:
        vals = dict(sections["train"])
        net_vals = {}
        if "hidden" in vals:
            net_vals["hidden_dims"] = vals.pop("hidden")
        if "time_embed" in vals:
            net_vals["time_embed_dim"] = vals.pop("time_embed")
        if "classes" in vals:
            net_vals["cond_classes"] = vals.pop("classes")
        if "self_cond" in vals:
            net_vals["self_cond"] = vals.pop("self_cond")
        cfg.net = _build("train", NetSettings, net_vals)
        cfg.train = _build("train", TrainConfig, vals)
    if "sampler" in sections:
        vals = dict(sections["sampler"])
        if "schedule" in vals:
            vals["inference_schedule"] = vals.pop("schedule")
        cfg.sampler = _build("sampler", SamplerConfig, vals)
    if "sweep" in sections:
        cfg.sweep = _build("sweep", SweepSettings, sections["sweep"])
    return cfg


def parse_config(path) -> Config:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config_text(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, ScheduleSpec):
        return format_schedule(value)
    if isinstance(value, tuple):
        return " ".join(_fmt(v) for v in value)
    if value is None:
        return "none"
    return str(value)


_DATASET_EXTRAS = {
    "gaussian_ar1": ("dim", "rho"),
    "mixture2d": ("modes", "radius", "std"),
    "checkerboard": (),
    "toy_image": ("base_res", "rho", "upsample"),
}


def serialize_config(cfg: Config) -> str:
    """Render every present section with all keys resolved to values."""
    out = []

    def emit(section, pairs):
        out.append(f"[{section}]")
        out.extend(f"{k} = {_fmt(v)}" for k, v in pairs)
        out.append("")

    if cfg.dataset is not None:
        d = cfg.dataset
        pairs = [("kind", d.kind), ("n_train", d.n_train), ("seed", d.seed)]
        pairs += [(k, getattr(d, k)) for k in _DATASET_EXTRAS[d.kind]]
        emit("dataset", pairs)
    if cfg.compound is not None:
        c = cfg.compound
        emit("compound", [("schedule", c.schedule), ("input_scale", c.input_scale),
                          ("normalize", c.normalize)])
    if cfg.train is not None:
        t = cfg.train
        net = cfg.net if cfg.net is not None else NetSettings()
        emit("train", [
            ("steps", t.steps), ("batch_size", t.batch_size), ("lr", t.lr),
            ("seed", t.seed), ("optimizer", t.optimizer), ("lr_decay", t.lr_decay),
            ("lr_decay_fraction", t.lr_decay_fraction), ("beta1", t.beta1),
            ("beta2", t.beta2), ("eps_opt", t.eps_opt),
            ("weight_decay", t.weight_decay), ("ema_decay", t.ema_decay),
            ("self_cond_rate", t.self_cond_rate),
            ("label_dropout", t.label_dropout), ("log_every", t.log_every),
            ("hidden", net.hidden_dims), ("time_embed", net.time_embed_dim),
            ("classes", net.cond_classes), ("self_cond", net.self_cond),
        ])
    if cfg.sampler is not None:
        s = cfg.sampler
        emit("sampler", [
            ("steps", s.steps), ("seed", s.seed), ("step_kind", s.step_kind),
            ("schedule", s.inference_schedule),
            ("guidance_weight", s.guidance_weight),
            ("signal_clamp", s.signal_clamp),
        ])
    if cfg.sweep is not None:
        w = cfg.sweep
        emit("sweep", [
            ("schedules", w.schedules), ("scales", w.scales),
            ("metric", w.metric), ("oracle", w.oracle),
            ("base_seed", w.base_seed), ("n_eval", w.n_eval),
            ("normalize", w.normalize),
        ])
    return "\n".join(out)


def write_config(path, cfg: Config) -> None:
    Path(path).write_text(serialize_config(cfg), encoding="utf-8")
