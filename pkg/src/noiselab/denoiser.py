"""Noise-prediction MLP with hand-written forward and backward passes.

The network maps a (batch, in_dim) input plus a scalar time per example to
a predicted noise tensor of the input's shape. Time enters through
sinusoidal features; an optional class label is embedded and added to the
first hidden pre-activation (the last embedding row is reserved for the
null class used by label dropout and classifier-free guidance); optional
self-conditioning concatenates the previous signal estimate to the input.

Parameters serialize to a flat binary file: one ASCII header line naming
the architecture, then the raw little-endian float64 buffers in layer
order (weights then bias per layer, class embedding last).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from noiselab.core import Rng, as_f64, ensure_finite

__all__ = [
    "DenoiserParams",
    "Gradients",
    "MlpArch",
    "clone_params",
    "init_params",
    "load_params",
    "mlp_backward",
    "mlp_forward",
    "mlp_forward_cached",
    "param_arrays",
    "save_params",
    "time_embedding",
]

_EMBED_MAX_PERIOD = 1.0e4
_FORMAT_TAG = "mlp1"


@dataclass(frozen=True)
class MlpArch:
    """Architecture descriptor.

    input layer width = in_dim + time_embed_dim + (in_dim if self_cond);
    the class embedding does not widen the input, it is added to the
    first hidden pre-activation.
    """

    in_dim: int
    hidden_dims: tuple[int, ...]
    time_embed_dim: int = 16
    cond_classes: Optional[int] = None
    self_cond: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.in_dim < 1:
            raise ValueError(f"in_dim must be >= 1, got {self.in_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden dims must be >= 1, got {self.hidden_dims}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2 != 0:
            raise ValueError(f"time_embed_dim must be even and >= 2, got {self.time_embed_dim}")
        if self.cond_classes is not None:
            if self.cond_classes < 1:
                raise ValueError(f"cond_classes must be >= 1, got {self.cond_classes}")
            if not self.hidden_dims:
                raise ValueError("class conditioning needs at least one hidden layer")

    @property
    def input_width(self) -> int:
        return self.in_dim + self.time_embed_dim + (self.in_dim if self.self_cond else 0)

    @property
    def null_class(self) -> int:
        """Embedding row used for 'no label' (dropout and unguided passes)."""
        if self.cond_classes is None:
            raise ValueError("arch is unconditional")
        return self.cond_classes

    def layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.input_width, *self.hidden_dims, self.in_dim]
        return list(zip(widths[:-1], widths[1:]))


@dataclass
class DenoiserParams:
    """Weights (fan_in, fan_out), biases, and the optional class table."""

    arch: MlpArch
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    class_embed: Optional[np.ndarray] = None


@dataclass
class Gradients:
    """Loss gradients, mirroring DenoiserParams' array layout."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    class_embed: Optional[np.ndarray] = None


def param_arrays(p: DenoiserParams | Gradients) -> list[np.ndarray]:
    """All parameter arrays in fixed (serialization) order."""
    arrays: list[np.ndarray] = []
    for w, b in zip(p.weights, p.biases):
        arrays.extend([w, b])
    if p.class_embed is not None:
        arrays.append(p.class_embed)
    return arrays


def clone_params(p: DenoiserParams) -> DenoiserParams:
    """Deep copy: the clone's arrays never alias the original's."""
    return DenoiserParams(
        arch=p.arch,
        weights=[w.copy() for w in p.weights],
        biases=[b.copy() for b in p.biases],
        class_embed=None if p.class_embed is None else p.class_embed.copy(),
    )


def init_params(arch: MlpArch, rng: Rng) -> DenoiserParams:
    """Scaled-uniform init preserving unit activation variance.

    Hidden weights are uniform on +-sqrt(3/fan_in); the output layer is
    zero so training starts from an all-zero noise prediction; the class
    table starts at zero so a fresh conditional net matches the
    unconditional one; the first-layer rows fed by the self-conditioning
    slice start at zero so a zero estimate is a true no-op.
    """
    weights, biases = [], []
    dims = arch.layer_dims()
    for i, (fan_in, fan_out) in enumerate(dims):
        if i == len(dims) - 1:
            w = np.zeros((fan_in, fan_out))
        else:
            limit = np.sqrt(3.0 / fan_in)
            w = (2.0 * rng.uniform((fan_in, fan_out)) - 1.0) * limit
        weights.append(w)
        biases.append(np.zeros(fan_out))
    if arch.self_cond and len(dims) > 0:
        weights[0][arch.in_dim + arch.time_embed_dim :, :] = 0.0
    class_embed = None
    if arch.cond_classes is not None:
        class_embed = np.zeros((arch.cond_classes + 1, arch.hidden_dims[0]))
    return DenoiserParams(arch=arch, weights=weights, biases=biases, class_embed=class_embed)


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features [sin(w_k t), cos(w_k t)], w_k log-spaced in [1, 1e4].

    Args:
        t: (batch,) times.
        dim: even feature count; dim/2 frequencies.

    Returns:
        (batch, dim) array: all sines, then all cosines.
    """
    if dim < 2 or dim % 2 != 0:
        raise ValueError(f"embedding dim must be even and >= 2, got {dim}")
    t = as_f64(np.atleast_1d(t), "time_embedding t")
    if t.ndim != 1:
        raise ValueError("time_embedding expects scalar or (batch,) t")
    k = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(_EMBED_MAX_PERIOD), k)) if k > 1 else np.ones(1)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _silu(z: np.ndarray) -> np.ndarray:
    return z * _sigmoid(z)


def _silu_grad(z: np.ndarray) -> np.ndarray:
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _assemble_input(p: DenoiserParams, x, t, labels, self_cond):
    arch = p.arch
    x = as_f64(x, "mlp input")
    if x.ndim != 2 or x.shape[1] != arch.in_dim:
        raise ValueError(f"input shape {x.shape} does not match in_dim {arch.in_dim}")
    n = x.shape[0]
    tt = np.asarray(t, dtype=np.float64)
    if tt.ndim == 0:
        tt = np.full(n, float(tt))
    if tt.shape != (n,):
        raise ValueError(f"t shape {tt.shape}, expected ({n},)")
    parts = [x, time_embedding(tt, arch.time_embed_dim)]
    if arch.self_cond:
        if self_cond is None:
            self_cond = np.zeros_like(x)
        else:
            self_cond = as_f64(self_cond, "self_cond input")
            if self_cond.shape != x.shape:
                raise ValueError(f"self_cond shape {self_cond.shape} != x shape {x.shape}")
        parts.append(self_cond)
    elif self_cond is not None:
        raise ValueError("arch has no self-conditioning input")
    a0 = np.concatenate(parts, axis=1)

    idx = None
    if arch.cond_classes is not None:
        if labels is None:
            idx = np.full(n, arch.null_class, dtype=np.int64)
        else:
            idx = np.asarray(labels)
            if idx.shape != (n,):
                raise ValueError(f"labels shape {idx.shape}, expected ({n},)")
            if not np.issubdtype(idx.dtype, np.integer):
                raise ValueError("labels must be integers")
            if idx.min() < 0 or idx.max() > arch.null_class:
                raise ValueError(f"labels must lie in [0, {arch.null_class}]")
            idx = idx.astype(np.int64)
    elif labels is not None:
        raise ValueError("arch is unconditional but labels were given")
    return a0, idx


def mlp_forward_cached(p: DenoiserParams, x, t, labels=None, self_cond=None):
    """Forward pass returning (eps_pred, cache) for mlp_backward."""
    a0, idx = _assemble_input(p, x, t, labels, self_cond)
    acts = [a0]
    pres = []
    a = a0
    n_hidden = len(p.arch.hidden_dims)
    for i in range(n_hidden):
        z = a @ p.weights[i] + p.biases[i]
        if i == 0 and p.class_embed is not None:
            z = z + p.class_embed[idx]
        pres.append(z)
        a = _silu(z)
        acts.append(a)
    out = a @ p.weights[n_hidden] + p.biases[n_hidden]
    ensure_finite(out, "mlp output")
    cache = {"acts": acts, "pres": pres, "labels": idx}
    return out, cache


def mlp_forward(p: DenoiserParams, x, t, labels=None, self_cond=None) -> np.ndarray:
    """Predicted noise for a batch; see mlp_forward_cached."""
    out, _ = mlp_forward_cached(p, x, t, labels, self_cond)
    return out


def mlp_backward(p: DenoiserParams, cache: dict, grad_out: np.ndarray) -> Gradients:
    """Exact reverse-mode gradients of the cached forward pass.

    Args:
        p: parameters used in the forward pass.
        cache: second output of mlp_forward_cached.
        grad_out: dLoss/d(eps_pred), shape (batch, in_dim).

    Returns:
        Gradients with the same array shapes as the parameters.
    """
    acts, pres, idx = cache["acts"], cache["pres"], cache["labels"]
    grad_out = as_f64(grad_out, "grad_out")
    n_hidden = len(p.arch.hidden_dims)
    g_w = [np.empty(0)] * (n_hidden + 1)
    g_b = [np.empty(0)] * (n_hidden + 1)
    d = grad_out
    g_w[n_hidden] = acts[n_hidden].T @ d
    g_b[n_hidden] = d.sum(axis=0)
    g_embed = None
    if n_hidden > 0:
        da = d @ p.weights[n_hidden].T
        for i in range(n_hidden - 1, -1, -1):
            dz = da * _silu_grad(pres[i])
            g_w[i] = acts[i].T @ dz
            g_b[i] = dz.sum(axis=0)
            if i == 0 and p.class_embed is not None:
                g_embed = np.zeros_like(p.class_embed)
                np.add.at(g_embed, idx, dz)
            if i > 0:
                da = dz @ p.weights[i].T
    return Gradients(weights=g_w, biases=g_b, class_embed=g_embed)


def _arch_header(arch: MlpArch) -> str:
    hidden = ",".join(str(h) for h in arch.hidden_dims) if arch.hidden_dims else "-"
    classes = "-" if arch.cond_classes is None else str(arch.cond_classes)
    return (
        f"{_FORMAT_TAG} in={arch.in_dim} hidden={hidden} "
        f"time_embed={arch.time_embed_dim} classes={classes} "
        f"self_cond={int(arch.self_cond)}"
    )


def _parse_header(line: str) -> MlpArch:
    fields = line.split()
    if not fields or fields[0] != _FORMAT_TAG:
        raise ValueError(f"bad params header: {line!r}")
    kv = {}
    for field in fields[1:]:
        key, _, val = field.partition("=")
        if not val:
            raise ValueError(f"bad params header field: {field!r}")
        kv[key] = val
    try:
        hidden = () if kv["hidden"] == "-" else tuple(int(h) for h in kv["hidden"].split(","))
        return MlpArch(
            in_dim=int(kv["in"]),
            hidden_dims=hidden,
            time_embed_dim=int(kv["time_embed"]),
            cond_classes=None if kv["classes"] == "-" else int(kv["classes"]),
            self_cond=bool(int(kv["self_cond"])),
        )
    except (KeyError, ValueError) as exc:
        raise ValueError(f"bad params header: {line!r}") from exc


def save_params(path, p: DenoiserParams) -> None:
    """Write the header line and little-endian float64 buffers in layer order."""
    with open(path, "wb") as fh:
        fh.write((_arch_header(p.arch) + "\n").encode("ascii"))
        for arr in param_arrays(p):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path) -> DenoiserParams:
    """Inverse of save_params; validates sizes and finiteness."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        arch = _parse_header(header)
        blob = fh.read()
    shapes: list[tuple[int, ...]] = []
    for fan_in, fan_out in arch.layer_dims():
        shapes.extend([(fan_in, fan_out), (fan_out,)])
    if arch.cond_classes is not None:
        shapes.append((arch.cond_classes + 1, arch.hidden_dims[0]))
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    if len(blob) != expected:
        raise ValueError(f"params payload is {len(blob)} bytes, expected {expected}")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    ensure_finite(flat, "loaded params")
    arrays = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[offset : offset + size].reshape(shape).copy())
        offset += size
    weights = arrays[0 : 2 * len(arch.layer_dims()) : 2]
    biases = arrays[1 : 2 * len(arch.layer_dims()) : 2]
    class_embed = arrays[-1] if arch.cond_classes is not None else None
    return DenoiserParams(arch=arch, weights=list(weights), biases=list(biases),
                          class_embed=class_embed)
