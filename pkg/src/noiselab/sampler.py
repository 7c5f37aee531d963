"""Generation loop: DDIM/DDPM steps, decoupled inference schedule, guidance.

The chain runs in the scaled space (the signal is b x0) and divides by
b once at the end, so the step formulas keep their standard
variance-preserving form. The inference schedule is free-standing: it
never has to match the schedule the denoiser was trained with.

Noise predictors are callables with three introspection attributes:
``dim`` (data dimensionality), ``self_conditioning`` (whether the
previous signal estimate should be threaded back in), and
``requires_raw_input`` (True when the predictor must see the
unnormalized chain state, as the closed-form oracle does).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from noiselab.core import Rng, as_f64, ensure_finite, gaussian
from noiselab.denoiser import DenoiserParams, mlp_forward
from noiselab.forward import (
    SELF_COND_CLAMP,
    CompoundSchedule,
    normalize_input,
    signal_estimate,
)
from noiselab.oracle import GaussianOracle
from noiselab.schedules import ScheduleSpec, gamma, time_grid

__all__ = [
    "STEP_KINDS",
    "MlpPredictor",
    "OraclePredictor",
    "SamplerConfig",
    "cfg_combine",
    "ddim_step",
    "ddpm_step",
    "generate",
]

STEP_KINDS = ("ddim", "ddpm")


@dataclass(frozen=True)
class SamplerConfig:
    """Generation settings.

    The default inference schedule is the plain cosine over the full
    range, independent of whatever schedule trained the denoiser.
    ``signal_clamp`` optionally bounds the implied signal estimate each
    step (off by default; useful for data with known range).
    """

    steps: int
    seed: int
    step_kind: str = "ddim"
    inference_schedule: ScheduleSpec = field(
        default_factory=lambda: ScheduleSpec.cosine(0.0, 1.0, 1.0)
    )
    guidance_weight: float = 0.0
    signal_clamp: Optional[float] = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.step_kind not in STEP_KINDS:
            raise ValueError(f"step_kind must be one of {STEP_KINDS}, got {self.step_kind!r}")
        if self.guidance_weight < 0.0:
            raise ValueError(f"guidance_weight must be >= 0, got {self.guidance_weight}")
        if self.signal_clamp is not None and not self.signal_clamp > 0.0:
            raise ValueError(f"signal_clamp must be positive, got {self.signal_clamp}")


def _check_step_args(x_t, eps_pred, gamma_now: float, gamma_next: float):
    x_t = as_f64(x_t, "step x_t")
    eps_pred = as_f64(eps_pred, "step eps_pred")
    if x_t.shape != eps_pred.shape:
        raise ValueError(f"eps_pred shape {eps_pred.shape} does not match x_t {x_t.shape}")
    if not 0.0 < gamma_now <= 1.0:
        raise ValueError(f"gamma_now must lie in (0, 1], got {gamma_now}")
    if not 0.0 <= gamma_next <= 1.0:
        raise ValueError(f"gamma_next must lie in [0, 1], got {gamma_next}")
    if gamma_next < gamma_now:
        raise ValueError(
            f"gamma must not decrease along a denoising step: {gamma_now} -> {gamma_next}"
        )
    return x_t, eps_pred


def ddim_step(x_t, eps_pred, gamma_now: float, gamma_next: float) -> np.ndarray:
    """Deterministic update from noise level gamma_now to gamma_next.

    Projects out the scaled-signal estimate
    (x_t - sqrt(1-gamma_now) eps) / sqrt(gamma_now) and re-noises it to
    the target level with the same predicted noise.
    """
    x_t, eps_pred = _check_step_args(x_t, eps_pred, gamma_now, gamma_next)
    sig = (x_t - math.sqrt(1.0 - gamma_now) * eps_pred) / math.sqrt(gamma_now)
    return math.sqrt(gamma_next) * sig + math.sqrt(1.0 - gamma_next) * eps_pred


def ddpm_step(x_t, eps_pred, gamma_now: float, gamma_next: float, rng: Rng) -> np.ndarray:
    """Ancestral update: DDIM's projection plus calibrated fresh noise.

    The injected variance is
    (1 - gamma_now/gamma_next) (1 - gamma_next) / (1 - gamma_now),
    which is 0 at the clean boundary gamma_next = 1, and the predicted
    noise is reattenuated so the step's total variance is preserved.
    The fresh draw happens on every call (even when its coefficient is
    0) so sampling consumes the stream identically at all steps.
    """
    x_t, eps_pred = _check_step_args(x_t, eps_pred, gamma_now, gamma_next)
    sig = (x_t - math.sqrt(1.0 - gamma_now) * eps_pred) / math.sqrt(gamma_now)
    if gamma_now == 1.0:
        var = 0.0
    else:
        var = (1.0 - gamma_now / gamma_next) * (1.0 - gamma_next) / (1.0 - gamma_now)
    z = gaussian(rng, x_t.shape)
    eps_coeff = math.sqrt(max(1.0 - gamma_next - var, 0.0))
    return math.sqrt(gamma_next) * sig + eps_coeff * eps_pred + math.sqrt(var) * z


def cfg_combine(eps_cond, eps_uncond, w: float) -> np.ndarray:
    """Classifier-free guidance: (1 + w) eps_cond - w eps_uncond."""
    eps_cond = as_f64(eps_cond, "eps_cond")
    eps_uncond = as_f64(eps_uncond, "eps_uncond")
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError(
            f"guidance shapes differ: {eps_cond.shape} vs {eps_uncond.shape}"
        )
    if w < 0.0:
        raise ValueError(f"guidance weight must be >= 0, got {w}")
    return (1.0 + w) * eps_cond - w * eps_uncond


class MlpPredictor:
    """Adapts trained DenoiserParams to the predictor protocol."""

    requires_raw_input = False

    def __init__(self, params: DenoiserParams):
        self.params = params

    @property
    def dim(self) -> int:
        return self.params.arch.in_dim

    @property
    def self_conditioning(self) -> bool:
        return self.params.arch.self_cond

    def __call__(self, x_in, *, gamma, t, scale, labels, self_cond):
        return mlp_forward(self.params, x_in, t, labels, self_cond)


class OraclePredictor:
    """Closed-form noise prediction for Gaussian data.

    Needs the raw (unnormalized) chain state: its posterior algebra is
    written for x_t = sqrt(gamma) b x0 + sqrt(1-gamma) eps directly, so
    generate() refuses compound schedules with normalization on.
    """

    requires_raw_input = True
    self_conditioning = False

    def __init__(self, oracle: GaussianOracle):
        self.oracle = oracle

    @property
    def dim(self) -> int:
        return self.oracle.dim

    def __call__(self, x_in, *, gamma, t, scale, labels, self_cond):
        return self.oracle.denoise(x_in, gamma, scale)[1]


def as_predictor(model):
    """Accept DenoiserParams, a GaussianOracle, or a ready predictor."""
    if isinstance(model, DenoiserParams):
        return MlpPredictor(model)
    if isinstance(model, GaussianOracle):
        return OraclePredictor(model)
    if callable(model) and hasattr(model, "dim"):
        return model
    raise TypeError(f"cannot build a noise predictor from {type(model).__name__}")


def generate(
    model,
    cs: CompoundSchedule,
    sc: SamplerConfig,
    n_samples: int,
    labels: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Draw samples by iterating the reverse process.

    Starts from x ~ N(0, I), walks the inference schedule's time grid,
    normalizing the network input per cs at every step, and divides by
    the input scale b at the end so outputs live in data space.
    Guidance runs when guidance_weight > 0 and labels are given: the
    unconditional pass uses the null class. Returns (n_samples, dim).
    """
    predictor = as_predictor(model)
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if predictor.requires_raw_input and cs.normalize != "off":
        raise ValueError(
            "this predictor needs raw chain state; use a compound schedule "
            "with normalize='off'"
        )
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n_samples,):
            raise ValueError(f"labels must have shape ({n_samples},), got {labels.shape}")

    dim = predictor.dim
    rng = Rng(sc.seed)
    x_t = rng.normal((n_samples, dim))
    prev_est = np.zeros((n_samples, dim))
    guided = sc.guidance_weight > 0.0 and labels is not None

    for t_now, t_next in time_grid(sc.steps).pairs:
        g_now = float(gamma(sc.inference_schedule, t_now))
        g_next = float(gamma(sc.inference_schedule, t_next))
        x_in = normalize_input(x_t, g_now, cs)
        self_cond = prev_est if predictor.self_conditioning else None
        eps = predictor(
            x_in, gamma=g_now, t=t_now, scale=cs.input_scale,
            labels=labels, self_cond=self_cond,
        )
        eps = as_f64(eps, "predicted noise")
        if eps.shape != x_t.shape:
            raise ValueError(f"predictor returned shape {eps.shape}, expected {x_t.shape}")
        if guided:
            eps_uncond = predictor(
                x_in, gamma=g_now, t=t_now, scale=cs.input_scale,
                labels=None, self_cond=self_cond,
            )
            eps = cfg_combine(eps, eps_uncond, sc.guidance_weight)
        if predictor.self_conditioning:
            prev_est = np.clip(
                signal_estimate(x_t, g_now, eps), -SELF_COND_CLAMP, SELF_COND_CLAMP
            )
        if sc.signal_clamp is not None and g_now < 1.0:
            est = np.clip(signal_estimate(x_t, g_now, eps), -sc.signal_clamp, sc.signal_clamp)
            eps = (x_t - math.sqrt(g_now) * est) / math.sqrt(1.0 - g_now)
        if sc.step_kind == "ddim":
            x_t = ddim_step(x_t, eps, g_now, g_next)
        else:
            x_t = ddpm_step(x_t, eps, g_now, g_next, rng)
    ensure_finite(x_t, "generated samples")
    return x_t / cs.input_scale
