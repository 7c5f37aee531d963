"""Closed-form optimal denoiser for Gaussian data.

For x0 ~ N(0, Sigma) diffused to x_t = a x0 + s eps with a = sqrt(gamma) b
and s = sqrt(1 - gamma), the posterior mean of the scaled signal is

    x_signal = a^2 Sigma (a^2 Sigma + s^2 I)^{-1} x_t        (mean of a x0)
    eps_hat  = (x_t - x_signal) / s
    x0_scaled_hat = x_signal / sqrt(gamma)                   (mean of b x0)

and the per-dimension Bayes MSE of estimating x0 is

    mse(gamma, b) = (1/n) trace(s^2 Sigma (a^2 Sigma + s^2 I)^{-1})

which is trace(Sigma)/n at gamma = 0 and 0 at gamma = 1. Substituting a
noise-prediction network with this oracle turns sampling into a pure test
of the noising strategy: no training error, only discretization.

Sigma may be symmetric positive SEMIdefinite (replicated-coordinate
covariances are exactly singular); only x0 sampling requires strict
positive definiteness, since denoising factors a^2 Sigma + s^2 I instead.
"""

from __future__ import annotations

import math

import numpy as np

from noiselab.core import (
    DecompositionError,
    Rng,
    as_f64,
    cholesky_factor,
    cholesky_solve,
    ensure_finite,
)

__all__ = ["GaussianOracle", "gaussian_oracle_denoise", "oracle_denoise_mse"]

_PSD_TOL = 1e-9


class GaussianOracle:
    """Bayes-optimal denoiser for zero-mean Gaussian data with known covariance."""

    def __init__(self, sigma: np.ndarray):
        sigma = as_f64(sigma, "oracle covariance")
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError(f"covariance must be square, got shape {sigma.shape}")
        scale = max(1.0, float(np.max(np.abs(sigma))))
        if np.max(np.abs(sigma - sigma.T)) > _PSD_TOL * scale:
            raise ValueError("covariance must be symmetric")
        if float(np.min(np.linalg.eigvalsh(sigma))) < -_PSD_TOL * scale:
            raise ValueError("covariance must be positive semidefinite")
        self.sigma = sigma
        self.dim = sigma.shape[0]
        self._chol: np.ndarray | None = None

    def _cholesky(self) -> np.ndarray:
        if self._chol is None:
            try:
                self._chol = cholesky_factor(self.sigma)
            except DecompositionError as exc:
                raise DecompositionError(
                    "covariance is singular (e.g. replicated coordinates); "
                    "x0 sampling needs a strictly positive definite matrix"
                ) from exc
        return self._chol

    def sample_x0(self, rng: Rng, n_samples: int) -> np.ndarray:
        """Draw n_samples rows from N(0, Sigma). Requires SPD Sigma."""
        if n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {n_samples}")
        L = self._cholesky()
        return rng.normal((n_samples, self.dim)) @ L.T

    def _validate(self, gamma_t: float, scale: float) -> tuple[float, float]:
        g = float(gamma_t)
        if not 0.0 <= g < 1.0:
            raise ValueError(f"gamma_t must lie in [0, 1), got {g}")
        if scale <= 0.0:
            raise ValueError(f"scale must be positive, got {scale}")
        return g, float(scale)

    def denoise(self, x_t: np.ndarray, gamma_t: float, scale: float = 1.0):
        """Posterior signal mean and implied noise prediction.

        Args:
            x_t: (batch, dim) noisy inputs in the scaled process.
            gamma_t: shared noise level in [0, 1).
            scale: input scale b of the forward process.

        Returns:
            (x0_scaled_hat, eps_hat): posterior mean of b x0, and the
            noise prediction satisfying
            x_t = sqrt(gamma) x0_scaled_hat + sqrt(1-gamma) eps_hat.
        """
        g, b = self._validate(gamma_t, scale)
        x_t = as_f64(x_t, "oracle x_t")
        if x_t.ndim != 2 or x_t.shape[1] != self.dim:
            raise ValueError(f"x_t shape {x_t.shape} does not match dim {self.dim}")
        a2 = g * b * b
        s2 = 1.0 - g
        if a2 == 0.0:
            return np.zeros_like(x_t), x_t / math.sqrt(s2)
        system = a2 * self.sigma + s2 * np.eye(self.dim)
        y = cholesky_solve(system, x_t.T)
        sigma_y = (self.sigma @ y).T
        x_signal = a2 * sigma_y
        eps_hat = (x_t - x_signal) / math.sqrt(s2)
        # x_signal / sqrt(gamma), computed without the 1/sqrt(gamma) blowup
        x0_scaled_hat = (b * b * math.sqrt(g)) * sigma_y
        ensure_finite(eps_hat, "oracle eps_hat")
        return x0_scaled_hat, eps_hat

    def expected_mse(self, gamma_t: float, scale: float = 1.0) -> float:
        """Per-dimension Bayes MSE of estimating x0 at this noise level."""
        g, b = float(gamma_t), float(scale)
        if not 0.0 <= g <= 1.0:
            raise ValueError(f"gamma_t must lie in [0, 1], got {g}")
        if b <= 0.0:
            raise ValueError(f"scale must be positive, got {b}")
        if g == 1.0:
            return 0.0
        a2 = g * b * b
        s2 = 1.0 - g
        system = a2 * self.sigma + s2 * np.eye(self.dim)
        posterior = cholesky_solve(system, self.sigma)
        return float(s2 * np.trace(posterior) / self.dim)


def gaussian_oracle_denoise(oracle: GaussianOracle, x_t, gamma_t, scale: float = 1.0):
    """Functional form of GaussianOracle.denoise."""
    return oracle.denoise(x_t, gamma_t, scale)


def oracle_denoise_mse(oracle: GaussianOracle, gamma_t, scale: float = 1.0) -> float:
    """Functional form of GaussianOracle.expected_mse."""
    return oracle.expected_mse(gamma_t, scale)
