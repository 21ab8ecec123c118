"""Closed-form target distributions and their kernel-perturbed scores.

Isotropic Gaussians and Gaussian mixtures stay in the same family under the
forward perturbation kernel (Gaussian convolution), so the score of the
perturbed marginal is available in closed form at every noise level.  These
serve as training targets and as exact oracles for validating trained
networks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["AnalyticDistribution", "analytic_perturbed_score", "make_score_fn"]


@dataclass(frozen=True)
class AnalyticDistribution:
    """Gaussian or Gaussian mixture with a shared isotropic variance.

    ``means`` has shape (components, d) with d in {1, 2}; ``weights`` are
    positive and sum to 1.
    """

    weights: np.ndarray
    means: np.ndarray
    variance: float

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        if mu.ndim != 2 or mu.shape[1] not in (1, 2):
            raise ValueError(f"means must be (components, d) with d in {{1, 2}}, got {mu.shape}")
        if w.shape != (mu.shape[0],):
            raise ValueError(f"weights shape {w.shape} does not match {mu.shape[0]} components")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if self.variance <= 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)

    @classmethod
    def gaussian(cls, mean, variance: float) -> "AnalyticDistribution":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(np.array([1.0]), mean[None, :], float(variance))

    @classmethod
    def mixture(cls, weights, means, variance: float) -> "AnalyticDistribution":
        return cls(np.asarray(weights, dtype=float),
                   np.asarray(means, dtype=float), float(variance))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def perturbed_variance(self, sde, t) -> np.ndarray:
        """Per-coordinate variance of the kernel-smoothed marginal at ``t``."""
        comp_var = self.variance + sde.kernel_variance(t)
        mean_sq = self.weights @ self.means**2
        return comp_var + mean_sq - self.mean**2

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` points; component choice then Gaussian noise."""
        idx = rng.choice(self.weights.size, size=size, p=self.weights)
        return self.means[idx] + np.sqrt(self.variance) * rng.standard_normal((size, self.dim))

    def perturbed_log_density(self, x, smoothed_variance: float) -> np.ndarray:
        """Log density of the mixture with each component widened to the given variance."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sq = np.sum((x[:, None, :] - self.means[None, :, :]) ** 2, axis=-1)
        log_comp = (
            np.log(self.weights)[None, :]
            - 0.5 * sq / smoothed_variance
            - 0.5 * self.dim * np.log(2.0 * np.pi * smoothed_variance)
        )
        peak = log_comp.max(axis=1, keepdims=True)
        return (peak + np.log(np.sum(np.exp(log_comp - peak), axis=1, keepdims=True)))[:, 0]


def analytic_perturbed_score(dist: AnalyticDistribution, sde, x, t):
    """Exact score of the kernel-smoothed marginal at noise level ``t``.

    Convolving each component with the Gaussian perturbation kernel widens
    its variance by ``kernel_variance(t)``; the score is the responsibility-
    weighted sum of the component scores.  For a single Gaussian this is
    ``-(x - mean) / (variance + kernel_variance(t))``.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    xb = np.atleast_2d(x)
    s2 = dist.variance + float(sde.kernel_variance(t))

    diff = xb[:, None, :] - dist.means[None, :, :]  # (B, K, d)
    log_resp = np.log(dist.weights)[None, :] - 0.5 * np.sum(diff**2, axis=-1) / s2
    log_resp -= log_resp.max(axis=1, keepdims=True)
    resp = np.exp(log_resp)
    resp /= resp.sum(axis=1, keepdims=True)
    score = -np.sum(resp[:, :, None] * diff, axis=1) / s2
    return score[0] if squeeze else score


def make_score_fn(dist: AnalyticDistribution, sde):
    """Adapter: the exact perturbed score as a ``score(x, t)`` callable."""

    def score(x, t):
        return analytic_perturbed_score(dist, sde, x, t)

    return score
