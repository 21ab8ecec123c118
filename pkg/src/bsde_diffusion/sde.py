"""Variance-exploding forward SDE, its Gaussian kernel, and reverse-time sampling.

The forward dynamics are ``dX_t = g(t) dw_t`` with the geometric schedule
``g(t) = sigma_min * (sigma_max / sigma_min)**t``, so the conditional law of
``X_t`` given ``X_0`` is Gaussian with mean ``X_0`` and a closed-form
variance.  Generation integrates the score-driven reverse-time dynamics with
Euler-Maruyama, descending from ``t = T`` and stopping at a positive floor
where the training target would become singular.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .stochastic import TimeGrid, WienerEnsemble

__all__ = ["SdeSpec", "Path", "perturbation_kernel", "simulate_forward", "sample_reverse", "export_paths_csv"]


@dataclass(frozen=True)
class SdeSpec:
    """Variance-exploding SDE: zero drift, diffusion ``g(t)`` strictly increasing."""

    sigma_min: float = 0.01
    sigma_max: float = 5.0
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if not (0 < self.sigma_min < self.sigma_max):
            raise ValueError(
                f"need 0 < sigma_min < sigma_max, got ({self.sigma_min}, {self.sigma_max})"
            )
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    def sigma(self, t):
        """Diffusion schedule g(t) = sigma_min * (sigma_max/sigma_min)**t."""
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** np.asarray(t, dtype=float)

    def drift(self, x, t):
        """Forward drift; identically zero for the variance-exploding family."""
        return np.zeros_like(np.asarray(x, dtype=float))

    def kernel_variance(self, t):
        """Conditional variance of X_t | X_0: the integral of g(s)^2 over [0, t]."""
        log_ratio = np.log(self.sigma_max / self.sigma_min)
        t = np.asarray(t, dtype=float)
        return self.sigma_min**2 * np.expm1(2.0 * log_ratio * t) / (2.0 * log_ratio)

    def kernel_std(self, t):
        return np.sqrt(self.kernel_variance(t))


@dataclass(frozen=True)
class Path:
    """Simulated trajectory: ``states[..., k, :]`` is the state at ``times[k]``.

    ``times`` ascend for forward simulations and descend for reverse-time
    ones; ``terminal`` is always the last visited state.
    """

    times: np.ndarray
    states: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.states[..., -1, :]


def perturbation_kernel(sde: SdeSpec, t: float) -> tuple[float, float]:
    """Mean coefficient and standard deviation of the Gaussian kernel at ``t``.

    Sampling the perturbed point is ``x_t = mean_coeff * x_0 + std * eps``
    with ``eps ~ N(0, I)``; for the variance-exploding family the mean
    coefficient is exactly 1.
    """
    if not 0 <= t <= sde.horizon:
        raise ValueError(f"t={t} outside [0, {sde.horizon}]")
    return 1.0, float(sde.kernel_std(t))


def _as_increment_array(wiener, grid: TimeGrid, dim: int | None = None) -> np.ndarray:
    """Accept a WienerEnsemble or a raw increment array of shape (..., n, d)."""
    inc = wiener.increments if isinstance(wiener, WienerEnsemble) else np.asarray(wiener, dtype=float)
    if inc.ndim < 2 or inc.shape[-2] != grid.steps:
        raise ValueError(
            f"increments shape {inc.shape} does not provide {grid.steps} steps"
        )
    if dim is not None and inc.shape[-1] != dim:
        raise ValueError(f"increments dimension {inc.shape[-1]} != state dimension {dim}")
    return inc


def simulate_forward(sde, x0, grid: TimeGrid, wiener) -> Path:
    """Euler-Maruyama integration of the forward SDE from ``x0``.

    ``wiener`` may be a :class:`WienerEnsemble` or an increment array of
    shape ``(n, d)`` / ``(M, n, d)``; ``x0`` broadcasts against the leading
    path axes.  Returns all ``n + 1`` states, ``x0`` first.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    inc = _as_increment_array(wiener, grid, dim=x0.shape[-1])
    nodes = grid.nodes
    dt = grid.dt

    states = np.empty(inc.shape[:-2] + (grid.steps + 1, x0.shape[-1]))
    x = np.broadcast_to(x0, inc.shape[:-2] + x0.shape[-1:]).copy()
    states[..., 0, :] = x
    for k in range(grid.steps):
        t_k = nodes[k]
        x = x + sde.drift(x, t_k) * dt + sde.sigma(t_k) * inc[..., k, :]
        states[..., k + 1, :] = x
    return Path(times=nodes.copy(), states=states)


def sample_reverse(
    sde,
    score,
    x_init,
    grid: TimeGrid,
    wiener,
    t_floor: float = 0.01,
    probability_flow: bool = False,
) -> Path:
    """Integrate the score-driven reverse-time dynamics from ``t = T`` down.

    Stochastic mode steps ``x <- x - [f(x,t) - g(t)^2 s(x,t)] dt + g(t) dw``
    on descending grid nodes, stopping at the smallest node >= ``t_floor``
    (the score target is singular at t = 0, so integration never reaches it).
    With ``probability_flow=True`` the noise is dropped and the score term
    halved, which preserves the marginals of the forward process and gives a
    deterministic sampler.

    ``score`` is any callable ``score(x, t) -> array like x``.
    """
    x_init = np.atleast_1d(np.asarray(x_init, dtype=float))
    inc = _as_increment_array(wiener, grid, dim=x_init.shape[-1])
    nodes = grid.nodes
    dt = grid.dt

    stop = int(np.searchsorted(nodes, t_floor, side="left"))
    stop = min(max(stop, 0), grid.steps - 1)

    n_visited = grid.steps - stop + 1
    states = np.empty(inc.shape[:-2] + (n_visited, x_init.shape[-1]))
    x = np.broadcast_to(x_init, inc.shape[:-2] + x_init.shape[-1:]).copy()
    states[..., 0, :] = x
    score_mult = 0.5 if probability_flow else 1.0
    for i, k in enumerate(range(grid.steps, stop, -1)):
        t_k = nodes[k]
        g2s = sde.sigma(t_k) ** 2 * np.asarray(score(x, t_k), dtype=float)
        drift = sde.drift(x, t_k) - score_mult * g2s
        x = x - drift * dt
        if not probability_flow:
            x = x + sde.sigma(t_k) * inc[..., k - 1, :]
        states[..., i + 1, :] = x
    visited = np.arange(grid.steps, stop - 1, -1)
    return Path(times=nodes[visited], states=states)


def export_paths_csv(path_obj: Path, out_file) -> None:
    """Write simulated paths as CSV rows (path_id, step, t, x_1..x_d)."""
    states = path_obj.states
    if states.ndim == 2:
        states = states[None, :, :]
    n_paths, n_nodes, dim = states.shape
    with open(out_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "step", "t"] + [f"x_{j + 1}" for j in range(dim)])
        for m in range(n_paths):
            for k in range(n_nodes):
                writer.writerow(
                    [m, k, repr(float(path_obj.times[k]))]
                    + [repr(float(v)) for v in states[m, k]]
                )
