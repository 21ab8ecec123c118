"""Time grids and seedable Brownian path ensembles.

Every Monte Carlo routine in the package consumes the two containers defined
here: a uniform :class:`TimeGrid` on ``[0, T]`` and a :class:`WienerEnsemble`
of ``M`` Brownian paths sampled on that grid.

Reproducibility contract
------------------------
Path ``m`` of an ensemble is generated from its own counter-based Philox
stream keyed by ``(seed, m)``, with Gaussian draws obtained by inverse CDF
from raw 64-bit counter output.  Consequences:

- the ensemble is a pure function of ``(grid, M, d, seed)``, bit-identical
  across runs and platforms with IEEE doubles;
- path ``m`` does not depend on ``M`` or on how path generation is chunked
  across workers, so parallel generation partitioned by path index is exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "TimeGrid",
    "WienerEnsemble",
    "make_time_grid",
    "sample_wiener_ensemble",
    "zero_wiener_ensemble",
    "derive_seed",
    "dump_ensemble",
    "load_ensemble",
]

_U64 = (1 << 64) - 1

_MAGIC = b"WIEN"
_FORMAT_VERSION = 1
# magic, version, M, n, d, T, seed -- little endian
_HEADER = struct.Struct("<4sIQQQdQ")


def derive_seed(seed: int, index: int) -> int:
    """Derive a decorrelated 64-bit child seed from ``(seed, index)``.

    splitmix64-style finalizer; used wherever one user-facing seed has to
    fan out into several independent streams (repetitions, noise draws).
    """
    x = (seed & _U64) ^ _mix64((index & _U64) + 0x9E3779B97F4A7C15)
    return _mix64(x)


def _mix64(x: int) -> int:
    x &= _U64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _U64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[0, T]`` into ``n`` steps.

    The grid is defined by the pair ``(T, n)``; ``dt = T / n`` is derived,
    and ``nodes[k] == k * T / n`` with ``nodes[n] == T`` exactly.
    """

    horizon: float
    steps: int

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


def make_time_grid(horizon: float, steps: int) -> TimeGrid:
    """Build a uniform time grid on ``[0, horizon]`` with ``steps`` steps."""
    if not np.isfinite(horizon) or horizon <= 0:
        raise ValueError(f"horizon must be positive and finite, got {horizon}")
    if int(steps) != steps or steps < 1:
        raise ValueError(f"steps must be a positive integer, got {steps}")
    return TimeGrid(float(horizon), int(steps))


@dataclass(frozen=True)
class WienerEnsemble:
    """``M`` sampled Brownian paths on a shared grid.

    ``increments[m, k]`` is the d-dimensional Gaussian step over
    ``[t_k, t_{k+1}]`` (each coordinate ~ N(0, dt)); ``cumulative[m, k]`` is
    the Brownian value at ``t_k`` with ``cumulative[m, 0] == 0``.  Instances
    are immutable and safe to share read-only across workers.
    """

    grid: TimeGrid
    paths: int
    dim: int
    seed: int
    increments: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self) -> None:
        n = self.grid.steps
        if self.increments.shape != (self.paths, n, self.dim):
            raise ValueError(
                f"increments shape {self.increments.shape} does not match "
                f"(M, n, d) = ({self.paths}, {n}, {self.dim})"
            )
        if self.cumulative.shape != (self.paths, n + 1, self.dim):
            raise ValueError(
                f"cumulative shape {self.cumulative.shape} does not match "
                f"(M, n+1, d) = ({self.paths}, {n + 1}, {self.dim})"
            )


def _path_normals(seed: int, path: int, steps: int, dim: int) -> np.ndarray:
    """Standard-normal draws for one path, element (k, j) keyed by
    (seed, path, step k, coordinate j)."""
    key = np.array([seed & _U64, path & _U64], dtype=np.uint64)
    raw = np.random.Philox(key=key).random_raw(steps * dim)
    # open-interval uniforms: ((raw >> 11) + 0.5) * 2^-53 is in (0, 1) strictly,
    # so the inverse CDF below never produces an infinity
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u).reshape(steps, dim)


def sample_wiener_ensemble(
    grid: TimeGrid,
    paths: int,
    dim: int,
    seed: int,
    workers: int = 1,
) -> WienerEnsemble:
    """Sample a reproducible ensemble of Brownian paths.

    Identical ``(grid, paths, dim, seed)`` always yields bit-identical
    arrays.  ``workers`` only chunks the per-path loop and never changes the
    output (each path has its own stream).
    """
    if int(paths) != paths or paths < 1:
        raise ValueError(f"paths must be a positive integer, got {paths}")
    if int(dim) != dim or dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim}")
    if int(workers) != workers or workers < 1:
        raise ValueError(f"workers must be a positive integer, got {workers}")
    paths, dim = int(paths), int(dim)
    n = grid.steps
    sqrt_dt = np.sqrt(grid.dt)

    increments = np.empty((paths, n, dim))
    chunk = -(-paths // int(workers))  # ceil division
    for start in range(0, paths, chunk):
        for m in range(start, min(start + chunk, paths)):
            increments[m] = _path_normals(seed, m, n, dim) * sqrt_dt

    cumulative = np.zeros((paths, n + 1, dim))
    np.cumsum(increments, axis=1, out=cumulative[:, 1:, :])
    return WienerEnsemble(grid, paths, dim, int(seed), increments, cumulative)


def zero_wiener_ensemble(grid: TimeGrid, paths: int, dim: int) -> WienerEnsemble:
    """Ensemble with all increments forced to zero (deterministic replays)."""
    n = grid.steps
    return WienerEnsemble(
        grid,
        paths,
        dim,
        seed=0,
        increments=np.zeros((paths, n, dim)),
        cumulative=np.zeros((paths, n + 1, dim)),
    )


def dump_ensemble(ensemble: WienerEnsemble, path) -> None:
    """Write an ensemble to ``path`` as header + little-endian float64 payload."""
    header = _HEADER.pack(
        _MAGIC,
        _FORMAT_VERSION,
        ensemble.paths,
        ensemble.grid.steps,
        ensemble.dim,
        ensemble.grid.horizon,
        ensemble.seed & _U64,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ensemble.increments, dtype="<f8").tobytes())


def load_ensemble(path) -> WienerEnsemble:
    """Read an ensemble written by :func:`dump_ensemble` (bit-exact round trip)."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise ValueError(f"truncated ensemble file: {path}")
        magic, version, paths, n, dim, horizon, seed = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise ValueError(f"not an ensemble file (bad magic): {path}")
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported ensemble format version {version}")
        payload = fh.read(paths * n * dim * 8)
    increments = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if increments.size != paths * n * dim:
        raise ValueError(f"truncated ensemble payload: {path}")
    increments = increments.reshape(paths, n, dim)
    grid = make_time_grid(horizon, n)
    cumulative = np.zeros((paths, n + 1, dim))
    np.cumsum(increments, axis=1, out=cumulative[:, 1:, :])
    return WienerEnsemble(grid, paths, dim, seed, increments, cumulative)
