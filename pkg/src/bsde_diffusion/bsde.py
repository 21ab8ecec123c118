"""Backward-SDE engine: generator, regression Monte Carlo, deep shooting, replay.

The problem solved here is: given a terminal condition ``Y_T = xi``, a
linear-in-(score, z) generator ``f(s, z, t) = a(t) s + b z + offset`` and a
score model, find the pair ``(Y, Z)`` satisfying

    Y_t = xi + int_t^T f(s(Y_r, r), Z_r) dr - int_t^T Z_r dw_r.

Two solvers are provided.  The regression Monte Carlo solver walks the time
grid backward, projecting conditional expectations of the discretized
dynamics onto polynomial functions of the driving Brownian state; the
result is a per-step family of fitted ``y_t`` and ``z_t`` functions plus the
initial-state estimate ``Y_0``.  The deep-shooting solver instead optimizes
a free initial value and a small feedback network ``z(t, y)`` so that the
forward-simulated terminal state hits ``xi`` in mean square.

``Z`` is a d-vector acting diagonally on the d-dimensional Brownian motion
throughout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import comb
from itertools import combinations_with_replacement

import numpy as np

from .score_model import Adam, Mlp
from .stochastic import TimeGrid, WienerEnsemble, derive_seed

__all__ = [
    "GeneratorFn",
    "TerminalCondition",
    "BasisConfig",
    "BsdeSolution",
    "ShootingConfig",
    "UnderdeterminedRegression",
    "SolverNumericalError",
    "eval_generator",
    "basis_features",
    "least_squares_fit",
    "solve_regression_mc",
    "solve_deep_shooting",
    "forward_replay",
    "export_solution_csv",
]


class UnderdeterminedRegression(ValueError):
    """Fewer Monte Carlo paths than regression features."""


class SolverNumericalError(RuntimeError):
    """A solve produced non-finite intermediate values (integrability violated)."""


@dataclass(frozen=True)
class GeneratorFn:
    """Linear generator ``f(s, z, t) = a(t) * s + z_coef * z + offset``.

    ``score_coef`` may be a constant or a callable schedule ``a(t)`` (the
    generative default is ``a(t) = g(t)^2``, aligning the backward drift
    with the score term of reverse-time sampling).  ``offset`` is an
    additive constant used by closed-form test problems.  The map is
    Lipschitz in ``(s, z)`` with constant ``max(sup |a|, |z_coef|)``.
    """

    score_coef: object = 0.0
    z_coef: float = 0.0
    offset: float = 0.0

    def a(self, t) -> float:
        return float(self.score_coef(t)) if callable(self.score_coef) else float(self.score_coef)

    @property
    def uses_score(self) -> bool:
        return callable(self.score_coef) or float(self.score_coef) != 0.0

    def __call__(self, score, z, t):
        return eval_generator(self, score, z, t)

    @classmethod
    def null(cls) -> "GeneratorFn":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def constant_drift(cls, kappa: float) -> "GeneratorFn":
        return cls(0.0, 0.0, float(kappa))

    @classmethod
    def score_drift(cls, sde, z_coef: float = 0.0) -> "GeneratorFn":
        return cls(lambda t: float(sde.sigma(t)) ** 2, float(z_coef), 0.0)


def eval_generator(gen: GeneratorFn, score, z, t):
    """Evaluate the generator coordinatewise; raises on dimension mismatch."""
    score = np.asarray(score, dtype=float)
    z = np.asarray(z, dtype=float)
    if score.shape != z.shape:
        raise ValueError(f"score shape {score.shape} != z shape {z.shape}")
    out = gen.a(t) * score + gen.z_coef * z + gen.offset
    if not np.all(np.isfinite(out)):
        raise SolverNumericalError("generator produced non-finite values")
    return out


@dataclass(frozen=True)
class TerminalCondition:
    """Either a constant state ``xi`` or a closed-form map of the terminal noise."""

    value: np.ndarray | None = None
    fn: object = None

    @classmethod
    def constant(cls, xi) -> "TerminalCondition":
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if not np.all(np.isfinite(xi)):
            raise ValueError("terminal value must be finite")
        return cls(value=xi, fn=None)

    @classmethod
    def of_terminal_noise(cls, fn) -> "TerminalCondition":
        return cls(value=None, fn=fn)

    @property
    def is_constant(self) -> bool:
        return self.value is not None

    def evaluate(self, w_terminal: np.ndarray) -> np.ndarray:
        """Terminal values for each path given the Brownian state at T."""
        if self.is_constant:
            return np.broadcast_to(self.value, w_terminal.shape).copy()
        return np.asarray(self.fn(w_terminal), dtype=float)


@dataclass(frozen=True)
class BasisConfig:
    """Monomial regression basis: all monomials of w up to total degree ``degree``."""

    degree: int = 2
    ridge: float = 1e-8

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")
        if self.ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")

    def exponents(self, dim: int) -> np.ndarray:
        """Exponent rows, constant term first, then graded lexicographic."""
        rows = [(0,) * dim]
        for total in range(1, self.degree + 1):
            for combo in combinations_with_replacement(range(dim), total):
                e = [0] * dim
                for j in combo:
                    e[j] += 1
                rows.append(tuple(e))
        return np.asarray(rows, dtype=int)

    def feature_count(self, dim: int) -> int:
        return comb(dim + self.degree, self.degree)


def basis_features(w, cfg: BasisConfig) -> np.ndarray:
    """Feature matrix of monomials of ``w``; shape ``(..., feature_count)``."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    exps = cfg.exponents(w.shape[-1])
    # (..., F): product over coordinates of w_j ** e_j
    return np.prod(w[..., None, :] ** exps[None, :, :], axis=-1)


def least_squares_fit(features: np.ndarray, targets: np.ndarray, ridge: float):
    """Ridge-regularized least squares: solve ``(X^T X + ridge I) a = X^T y``.

    Returns ``(coeffs, residual_mse)`` with ``coeffs`` of shape
    ``(features, targets)``.  Raises :class:`UnderdeterminedRegression` when
    there are fewer rows than features and ``ValueError`` on non-finite
    input.
    """
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if not np.all(np.isfinite(features)) or not np.all(np.isfinite(targets)):
        raise ValueError("non-finite regression inputs")
    m, f = features.shape
    if m < f:
        raise UnderdeterminedRegression(f"{m} paths for {f} features")
    gram = features.T @ features + ridge * np.eye(f)
    coeffs = np.linalg.solve(gram, features.T @ targets)
    residual = features @ coeffs - targets
    return coeffs, float(np.mean(residual**2))


def _score_values(score, x, t, horizon):
    """Evaluate the score model, clamping t into the model's valid range."""
    if score is None:
        return np.zeros_like(x)
    t_floor = getattr(score, "t_min", 0.0)
    t_eval = min(max(float(t), t_floor), horizon)
    return np.asarray(score(x, t_eval), dtype=float)


@dataclass
class BsdeSolution:
    """Fitted backward solution: initial state plus per-step (y, z) functions.

    For regression Monte Carlo, ``z_coeffs[k]`` / ``y_coeffs[k]`` hold the
    basis coefficients of the step ``k + 1`` functions (steps 1..n-1).  For
    deep shooting the ``z`` process is the feedback network ``z(t, y)`` and
    the coefficient arrays are ``None``.
    """

    y0: np.ndarray
    y0_se: float
    grid: TimeGrid
    generator: GeneratorFn
    terminal: TerminalCondition
    score: object
    basis: BasisConfig | None
    z_coeffs: np.ndarray | None
    y_coeffs: np.ndarray | None
    control: object = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.y0.shape[-1]

    def z_at(self, step: int, w: np.ndarray, y: np.ndarray) -> np.ndarray:
        """The fitted z function for grid step ``step`` (clamped to 1..n-1).

        Regression solutions are functions of the Brownian state ``w``;
        shooting solutions are feedback functions of ``(t, y)``.
        """
        if self.control is not None:
            return self.control(self.grid.nodes[step], y)
        k = min(max(step, 1), self.grid.steps - 1)
        return basis_features(w, self.basis) @ self.z_coeffs[k - 1]

    def y_at(self, step: int, w: np.ndarray) -> np.ndarray:
        """The fitted y function for grid step ``step`` (regression solutions)."""
        if self.y_coeffs is None:
            raise ValueError("y functions are only fitted by the regression solver")
        k = min(max(step, 1), self.grid.steps - 1)
        return basis_features(w, self.basis) @ self.y_coeffs[k - 1]


def solve_regression_mc(
    score,
    gen: GeneratorFn,
    terminal: TerminalCondition,
    grid: TimeGrid,
    ensemble: WienerEnsemble,
    basis: BasisConfig | None = None,
    center_z_targets: bool = True,
) -> BsdeSolution:
    """Backward regression Monte Carlo solve over a Brownian ensemble.

    Walks ``t = n-1 .. 1``: (i) seed the recursion with the terminal values;
    (ii) fit ``z_t`` by regressing the martingale-increment targets
    ``y_{t+1}(w_{t+1}) * dw_t / dt`` onto the basis at ``w_t``; (iii) fit
    ``y_t`` by regressing ``y_{t+1}(w_{t+1}) + dt * f(score, z_t(w_t))``
    onto the same basis; finally average the step-1 values (plus one
    generator increment at ``t_0``) into the ``Y_0`` estimate.

    ``center_z_targets`` subtracts the fitted conditional mean of
    ``y_{t+1}`` from the z-regression targets before multiplying by the
    Brownian increment.  The conditional expectation is unchanged (the
    increment is mean-zero given ``w_t``) but the Monte Carlo noise shrinks
    drastically; in particular terminal conditions inside the basis span
    recover ``z = 0`` exactly instead of O(1/sqrt(M dt)) noise.  Set it to
    False for the plain uncentered targets.
    """
    if basis is None:
        basis = BasisConfig()
    n = grid.steps
    if n < 2:
        raise ValueError("regression solve needs at least 2 time steps")
    if ensemble.grid != grid:
        raise ValueError("ensemble was sampled on a different grid")
    m, d = ensemble.paths, ensemble.dim
    n_features = basis.feature_count(d)
    if n_features > m // 4:
        raise UnderdeterminedRegression(
            f"{n_features} features need at least {4 * n_features} paths, got {m}"
        )
    dt = grid.dt
    nodes = grid.nodes
    w = ensemble.cumulative
    dw = ensemble.increments

    z_coeffs = np.empty((n - 1, n_features, d))
    y_coeffs = np.empty((n - 1, n_features, d))
    z_residuals = np.empty(n - 1)
    y_residuals = np.empty(n - 1)
    gen_sq_mean = np.empty(n - 1)

    y_next = terminal.evaluate(w[:, n, :])  # y_n values on the ensemble
    if not np.all(np.isfinite(y_next)):
        raise SolverNumericalError("terminal condition produced non-finite values")

    z_vals = None
    for k in range(n - 1, 0, -1):
        feats = basis_features(w[:, k, :], basis)
        z_targets = y_next * dw[:, k, :] / dt
        if center_z_targets:
            mean_coeffs, _ = least_squares_fit(feats, y_next, basis.ridge)
            z_targets = (y_next - feats @ mean_coeffs) * dw[:, k, :] / dt
        z_c, z_res = least_squares_fit(feats, z_targets, basis.ridge)
        z_vals = feats @ z_c

        s_vals = _score_values(score, y_next, nodes[k], grid.horizon)
        f_vals = eval_generator(gen, s_vals, z_vals, nodes[k])
        y_targets = y_next + dt * f_vals
        y_c, y_res = least_squares_fit(feats, y_targets, basis.ridge)
        y_next = feats @ y_c
        if not np.all(np.isfinite(y_next)):
            raise SolverNumericalError(f"non-finite y values at step {k}")

        z_coeffs[k - 1] = z_c
        y_coeffs[k - 1] = y_c
        z_residuals[k - 1] = z_res
        y_residuals[k - 1] = y_res
        gen_sq_mean[k - 1] = float(np.mean(np.sum(f_vals**2, axis=-1)))

    # y_next now holds y_1 evaluated at w_1; z_vals the step-1 z values
    s_vals = _score_values(score, y_next, nodes[0], grid.horizon)
    f_vals = eval_generator(gen, s_vals, z_vals, nodes[0])
    contributions = y_next + dt * f_vals
    y0 = contributions.mean(axis=0)
    y0_se = float(np.mean(contributions.std(axis=0, ddof=1)) / np.sqrt(m))
    if not np.all(np.isfinite(y0)):
        raise SolverNumericalError("non-finite initial-state estimate")

    return BsdeSolution(
        y0=y0,
        y0_se=y0_se,
        grid=grid,
        generator=gen,
        terminal=terminal,
        score=score,
        basis=basis,
        z_coeffs=z_coeffs,
        y_coeffs=y_coeffs,
        diagnostics={
            "z_residuals": z_residuals,
            "y_residuals": y_residuals,
            "generator_sq_mean": gen_sq_mean,
            "paths": m,
            "ensemble_seed": ensemble.seed,
        },
    )


@dataclass(frozen=True)
class ShootingConfig:
    steps: int = 800
    learning_rate: float = 0.05
    batch_paths: int = 256
    hidden: tuple = (32, 32)
    seed: int = 0
    loss_tolerance: float = 1e-2


class _ControlNet:
    """Feedback control ``z(t, y)`` built on the shared MLP machinery."""

    def __init__(self, dim: int, hidden: tuple, horizon: float, seed: int):
        rng = np.random.Generator(np.random.Philox(key=np.array(
            [derive_seed(seed, 0x53484F4F54), 0], dtype=np.uint64)))
        self.dim = dim
        self.horizon = horizon
        self.mlp = Mlp((dim + 1, *hidden, dim), rng, spectral_norm=False)
        # start from z ~ 0 so the initial dynamics are drift-only
        self.mlp.layers[-1].w[:] = 0.0
        self.mlp.layers[-1].b[:] = 0.0

    def features(self, t: float, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        t_col = np.full((y.shape[0], 1), float(t) / self.horizon)
        return np.hstack([y, t_col])

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = self.mlp.forward(self.features(t, np.atleast_2d(y)))
        return out[0] if y.ndim == 1 else out


def solve_deep_shooting(
    score,
    gen: GeneratorFn,
    terminal: TerminalCondition,
    grid: TimeGrid,
    ensemble: WienerEnsemble,
    config: ShootingConfig | None = None,
) -> BsdeSolution:
    """Shooting solver: optimize ``(y0, z(t, y))`` to hit the terminal value.

    Simulates ``Y_{k+1} = Y_k - f(s(Y_k), z_k) dt + z_k dw_k`` with
    ``z_k = z(t_k, Y_k)`` from a small feedback network, and minimizes the
    mean squared terminal miss ``|Y_n - xi|^2`` over the ensemble with Adam,
    backpropagating through the whole unrolled trajectory.  Zero steps
    return the initialization (``y0 = xi``, ``z ~ 0``) with its loss.

    Non-convergence (final loss above ``config.loss_tolerance``) is reported
    through ``diagnostics['converged']``, never silently accepted.
    """
    if config is None:
        config = ShootingConfig()
    if not terminal.is_constant:
        raise ValueError("deep shooting supports constant terminal conditions only")
    if ensemble.grid != grid:
        raise ValueError("ensemble was sampled on a different grid")
    m, d = ensemble.paths, ensemble.dim
    xi = terminal.value
    if xi.shape[-1] != d:
        raise ValueError(f"terminal dimension {xi.shape[-1]} != ensemble dimension {d}")
    n = grid.steps
    dt = grid.dt
    nodes = grid.nodes

    control = _ControlNet(d, config.hidden, grid.horizon, config.seed)
    y0 = xi.astype(float).copy()
    adam = Adam([y0] + control.mlp.parameters(), config.learning_rate)

    def run_batch(idx: np.ndarray, with_grad: bool):
        batch = idx.size
        dw = ensemble.increments[idx]
        y = np.broadcast_to(y0, (batch, d)).copy()
        z_caches, s_caches, dws = [], [], []
        for k in range(n):
            z_out, z_cache = control.mlp.forward_cached(control.features(nodes[k], y))
            if gen.uses_score and score is not None:
                s_cache = score.forward_cached(y, min(max(nodes[k], score.t_min), grid.horizon))
                s_out = s_cache[0]
            else:
                s_cache = None
                s_out = np.zeros_like(y)
            f_vals = gen.a(nodes[k]) * s_out + gen.z_coef * z_out + gen.offset
            y_next = y - f_vals * dt + z_out * dw[:, k, :]
            if with_grad:
                z_caches.append((z_cache, y))
                s_caches.append(s_cache)
                dws.append(dw[:, k, :])
            y = y_next
        miss = y - xi
        loss = float(np.mean(miss**2))
        if not with_grad:
            return loss, None, None
        lam = 2.0 * miss / miss.size
        grad_control = [np.zeros_like(p) for p in control.mlp.parameters()]
        for k in range(n - 1, -1, -1):
            z_cache, _ = z_caches[k]
            g_z = lam * dws[k] - gen.z_coef * dt * lam
            grads_k, dinput_z = control.mlp.backward(z_cache, g_z)
            for acc, g in zip(grad_control, grads_k):
                acc += g
            dy = dinput_z[:, :d]
            if s_caches[k] is not None:
                _, dinput_s = score.mlp.backward(s_caches[k][1], -gen.a(nodes[k]) * dt * lam)
                dy = dy + dinput_s[:, :d]
            lam = lam + dy
        grad_y0 = lam.sum(axis=0)
        return loss, grad_y0, grad_control

    trace = []
    batch = min(config.batch_paths, m)
    for step in range(config.steps):
        start = (step * batch) % m
        idx = np.arange(start, start + batch) % m
        loss, grad_y0, grad_control = run_batch(idx, with_grad=True)
        if not np.isfinite(loss):
            raise SolverNumericalError(f"shooting loss diverged at step {step}")
        trace.append(loss)
        adam.update([y0] + control.mlp.parameters(), [grad_y0] + grad_control)

    final_loss, _, _ = run_batch(np.arange(m), with_grad=False)
    converged = final_loss <= config.loss_tolerance

    return BsdeSolution(
        y0=y0.copy(),
        y0_se=float(np.sqrt(final_loss / m)),
        grid=grid,
        generator=gen,
        terminal=terminal,
        score=score,
        basis=None,
        z_coeffs=None,
        y_coeffs=None,
        control=control,
        diagnostics={
            "shooting_loss": final_loss,
            "loss_trace": np.asarray(trace),
            "converged": bool(converged),
            "paths": m,
            "ensemble_seed": ensemble.seed,
        },
    )


def forward_replay(sol: BsdeSolution, wiener: WienerEnsemble, scale_z: float = 1.0, start=None):
    """Integrate the solved dynamics forward from ``Y_0`` along given paths.

    Steps ``Y_{k+1} = Y_k - f(s(Y_k, t_k), z_k) dt + z_k dw_k`` with
    ``z_k = scale_z * z_at(k, w_k, Y_k)``; the gain multiplies the z process
    wherever it appears (generator argument and diffusion term alike).
    ``start`` overrides the initial state (it broadcasts over paths).
    """
    from .sde import Path  # local import to avoid a cycle at module load

    grid = sol.grid
    if wiener.grid != grid:
        raise ValueError("replay ensemble was sampled on a different grid")
    if wiener.dim != sol.dim:
        raise ValueError(f"ensemble dimension {wiener.dim} != solution dimension {sol.dim}")
    n = grid.steps
    dt = grid.dt
    nodes = grid.nodes
    start = sol.y0 if start is None else np.asarray(start, dtype=float)

    states = np.empty((wiener.paths, n + 1, sol.dim))
    y = np.broadcast_to(start, (wiener.paths, sol.dim)).copy()
    states[:, 0, :] = y
    for k in range(n):
        z = scale_z * sol.z_at(k, wiener.cumulative[:, k, :], y)
        s_vals = _score_values(sol.score, y, nodes[k], grid.horizon)
        f_vals = eval_generator(sol.generator, s_vals, z, nodes[k])
        y = y - f_vals * dt + z * wiener.increments[:, k, :]
        states[:, k + 1, :] = y
    return Path(times=nodes.copy(), states=states)


def export_solution_csv(sol: BsdeSolution, out_file, meta_file=None) -> None:
    """Write fitted coefficients as CSV plus an optional flat summary record."""
    if sol.z_coeffs is None:
        raise ValueError("only regression solutions carry exportable coefficients")
    nodes = sol.grid.nodes
    with open(out_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t", "coef_index", "dim", "z_coef", "y_coef"])
        for k in range(1, sol.grid.steps):
            for c in range(sol.z_coeffs.shape[1]):
                for j in range(sol.dim):
                    writer.writerow([
                        k,
                        repr(float(nodes[k])),
                        c,
                        j,
                        repr(float(sol.z_coeffs[k - 1, c, j])),
                        repr(float(sol.y_coeffs[k - 1, c, j])),
                    ])
    if meta_file is not None:
        lines = {
            "y0": " ".join(repr(float(v)) for v in sol.y0),
            "y0_se": repr(sol.y0_se),
            "paths": str(sol.diagnostics.get("paths", "")),
            "ensemble_seed": str(sol.diagnostics.get("ensemble_seed", "")),
            "steps": str(sol.grid.steps),
            "horizon": repr(float(sol.grid.horizon)),
            "basis_degree": str(sol.basis.degree),
            "ridge": repr(float(sol.basis.ridge)),
            "max_z_residual": repr(float(np.max(sol.diagnostics["z_residuals"]))),
            "max_y_residual": repr(float(np.max(sol.diagnostics["y_residuals"]))),
            "max_generator_sq_mean": repr(float(np.max(sol.diagnostics["generator_sq_mean"]))),
        }
        with open(meta_file, "w") as fh:
            for key in sorted(lines):
                fh.write(f"{key} = {lines[key]}\n")
