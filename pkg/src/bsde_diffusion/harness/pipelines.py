"""End-to-end experiment pipelines: the work behind each CLI subcommand.

Each runner takes a typed option mapping (see the ``*_SCHEMA`` tables) plus
an output directory, writes CSV artifacts, an SVG figure where the task has
something to draw, and a ``run.meta`` provenance record, and returns a
process exit status: 0 on success, 3 when a numerical check failed.  Config
errors are raised as :class:`ConfigError` and mapped to status 2 by the CLI.

With a fixed seed and config every CSV artifact is byte-identical across
invocations and worker counts.
"""

from __future__ import annotations

import numpy as np

from .. import __version__
from ..bsde import (
    BasisConfig,
    GeneratorFn,
    ShootingConfig,
    SolverNumericalError,
    TerminalCondition,
    export_solution_csv,
    forward_replay,
    solve_deep_shooting,
    solve_regression_mc,
)
from ..generation import ControlParams, export_uq_report, joint_control, quantify_uncertainty
from ..score_model import ScoreNetwork, TrainConfig, load_checkpoint, save_checkpoint, train_score
from ..sde import SdeSpec, export_paths_csv, sample_reverse
from ..stochastic import make_time_grid, sample_wiener_ensemble
from .analytic import AnalyticDistribution, analytic_perturbed_score
from .benchmark import BenchmarkConfig, run_lipschitz_benchmark
from .config import ConfigError, parse_bool, parse_floats
from .reporting import config_hash, write_csv, write_kv

__all__ = [
    "TRAIN_SCHEMA", "SAMPLE_SCHEMA", "INVERT_SCHEMA", "CONTROL_SCHEMA",
    "UQ_SCHEMA", "BENCH_SCHEMA", "SOLVE_SCHEMA",
    "run_train", "run_sample", "run_invert", "run_control", "run_uq",
    "run_bench", "run_solve_bsde", "run_pipeline_demo",
]

_TARGET_KEYS = {
    "target": (str, "gaussian"),
    "mean": (parse_floats, (0.0,)),
    "variance": (float, 1.0),
    "mixture_weights": (parse_floats, (0.5, 0.5)),
    "mixture_means": (parse_floats, (-1.0, 1.0)),
}

_SDE_KEYS = {
    "sigma_min": (float, 0.8),
    "sigma_max": (float, 2.5),
    "horizon": (float, 1.0),
}

_TRAIN_KEYS = {
    "steps": (int, 8000),
    "batch_size": (int, 512),
    "learning_rate": (float, 3e-3),
    "weighted_loss": (parse_bool, True),
    "spectral_norm": (parse_bool, False),
    "t_min": (float, 0.01),
}

_MODEL_KEYS = {
    "checkpoint": (str, ""),
    "train_steps": (int, 8000),
}

_GEN_KEYS = {
    "generator": (str, "g2"),
    "kappa": (float, 0.0),
    "z_coef": (float, 0.0),
}

TRAIN_SCHEMA = {
    **_TARGET_KEYS, **_SDE_KEYS, **_TRAIN_KEYS,
    "seed": (int, 0),
    "workers": (int, 1),
}

SAMPLE_SCHEMA = {
    **_TARGET_KEYS,
    "checkpoint": (str, ""),
    "paths": (int, 4096),
    "steps": (int, 200),
    "t_floor": (float, 0.01),
    "probability_flow": (parse_bool, False),
    "seed": (int, 0),
    "workers": (int, 1),
}

INVERT_SCHEMA = {
    **_TARGET_KEYS, **_SDE_KEYS, **_TRAIN_KEYS, **_MODEL_KEYS, **_GEN_KEYS,
    "xi": (parse_floats, (2.0,)),
    "paths": (int, 8192),
    "steps": (int, 64),
    "degree": (int, 2),
    "ridge": (float, 1e-8),
    "roundtrip_tol": (float, 0.05),
    "seed": (int, 0),
    "workers": (int, 1),
}

CONTROL_SCHEMA = {
    **INVERT_SCHEMA,
    "lambda_y_grid": (parse_floats, (0.0, 0.1, 0.5, 1.0)),
    "lambda_z_grid": (parse_floats, (1.0, 1.5, 2.0)),
    "control_samples": (int, 256),
}

UQ_SCHEMA = {
    **_TARGET_KEYS, **_SDE_KEYS, **_TRAIN_KEYS, **_MODEL_KEYS, **_GEN_KEYS,
    "xi": (parse_floats, (2.0,)),
    "paths": (int, 2048),
    "steps": (int, 50),
    "repetitions": (int, 8),
    "degree": (int, 2),
    "ridge": (float, 1e-8),
    "max_y0_std": (float, 0.0),  # 0 disables the bound check
    "seed": (int, 0),
    "workers": (int, 1),
}

BENCH_SCHEMA = {
    "seeds_per_arm": (int, 10),
    "steps": (int, 1500),
    "batch_size": (int, 256),
    "learning_rate": (float, 3e-3),
    "weighted_loss": (parse_bool, True),
    "t_min": (float, 0.01),
    "sigma_min": (float, 2.0),
    "sigma_max": (float, 4.0),
    "seed": (int, 0),
    "workers": (int, 1),
}

SOLVE_SCHEMA = {
    **_SDE_KEYS, **_GEN_KEYS,
    "problem": (str, "constant"),  # constant | linear | wiener | generative
    "checkpoint": (str, ""),
    "xi": (parse_floats, (2.0,)),
    "kappa": (float, 0.5),
    "paths": (int, 4096),
    "steps": (int, 32),
    "degree": (int, 2),
    "ridge": (float, 1e-8),
    "solver": (str, "regression"),  # regression | shooting
    "shooting_steps": (int, 600),
    "shooting_lr": (float, 0.05),
    "seed": (int, 0),
    "workers": (int, 1),
}


def _target_from(opts) -> AnalyticDistribution:
    kind = opts["target"]
    if kind == "gaussian":
        return AnalyticDistribution.gaussian(list(opts["mean"]), opts["variance"])
    if kind == "mixture":
        means = np.asarray(opts["mixture_means"], dtype=float)[:, None]
        return AnalyticDistribution.mixture(list(opts["mixture_weights"]), means, opts["variance"])
    raise ConfigError(f"unknown target {kind!r} (expected gaussian or mixture)")


def _sde_from(opts) -> SdeSpec:
    return SdeSpec(opts["sigma_min"], opts["sigma_max"], opts["horizon"])


def _sde_from_network(net: ScoreNetwork) -> SdeSpec:
    sigma_min = float(np.exp(net.log_sigma_min))
    return SdeSpec(sigma_min, sigma_min * float(np.exp(net.log_sigma_ratio)), net.horizon)


def _generator_from(opts, sde) -> GeneratorFn:
    kind = opts["generator"]
    if kind == "null":
        return GeneratorFn.null()
    if kind == "g2":
        return GeneratorFn.score_drift(sde, opts["z_coef"])
    if kind == "const":
        return GeneratorFn(0.0, opts["z_coef"], opts["kappa"])
    raise ConfigError(f"unknown generator {kind!r} (expected null, g2, or const)")


def _standard_validation(dist, sde):
    base = np.linspace(-3.0, 3.0, 61)
    grids = np.meshgrid(*([base] * dist.dim), indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    xs, ts, targets = [], [], []
    for t in (0.1, 0.5, 1.0):
        xs.append(pts)
        ts.append(np.full(pts.shape[0], t))
        targets.append(analytic_perturbed_score(dist, sde, pts, t))
    return np.vstack(xs), np.concatenate(ts), np.vstack(targets)


def _prepare_model(opts, out_dir):
    """Load the configured checkpoint or train a model inline."""
    dist = _target_from(opts)
    if opts["checkpoint"]:
        net = load_checkpoint(opts["checkpoint"])
        if net.dim != dist.dim:
            raise ConfigError(
                f"checkpoint dimension {net.dim} != target dimension {dist.dim}"
            )
        return net, _sde_from_network(net), dist, None
    if opts["train_steps"] <= 0:
        raise ConfigError("no checkpoint given and train_steps <= 0: nothing to run")
    sde = _sde_from(opts)
    net = ScoreNetwork.create(dist.dim, sde, spectral_norm=opts["spectral_norm"],
                              t_min=opts["t_min"], seed=opts["seed"])
    cfg = TrainConfig(
        batch_size=opts["batch_size"],
        learning_rate=opts["learning_rate"],
        steps=opts["train_steps"],
        weight_by_kernel_variance=opts["weighted_loss"],
        t_min=opts["t_min"],
        seed=opts["seed"],
    )
    report = train_score(net, dist.sample, sde, cfg, validation=_standard_validation(dist, sde))
    if report.diverged:
        raise SolverNumericalError("inline training diverged")
    save_checkpoint(net, out_dir / "model.ckpt")
    return net, sde, dist, report


def _meta(command: str, opts: dict, extra: dict) -> dict:
    import numpy
    import scipy

    # workers only changes execution chunking, never results: keep it out
    # of the experiment identity
    hashed = {k: v for k, v in opts.items() if k != "workers"}
    meta = {
        "command": command,
        "config_hash": config_hash(hashed),
        "package_version": __version__,
        "numpy_version": numpy.__version__,
        "scipy_version": scipy.__version__,
    }
    meta.update(extra)
    return meta


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "bsde-diffusion"
    import matplotlib.pyplot as plt

    return plt


def _save_svg(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def run_train(opts, out_dir) -> int:
    dist = _target_from(opts)
    sde = _sde_from(opts)
    net = ScoreNetwork.create(dist.dim, sde, spectral_norm=opts["spectral_norm"],
                              t_min=opts["t_min"], seed=opts["seed"])
    cfg = TrainConfig(
        batch_size=opts["batch_size"],
        learning_rate=opts["learning_rate"],
        steps=opts["steps"],
        weight_by_kernel_variance=opts["weighted_loss"],
        t_min=opts["t_min"],
        seed=opts["seed"],
    )
    report = train_score(net, dist.sample, sde, cfg, validation=_standard_validation(dist, sde))
    save_checkpoint(net, out_dir / "model.ckpt")
    write_csv(out_dir / "training.csv", ["step", "loss"],
              [(i, float(v)) for i, v in enumerate(report.loss_trace)])
    write_kv(out_dir / "run.meta", _meta("train", opts, {
        "seed": opts["seed"],
        "steps_run": report.steps_run,
        "diverged": str(report.diverged).lower(),
        "validation_mse": report.validation_mse,
        "validation_max_error": report.validation_max_error,
        "lipschitz_bound": report.lipschitz_bound,
        "stream_fingerprint": report.stream_fingerprint,
    }))
    print(f"trained {report.steps_run} steps: validation max error "
          f"{report.validation_max_error:.4f}, certified bound {report.lipschitz_bound:.3f}")
    return 3 if report.diverged else 0


def run_sample(opts, out_dir) -> int:
    if not opts["checkpoint"]:
        raise ConfigError("sample requires checkpoint = <path to model.ckpt>")
    net = load_checkpoint(opts["checkpoint"])
    sde = _sde_from_network(net)
    grid = make_time_grid(sde.horizon, opts["steps"])
    ensemble = sample_wiener_ensemble(grid, opts["paths"], net.dim, opts["seed"],
                                      workers=opts["workers"])
    rng = np.random.Generator(np.random.Philox(key=np.array([opts["seed"], 0xA11CE], dtype=np.uint64)))
    prior_std = float(sde.kernel_std(sde.horizon))
    x_init = prior_std * rng.standard_normal((opts["paths"], net.dim))
    path = sample_reverse(sde, net, x_init, grid, ensemble,
                          t_floor=opts["t_floor"], probability_flow=opts["probability_flow"])
    terminals = path.terminal
    if not np.all(np.isfinite(terminals)):
        return 3
    write_csv(out_dir / "samples.csv",
              ["path_id"] + [f"x_{j + 1}" for j in range(net.dim)],
              [(m, *[float(v) for v in terminals[m]]) for m in range(terminals.shape[0])])
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    if net.dim == 1:
        ax.hist(terminals[:, 0], bins=60, density=True, alpha=0.7)
    else:
        ax.scatter(terminals[:, 0], terminals[:, 1], s=4, alpha=0.4)
    ax.set_title(f"reverse-time samples at t={float(path.times[-1]):.3f}")
    _save_svg(fig, out_dir / "samples.svg")
    plt.close(fig)
    write_kv(out_dir / "run.meta", _meta("sample", opts, {
        "seed": opts["seed"],
        "stop_time": float(path.times[-1]),
        "sample_mean": float(terminals.mean()),
        "sample_var": float(terminals.var(ddof=1)),
    }))
    print(f"{terminals.shape[0]} samples at t={float(path.times[-1]):.3f}: "
          f"mean {terminals.mean():+.4f}, var {terminals.var(ddof=1):.4f}")
    return 0


def _solve_for(opts, net, sde, out_dir):
    xi = np.asarray(opts["xi"], dtype=float)
    gen = _generator_from(opts, sde)
    grid = make_time_grid(sde.horizon, opts["steps"])
    basis = BasisConfig(opts["degree"], opts["ridge"])
    ensemble = sample_wiener_ensemble(grid, opts["paths"], xi.shape[-1], opts["seed"],
                                      workers=opts["workers"])
    sol = solve_regression_mc(net, gen, TerminalCondition.constant(xi), grid, ensemble, basis)
    return sol, ensemble, xi


def run_invert(opts, out_dir) -> int:
    net, sde, dist, _ = _prepare_model(opts, out_dir)
    sol, ensemble, xi = _solve_for(opts, net, sde, out_dir)
    replay = forward_replay(sol, ensemble)
    terminals = replay.terminal
    rel_err = float(np.linalg.norm(terminals.mean(axis=0) - xi) / np.linalg.norm(xi))

    export_solution_csv(sol, out_dir / "solution.csv", out_dir / "solution.meta")
    write_csv(out_dir / "roundtrip.csv",
              ["path_id"] + [f"x_{j + 1}" for j in range(sol.dim)],
              [(m, *[float(v) for v in terminals[m]]) for m in range(terminals.shape[0])])

    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    mean_path = replay.states.mean(axis=0)
    ax.plot(replay.times, mean_path[:, 0], label="replayed mean")
    ax.axhline(float(xi[0]), color="k", linestyle="--", label="target")
    ax.axhline(float(sol.y0[0]), color="g", linestyle=":", label="initial encoding")
    ax.set_xlabel("t")
    ax.legend()
    ax.set_title(f"inversion round trip (rel err {rel_err:.3%})")
    _save_svg(fig, out_dir / "inversion.svg")
    plt.close(fig)

    write_kv(out_dir / "run.meta", _meta("invert", opts, {
        "seed": opts["seed"],
        "y0": float(sol.y0[0]),
        "y0_se": sol.y0_se,
        "roundtrip_rel_err": rel_err,
        "roundtrip_tol": opts["roundtrip_tol"],
    }))
    print(f"inverted xi={xi.tolist()} -> y0={sol.y0.tolist()} "
          f"(round-trip relative error {rel_err:.3%})")
    return 0 if rel_err <= opts["roundtrip_tol"] else 3


def run_control(opts, out_dir) -> int:
    net, sde, dist, _ = _prepare_model(opts, out_dir)
    sol, _, xi = _solve_for(opts, net, sde, out_dir)
    r = opts["control_samples"]
    seed = opts["seed"]

    rows = []
    terminals_by_combo = {}
    for ly in opts["lambda_y_grid"]:
        for lz in opts["lambda_z_grid"]:
            terms = joint_control(sol, ControlParams(ly, lz, r, seed))
            terminals_by_combo[(ly, lz)] = terms
            dispersion = float(terms.std(axis=0, ddof=1).mean())
            rows.append((ly, lz, float(terms.mean()), dispersion))
            write_csv(out_dir / f"control_y{ly:g}_z{lz:g}.csv",
                      ["path_id"] + [f"x_{j + 1}" for j in range(sol.dim)],
                      [(m, *[float(v) for v in terms[m]]) for m in range(terms.shape[0])])
    write_csv(out_dir / "dispersion.csv",
              ["lambda_y", "lambda_z", "terminal_mean", "terminal_dispersion"], rows)

    # monotone dispersion along each axis with the other held neutral
    ly_grid, lz_grid = opts["lambda_y_grid"], opts["lambda_z_grid"]
    neutral_z = lz_grid[0]
    neutral_y = ly_grid[0]
    disp_y = [float(terminals_by_combo[(ly, neutral_z)].std(axis=0, ddof=1).mean()) for ly in ly_grid]
    disp_z = [float(terminals_by_combo[(neutral_y, lz)].std(axis=0, ddof=1).mean()) for lz in lz_grid]
    monotone = bool(np.all(np.diff(disp_y) >= -1e-12) and np.all(np.diff(disp_z) >= -1e-12))

    plt = _figure()
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].plot(ly_grid, disp_y, "o-")
    axes[0].set_xlabel("neighborhood gain")
    axes[0].set_ylabel("terminal dispersion")
    axes[1].plot(lz_grid, disp_z, "o-")
    axes[1].set_xlabel("measure-change gain")
    fig.suptitle("controllable generation: dispersion response")
    _save_svg(fig, out_dir / "control.svg")
    plt.close(fig)

    write_kv(out_dir / "run.meta", _meta("control", opts, {
        "seed": seed,
        "y0": float(sol.y0[0]),
        "dispersion_monotone": str(monotone).lower(),
    }))
    print(f"control sweep over {len(rows)} gain combinations "
          f"(dispersion monotone per axis: {monotone})")
    return 0 if monotone else 3


def run_uq(opts, out_dir) -> int:
    gen_kind = opts["generator"]
    if gen_kind == "g2":
        net, sde, dist, _ = _prepare_model(opts, out_dir)
    else:
        net, sde = None, _sde_from(opts)
    gen = _generator_from(opts, sde)
    grid = make_time_grid(sde.horizon, opts["steps"])
    report = quantify_uncertainty(opts["xi"], net, gen, grid, opts["paths"],
                                  opts["repetitions"], opts["seed"],
                                  BasisConfig(opts["degree"], opts["ridge"]))
    export_uq_report(report, out_dir / "uq.meta", out_dir / "uq_samples.csv")

    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    reps = np.arange(report.repetitions)
    ax.errorbar(reps, report.y0_samples[:, 0], fmt="o", label="initial encodings")
    ax.axhline(float(report.y0_mean[0]), color="k", linestyle="--", label="mean")
    ax.set_xlabel("repetition")
    ax.legend()
    ax.set_title(f"initial-state spread: std={float(report.y0_std[0]):.2e}")
    _save_svg(fig, out_dir / "uq.svg")
    plt.close(fig)

    write_kv(out_dir / "run.meta", _meta("uq", opts, {
        "seed": opts["seed"],
        "valid": str(report.valid).lower(),
        "y0_std": float(report.y0_std.mean()),
    }))
    print(f"{report.repetitions} repetitions: y0 std {float(report.y0_std.mean()):.3e} "
          f"(valid: {report.valid})")
    if not report.valid:
        return 3
    if opts["max_y0_std"] > 0 and float(report.y0_std.mean()) > opts["max_y0_std"]:
        return 3
    return 0


def run_bench(opts, out_dir) -> int:
    config = BenchmarkConfig(
        seeds_per_arm=opts["seeds_per_arm"],
        steps=opts["steps"],
        batch_size=opts["batch_size"],
        learning_rate=opts["learning_rate"],
        weight_by_kernel_variance=opts["weighted_loss"],
        t_min=opts["t_min"],
        sigma_min=opts["sigma_min"],
        sigma_max=opts["sigma_max"],
        base_seed=opts["seed"],
    )
    table = run_lipschitz_benchmark(config)
    table.to_csv(out_dir / "benchmark.csv")
    summary = table.summary()
    write_kv(out_dir / "benchmark.meta", summary)
    write_kv(out_dir / "run.meta", _meta("bench-lipschitz", opts, {
        "seed": opts["seed"], **summary,
    }))
    test_note = ""
    if table.stats is not None:
        test_note = f" (U={table.stats.u:g}, p={table.stats.p_value:.2e}, {table.stats.method})"
    print(f"benchmark: {len(table.runs)} runs in {table.total_time:.0f}s; "
          f"lipschitz mse {summary['lipschitz_mean_mse']:.4f} vs "
          f"unconstrained {summary['unconstrained_mean_mse']:.4f}; "
          f"lower arm: {summary['lower_mse_arm']}{test_note}")
    usable = [r for r in table.runs if not r.diverged]
    return 0 if usable and table.stats is not None else 3


def run_solve_bsde(opts, out_dir) -> int:
    sde = _sde_from(opts)
    problem = opts["problem"]
    xi = np.asarray(opts["xi"], dtype=float)
    net = None
    expected = None
    if problem == "constant":
        gen = GeneratorFn.null()
        terminal = TerminalCondition.constant(xi)
        expected = ("y0", xi, 1e-6)
    elif problem == "linear":
        gen = GeneratorFn.constant_drift(opts["kappa"])
        terminal = TerminalCondition.constant(xi)
        expected = ("y0", xi + opts["kappa"] * sde.horizon, 1e-4)
    elif problem == "wiener":
        if xi.shape[-1] != 1:
            raise ConfigError("the wiener oracle problem is one-dimensional")
        gen = GeneratorFn.null()
        terminal = TerminalCondition.of_terminal_noise(lambda w: w)
        expected = ("y0", np.zeros(1), 4.0 * np.sqrt(sde.horizon / opts["paths"]))
    elif problem == "generative":
        if not opts["checkpoint"]:
            raise ConfigError("problem = generative requires checkpoint = <path>")
        net = load_checkpoint(opts["checkpoint"])
        sde = _sde_from_network(net)
        gen = _generator_from(opts, sde)
        terminal = TerminalCondition.constant(xi)
    else:
        raise ConfigError(f"unknown problem {problem!r}")

    grid = make_time_grid(sde.horizon, opts["steps"])
    ensemble = sample_wiener_ensemble(grid, opts["paths"], xi.shape[-1], opts["seed"],
                                      workers=opts["workers"])
    if opts["solver"] == "regression":
        sol = solve_regression_mc(net, gen, terminal, grid, ensemble,
                                  BasisConfig(opts["degree"], opts["ridge"]))
        export_solution_csv(sol, out_dir / "solution.csv", out_dir / "solution.meta")
        extra = {"solver": "regression",
                 "max_z_residual": float(np.max(sol.diagnostics["z_residuals"]))}
    elif opts["solver"] == "shooting":
        if not terminal.is_constant:
            raise ConfigError("the shooting solver needs a constant terminal condition")
        sol = solve_deep_shooting(net, gen, terminal, grid, ensemble,
                                  ShootingConfig(steps=opts["shooting_steps"],
                                                 learning_rate=opts["shooting_lr"],
                                                 seed=opts["seed"]))
        extra = {"solver": "shooting",
                 "shooting_loss": sol.diagnostics["shooting_loss"],
                 "converged": str(sol.diagnostics["converged"]).lower()}
        write_csv(out_dir / "shooting_loss.csv", ["step", "loss"],
                  [(i, float(v)) for i, v in enumerate(sol.diagnostics["loss_trace"])])
    else:
        raise ConfigError(f"unknown solver {opts['solver']!r}")

    status = 0
    check = ""
    if expected is not None:
        _, target, tol = expected
        miss = float(np.max(np.abs(sol.y0 - target)))
        check = f"|y0 - expected| = {miss:.3e} (tol {tol:.1e})"
        if miss > tol:
            status = 3
    if opts["solver"] == "shooting" and not sol.diagnostics["converged"]:
        status = 3

    write_kv(out_dir / "run.meta", _meta("solve-bsde", opts, {
        "seed": opts["seed"],
        "problem": problem,
        "y0": " ".join(repr(float(v)) for v in sol.y0),
        "y0_se": sol.y0_se,
        "oracle_check": check or "none",
        **extra,
    }))
    print(f"solved {problem}: y0 = {sol.y0.tolist()}" + (f"; {check}" if check else ""))
    return status


_PIPELINES = {"inversion": (INVERT_SCHEMA, run_invert),
              "control": (CONTROL_SCHEMA, run_control),
              "uq": (UQ_SCHEMA, run_uq)}


def run_pipeline_demo(task: str, opts: dict, out_dir) -> int:
    """Run one of the named application pipelines end to end.

    Returns 0 only when the task's own acceptance check passed (round-trip
    tolerance, dispersion monotonicity, or a valid uncertainty report).
    """
    if task not in _PIPELINES:
        raise ConfigError(f"unknown pipeline task {task!r}; expected one of {sorted(_PIPELINES)}")
    _, runner = _PIPELINES[task]
    return runner(opts, out_dir)
