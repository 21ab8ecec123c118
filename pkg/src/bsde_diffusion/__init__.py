"""BSDE-driven score diffusion on analytic targets.

Building blocks: seedable Brownian ensembles (:mod:`stochastic`), the
variance-exploding forward/reverse SDE pair (:mod:`sde`), a Lipschitz-
certifiable score network with manual backprop (:mod:`score_model`), the
backward-equation solvers and replay (:mod:`bsde`), the application layer
for inversion / controllable generation / uncertainty (:mod:`generation`),
and the experiment harness with analytic oracles, rank statistics, the
normalization benchmark, and the command line (:mod:`harness`).
"""

from .stochastic import (
    TimeGrid,
    WienerEnsemble,
    make_time_grid,
    sample_wiener_ensemble,
    zero_wiener_ensemble,
    derive_seed,
    dump_ensemble,
    load_ensemble,
)
from .sde import SdeSpec, Path, perturbation_kernel, simulate_forward, sample_reverse
from .score_model import (
    ScoreNetwork,
    TrainConfig,
    TrainingReport,
    TrainingDiverged,
    power_spectral_norm,
    effective_weights,
    lipschitz_bound,
    score_forward,
    dsm_loss_and_grad,
    train_score,
    save_checkpoint,
    load_checkpoint,
)
from .bsde import (
    GeneratorFn,
    TerminalCondition,
    BasisConfig,
    BsdeSolution,
    ShootingConfig,
    UnderdeterminedRegression,
    SolverNumericalError,
    eval_generator,
    basis_features,
    least_squares_fit,
    solve_regression_mc,
    solve_deep_shooting,
    forward_replay,
    export_solution_csv,
)
from .generation import (
    ControlParams,
    UqReport,
    invert,
    neighborhood_sample,
    girsanov_sample,
    joint_control,
    quantify_uncertainty,
    export_uq_report,
)
from .harness.analytic import AnalyticDistribution, analytic_perturbed_score, make_score_fn
from .harness.mannwhitney import StatsResult, mann_whitney_u

__version__ = "0.1.0"
