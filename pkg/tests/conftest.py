"""Shared fixtures: the experiment schedules and session-scoped trained models.

Training runs once per session; every test that needs a model reuses these.
The two schedules are the pilot-frozen experiment settings: a flatter one
for score-training accuracy work and a gentler one for the generative
(inversion / control / uncertainty) pipelines, where coarse-grid
integration bias dominates.
"""

import numpy as np
import pytest

import bsde_diffusion as bd
from bsde_diffusion.harness.analytic import AnalyticDistribution, analytic_perturbed_score


def validation_grid(dist, sde, times=(0.1, 0.5, 1.0), halfwidth=3.0, points=61):
    xs, ts, targets = [], [], []
    pts = np.linspace(-halfwidth, halfwidth, points)[:, None]
    for t in times:
        xs.append(pts)
        ts.append(np.full(points, t))
        targets.append(analytic_perturbed_score(dist, sde, pts, t))
    return np.vstack(xs), np.concatenate(ts), np.vstack(targets)


@pytest.fixture(scope="session")
def gaussian_dist():
    return AnalyticDistribution.gaussian([0.0], 1.0)


@pytest.fixture(scope="session")
def train_sde():
    """Schedule for the score-training experiments."""
    return bd.SdeSpec(sigma_min=2.0, sigma_max=4.0)


@pytest.fixture(scope="session")
def gen_sde():
    """Schedule for the generative pipelines (low integration stiffness)."""
    return bd.SdeSpec(sigma_min=0.8, sigma_max=2.5)


@pytest.fixture(scope="session")
def trained_net(gaussian_dist, train_sde):
    """Unconstrained net trained to criterion accuracy, with its report."""
    net = bd.ScoreNetwork.create(1, train_sde, spectral_norm=False, t_min=0.01, seed=100)
    cfg = bd.TrainConfig(batch_size=512, learning_rate=3e-3, steps=8000,
                         weight_by_kernel_variance=True, t_min=0.01, seed=100)
    report = bd.train_score(net, gaussian_dist.sample, train_sde, cfg,
                            validation=validation_grid(gaussian_dist, train_sde))
    return net, report


@pytest.fixture(scope="session")
def trained_sn_net(gaussian_dist, train_sde):
    """Spectral-normalized net (short budget: used for certification tests)."""
    net = bd.ScoreNetwork.create(1, train_sde, spectral_norm=True, t_min=0.01, seed=100)
    cfg = bd.TrainConfig(batch_size=256, learning_rate=3e-3, steps=2500,
                         weight_by_kernel_variance=True, t_min=0.01, seed=100)
    report = bd.train_score(net, gaussian_dist.sample, train_sde, cfg)
    return net, report


@pytest.fixture(scope="session")
def gen_net(gaussian_dist, gen_sde):
    """Net trained on the generative schedule, for inversion and control."""
    net = bd.ScoreNetwork.create(1, gen_sde, spectral_norm=False, t_min=0.01, seed=100)
    cfg = bd.TrainConfig(batch_size=512, learning_rate=3e-3, steps=8000,
                         weight_by_kernel_variance=True, t_min=0.01, seed=100)
    report = bd.train_score(net, gaussian_dist.sample, gen_sde, cfg,
                            validation=validation_grid(gaussian_dist, gen_sde))
    return net, report


@pytest.fixture(scope="session")
def wiener_oracle_solution():
    """Regression solve of the terminal-noise identity problem (z == 1)."""
    grid = bd.make_time_grid(1.0, 50)
    ens = bd.sample_wiener_ensemble(grid, 2**14, 1, seed=7)
    terminal = bd.TerminalCondition.of_terminal_noise(lambda w: w)
    sol = bd.solve_regression_mc(None, bd.GeneratorFn.null(), terminal, grid, ens)
    return sol, ens
