"""Forward SDE, perturbation kernel, and reverse-time sampling."""

import numpy as np
import pytest
from scipy.integrate import quad

import bsde_diffusion as bd
from bsde_diffusion.harness.analytic import AnalyticDistribution, make_score_fn
from bsde_diffusion.sde import export_paths_csv


class _FrozenSde:
    """Degenerate dynamics for plumbing tests: no drift, no noise."""

    horizon = 1.0

    def drift(self, x, t):
        return np.zeros_like(x)

    def sigma(self, t):
        return 0.0

    def kernel_variance(self, t):
        return 0.0


class TestSdeSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            bd.SdeSpec(sigma_min=1.0, sigma_max=1.0)
        with pytest.raises(ValueError):
            bd.SdeSpec(sigma_min=-0.1, sigma_max=1.0)
        with pytest.raises(ValueError):
            bd.SdeSpec(horizon=0.0)

    def test_schedule_strictly_increasing(self):
        sde = bd.SdeSpec()
        t = np.linspace(0, 1, 101)
        assert np.all(np.diff(sde.sigma(t)) > 0)
        assert np.all(np.diff(sde.kernel_variance(t)) > 0)
        assert sde.kernel_variance(0.0) == 0.0


class TestPerturbationKernel:
    def test_no_perturbation_at_start(self):
        assert bd.perturbation_kernel(bd.SdeSpec(), 0.0) == (1.0, 0.0)

    def test_closed_form_value(self):
        # sigma_min=0.01, sigma_max=5, t=1: sqrt((25 - 1e-4) / (2 ln 500))
        _, std = bd.perturbation_kernel(bd.SdeSpec(0.01, 5.0), 1.0)
        expected = np.sqrt((25.0 - 1e-4) / (2.0 * np.log(500.0)))
        assert abs(std - expected) < 1e-12
        assert abs(std - 1.4182319488) < 1e-9

    def test_matches_quadrature(self):
        sde = bd.SdeSpec(0.01, 5.0)
        for t in np.linspace(0.05, 1.0, 20):
            numeric, _ = quad(lambda s: sde.sigma(s) ** 2, 0.0, t, limit=200)
            assert abs(sde.kernel_std(t) - np.sqrt(numeric)) < 1e-8

    def test_rejects_out_of_range(self):
        sde = bd.SdeSpec()
        for t in (-0.01, 1.01):
            with pytest.raises(ValueError):
                bd.perturbation_kernel(sde, t)


class TestSimulateForward:
    def test_frozen_dynamics_constant_path(self):
        grid = bd.make_time_grid(1.0, 16)
        ens = bd.sample_wiener_ensemble(grid, 4, 1, seed=0)
        path = bd.simulate_forward(_FrozenSde(), [1.5], grid, ens)
        np.testing.assert_array_equal(path.states, np.full((4, 17, 1), 1.5))

    def test_terminal_variance_matches_kernel(self):
        sde = bd.SdeSpec()
        grid = bd.make_time_grid(1.0, 512)
        ens = bd.sample_wiener_ensemble(grid, 10_000, 1, seed=3)
        path = bd.simulate_forward(sde, np.zeros(1), grid, ens)
        ratio = path.terminal.var(ddof=1) / sde.kernel_variance(1.0)
        assert abs(ratio - 1.0) < 0.05

    def test_kernel_consistency_four_sigma(self):
        # finer grid so the integration bias is far inside the Monte Carlo band
        sde = bd.SdeSpec()
        grid = bd.make_time_grid(1.0, 2048)
        m = 20_000
        ens = bd.sample_wiener_ensemble(grid, m, 1, seed=8)
        terminal = bd.simulate_forward(sde, np.zeros(1), grid, ens).terminal[:, 0]
        var = sde.kernel_variance(1.0)
        assert abs(terminal.mean()) <= 4.0 * np.sqrt(var / m)
        assert abs(terminal.var(ddof=1) - var) <= 4.0 * var * np.sqrt(2.0 / (m - 1))

    def test_grid_refinement_within_monte_carlo_error(self):
        sde = bd.SdeSpec()
        stats = []
        for steps in (512, 1024):
            grid = bd.make_time_grid(1.0, steps)
            ens = bd.sample_wiener_ensemble(grid, 10_000, 1, seed=3)
            var = bd.simulate_forward(sde, np.zeros(1), grid, ens).terminal.var(ddof=1)
            stats.append((var, var * np.sqrt(2.0 / 9999)))
        diff = abs(stats[0][0] - stats[1][0])
        assert diff <= np.hypot(stats[0][1], stats[1][1])

    def test_determinism(self):
        sde = bd.SdeSpec()
        grid = bd.make_time_grid(1.0, 32)
        ens = bd.sample_wiener_ensemble(grid, 3, 2, seed=5)
        a = bd.simulate_forward(sde, np.zeros(2), grid, ens)
        b = bd.simulate_forward(sde, np.zeros(2), grid, ens)
        np.testing.assert_array_equal(a.states, b.states)

    def test_shape_mismatch_rejected(self):
        grid = bd.make_time_grid(1.0, 8)
        ens = bd.sample_wiener_ensemble(grid, 2, 1, seed=0)
        with pytest.raises(ValueError):
            bd.simulate_forward(bd.SdeSpec(), np.zeros(3), grid, ens)
        short = bd.sample_wiener_ensemble(bd.make_time_grid(1.0, 4), 2, 1, seed=0)
        with pytest.raises(ValueError):
            bd.simulate_forward(bd.SdeSpec(), np.zeros(1), grid, short.increments)


class TestSampleReverse:
    def test_frozen_dynamics_constant_path(self):
        grid = bd.make_time_grid(1.0, 16)
        ens = bd.zero_wiener_ensemble(grid, 4, 1)
        path = bd.sample_reverse(_FrozenSde(), lambda x, t: np.zeros_like(x), [0.7], grid, ens)
        assert np.all(path.states == 0.7)

    def test_times_descend_to_floor(self):
        grid = bd.make_time_grid(1.0, 200)
        ens = bd.zero_wiener_ensemble(grid, 1, 1)
        sde = bd.SdeSpec(2.0, 4.0)
        path = bd.sample_reverse(sde, lambda x, t: np.zeros_like(x), [0.0], grid, ens, t_floor=0.01)
        assert path.times[0] == 1.0
        assert np.all(np.diff(path.times) < 0)
        assert abs(path.times[-1] - 0.01) < 1e-12  # 0.01 is a grid node for n=200

    def test_exact_score_reproduces_marginal(self, gaussian_dist, train_sde):
        grid = bd.make_time_grid(1.0, 200)
        m = 10_000
        ens = bd.sample_wiener_ensemble(grid, m, 1, seed=5)
        rng = np.random.default_rng(17)
        sigma_sq_T = 1.0 + float(train_sde.kernel_variance(1.0))
        x_init = np.sqrt(sigma_sq_T) * rng.standard_normal((m, 1))
        score = make_score_fn(gaussian_dist, train_sde)
        path = bd.sample_reverse(train_sde, score, x_init, grid, ens, t_floor=0.01)
        target_var = 1.0 + float(train_sde.kernel_variance(path.times[-1]))
        assert abs(path.terminal.mean()) < 0.05
        assert abs(path.terminal.var(ddof=1) / target_var - 1.0) < 0.15

    def test_trained_net_reproduces_marginal(self, trained_net, train_sde):
        net, _ = trained_net
        grid = bd.make_time_grid(1.0, 200)
        m = 10_000
        ens = bd.sample_wiener_ensemble(grid, m, 1, seed=5)
        rng = np.random.default_rng(17)
        sigma_sq_T = 1.0 + float(train_sde.kernel_variance(1.0))
        x_init = np.sqrt(sigma_sq_T) * rng.standard_normal((m, 1))
        path = bd.sample_reverse(train_sde, net, x_init, grid, ens, t_floor=0.01)
        target_var = 1.0 + float(train_sde.kernel_variance(path.times[-1]))
        assert abs(path.terminal.mean()) < 0.05
        assert abs(path.terminal.var(ddof=1) / target_var - 1.0) < 0.15

    def test_probability_flow_contracts_along_marginals(self, gaussian_dist, train_sde):
        grid = bd.make_time_grid(1.0, 200)
        m = 10_000
        rng = np.random.default_rng(23)
        sigma_sq_T = 1.0 + float(train_sde.kernel_variance(1.0))
        x_init = np.sqrt(sigma_sq_T) * rng.standard_normal((m, 1))
        score = make_score_fn(gaussian_dist, train_sde)
        path = bd.sample_reverse(train_sde, score, x_init, grid,
                                 bd.zero_wiener_ensemble(grid, m, 1),
                                 t_floor=0.01, probability_flow=True)
        variances = path.states[:, :, 0].var(axis=0, ddof=1)
        marginals = 1.0 + np.asarray(train_sde.kernel_variance(path.times))
        assert np.all(np.diff(variances) < 0)  # monotone contraction
        assert np.max(np.abs(variances - marginals) / marginals) < 0.02

    def test_deterministic_repeat(self, gaussian_dist, train_sde):
        grid = bd.make_time_grid(1.0, 50)
        ens = bd.sample_wiener_ensemble(grid, 8, 1, seed=1)
        score = make_score_fn(gaussian_dist, train_sde)
        a = bd.sample_reverse(train_sde, score, np.ones(1), grid, ens)
        b = bd.sample_reverse(train_sde, score, np.ones(1), grid, ens)
        np.testing.assert_array_equal(a.states, b.states)


class TestPathExport:
    def test_csv_layout_and_determinism(self, tmp_path):
        grid = bd.make_time_grid(1.0, 3)
        ens = bd.sample_wiener_ensemble(grid, 2, 2, seed=4)
        path = bd.simulate_forward(bd.SdeSpec(), np.zeros(2), grid, ens)
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        export_paths_csv(path, out_a)
        export_paths_csv(path, out_b)
        lines = out_a.read_text().splitlines()
        assert lines[0] == "path_id,step,t,x_1,x_2"
        assert len(lines) == 1 + 2 * 4
        assert out_a.read_bytes() == out_b.read_bytes()
