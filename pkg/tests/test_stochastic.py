"""Time grids and Brownian ensembles: determinism, distribution, round trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest

import bsde_diffusion as bd
from bsde_diffusion.stochastic import derive_seed


class TestTimeGrid:
    def test_uniform_partition(self):
        grid = bd.make_time_grid(1.0, 4)
        np.testing.assert_allclose(grid.nodes, [0.0, 0.25, 0.5, 0.75, 1.0], rtol=0, atol=0)

    def test_single_step(self):
        grid = bd.make_time_grid(1.0, 1)
        np.testing.assert_array_equal(grid.nodes, [0.0, 1.0])

    def test_dt_arithmetic(self):
        assert bd.make_time_grid(2.0, 8).dt == 0.25

    @pytest.mark.parametrize("horizon,steps", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, -3), (np.inf, 2)])
    def test_invalid_arguments(self, horizon, steps):
        with pytest.raises(ValueError):
            bd.make_time_grid(horizon, steps)

    @given(st.floats(0.05, 20.0), st.integers(1, 300))
    @settings(max_examples=60, deadline=None)
    def test_nodes_increasing_and_terminal_exact(self, horizon, steps):
        grid = bd.make_time_grid(horizon, steps)
        nodes = grid.nodes
        assert nodes[0] == 0.0
        assert nodes[-1] == horizon  # representation-level exactness
        assert np.all(np.diff(nodes) > 0)


class TestWienerEnsemble:
    def test_determinism(self):
        grid = bd.make_time_grid(1.0, 8)
        a = bd.sample_wiener_ensemble(grid, 6, 2, seed=42)
        b = bd.sample_wiener_ensemble(grid, 6, 2, seed=42)
        np.testing.assert_array_equal(a.increments, b.increments)
        np.testing.assert_array_equal(a.cumulative, b.cumulative)

    def test_partition_independence(self):
        grid = bd.make_time_grid(1.0, 8)
        small = bd.sample_wiener_ensemble(grid, 5, 2, seed=9)
        large = bd.sample_wiener_ensemble(grid, 17, 2, seed=9)
        np.testing.assert_array_equal(large.increments[:5], small.increments)

    def test_worker_count_invariance(self):
        grid = bd.make_time_grid(1.0, 8)
        base = bd.sample_wiener_ensemble(grid, 11, 1, seed=3)
        for workers in (2, 3, 11, 64):
            chunked = bd.sample_wiener_ensemble(grid, 11, 1, seed=3, workers=workers)
            np.testing.assert_array_equal(chunked.increments, base.increments)

    @pytest.mark.parametrize("seed", [0, 1, 123456789])
    def test_single_path_variance_band(self, seed):
        grid = bd.make_time_grid(1.0, 1000)
        ens = bd.sample_wiener_ensemble(grid, 1, 1, seed=seed)
        var = ens.increments.var(ddof=1)
        assert 0.8 * grid.dt <= var <= 1.2 * grid.dt

    def test_cumulative_consistency(self):
        grid = bd.make_time_grid(1.0, 16)
        ens = bd.sample_wiener_ensemble(grid, 7, 3, seed=5)
        np.testing.assert_array_equal(ens.cumulative[:, 0, :], 0.0)
        # cumsum partial sums round once per step: exact up to a few ulps
        np.testing.assert_allclose(
            np.diff(ens.cumulative, axis=1), ens.increments, rtol=0, atol=1e-13
        )

    def test_moment_bands_four_sigma(self):
        # N = M*n*d independent N(0, dt) draws
        grid = bd.make_time_grid(1.0, 4)
        ens = bd.sample_wiener_ensemble(grid, 20000, 2, seed=11)
        draws = ens.increments.ravel()
        n = draws.size
        dt = grid.dt
        assert abs(draws.mean()) <= 4.0 * np.sqrt(dt / n)
        var_se = dt * np.sqrt(2.0 / (n - 1))
        assert abs(draws.var(ddof=1) - dt) <= 4.0 * var_se

    def test_kolmogorov_smirnov_normality(self):
        grid = bd.make_time_grid(1.0, 100)
        ens = bd.sample_wiener_ensemble(grid, 100, 1, seed=21)
        normalized = ens.increments.ravel() / np.sqrt(grid.dt)
        stat = kstest(normalized, "norm").statistic
        critical_1pct = 1.628 / np.sqrt(normalized.size)
        assert stat < critical_1pct

    @pytest.mark.parametrize("paths,dim,workers", [(0, 1, 1), (4, 0, 1), (4, 1, 0)])
    def test_invalid_arguments(self, paths, dim, workers):
        grid = bd.make_time_grid(1.0, 4)
        with pytest.raises(ValueError):
            bd.sample_wiener_ensemble(grid, paths, dim, seed=0, workers=workers)

    def test_zero_ensemble(self):
        grid = bd.make_time_grid(1.0, 5)
        ens = bd.zero_wiener_ensemble(grid, 3, 2)
        assert not ens.increments.any()
        assert not ens.cumulative.any()


class TestDumpLoad:
    def test_round_trip_bit_exact(self, tmp_path):
        grid = bd.make_time_grid(2.0, 12)
        ens = bd.sample_wiener_ensemble(grid, 9, 2, seed=2**63 + 17)
        path = tmp_path / "paths.bin"
        bd.dump_ensemble(ens, path)
        loaded = bd.load_ensemble(path)
        np.testing.assert_array_equal(loaded.increments, ens.increments)
        np.testing.assert_array_equal(loaded.cumulative, ens.cumulative)
        assert loaded.grid == ens.grid
        assert loaded.paths == ens.paths and loaded.dim == ens.dim

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 60)
        with pytest.raises(ValueError, match="magic"):
            bd.load_ensemble(path)

    def test_truncated_rejected(self, tmp_path):
        grid = bd.make_time_grid(1.0, 4)
        ens = bd.sample_wiener_ensemble(grid, 3, 1, seed=1)
        path = tmp_path / "cut.bin"
        bd.dump_ensemble(ens, path)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(ValueError, match="truncated"):
            bd.load_ensemble(path)


class TestDeriveSeed:
    def test_deterministic_and_distinct(self):
        children = [derive_seed(12345, i) for i in range(64)]
        assert len(set(children)) == 64
        assert children == [derive_seed(12345, i) for i in range(64)]
        assert derive_seed(1, 0) != derive_seed(2, 0)
