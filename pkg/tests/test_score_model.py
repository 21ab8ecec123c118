"""Score network: power iteration, normalization, gradients, training."""

import numpy as np
import pytest

import bsde_diffusion as bd
from bsde_diffusion.score_model import TrainingDiverged, dsm_loss_and_grad


def _generic_unit(n, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(n)
    return u / np.linalg.norm(u)


class TestPowerSpectralNorm:
    def test_identity(self):
        sigma, _ = bd.power_spectral_norm(np.eye(2), 1, np.array([0.6, 0.8]))
        assert abs(sigma - 1.0) < 1e-14

    def test_diagonal(self):
        sigma, _ = bd.power_spectral_norm(np.diag([3.0, 1.0]), 5, _generic_unit(2))
        assert abs(sigma - 3.0) < 1e-6

    @pytest.mark.parametrize("seed", [0, 1, 5])
    def test_matches_svd_oracle(self, seed):
        # seeds with a generic spectral gap; a near-degenerate top pair
        # (e.g. default_rng(2)) legitimately converges slower than 50 iters
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((8, 8))
        sigma, _ = bd.power_spectral_norm(w, 50, _generic_unit(8, seed + 10))
        top = np.linalg.svd(w, compute_uv=False)[0]
        assert abs(sigma - top) < 1e-4

    def test_zero_matrix(self):
        u = _generic_unit(3)
        sigma, u_out = bd.power_spectral_norm(np.zeros((3, 2)), 4, u)
        assert sigma == 0.0
        np.testing.assert_array_equal(u_out, u)

    def test_monotone_lower_bound(self):
        rng = np.random.default_rng(7)
        w = rng.standard_normal((12, 6))
        top = np.linalg.svd(w, compute_uv=False)[0]
        u = _generic_unit(12, 3)
        estimates = []
        for _ in range(12):
            sigma, u = bd.power_spectral_norm(w, 1, u)
            estimates.append(sigma)
        assert all(s <= top + 1e-12 for s in estimates)
        assert all(b >= a - 1e-12 for a, b in zip(estimates, estimates[1:]))

    def test_rejects_nonpositive_iters(self):
        with pytest.raises(ValueError):
            bd.power_spectral_norm(np.eye(2), 0, _generic_unit(2))


def _fresh_net(spectral_norm, hidden=(4, 4), dim=2, seed=11, perturb=True):
    net = bd.ScoreNetwork.create(dim, bd.SdeSpec(), hidden=hidden,
                                 spectral_norm=spectral_norm, seed=seed)
    if perturb:  # move weights off the init distribution for generic spectra
        rng = np.random.default_rng(5)
        for layer in net.mlp.layers:
            layer.w += 0.1 * rng.standard_normal(layer.w.shape)
            layer.b += 0.1 * rng.standard_normal(layer.b.shape)
    return net


class TestEffectiveWeights:
    def test_diagonal_normalization(self):
        net = _fresh_net(True, hidden=(), dim=2, perturb=False)
        net.mlp.layers[0].w = np.diag([4.0, 2.0])
        # single layer network: 2 inputs would be (d + 2) wide; rebuild exactly
        net.mlp.layers = net.mlp.layers[:1]
        net.mlp.layers[0].w = np.diag([4.0, 2.0])
        net.mlp.layers[0].u = _generic_unit(2)
        (w_eff,) = bd.effective_weights(net)
        np.testing.assert_allclose(w_eff, np.diag([1.0, 0.5]), atol=1e-9)

    def test_enabled_norms_certified(self, trained_sn_net):
        net, _ = trained_sn_net
        for w_eff in bd.effective_weights(net):
            norm = np.linalg.svd(w_eff, compute_uv=False)[0]
            assert 1.0 - 1e-3 <= norm <= 1.0 + 1e-3

    def test_disabled_pass_through(self):
        net = _fresh_net(False)
        for w_eff, layer in zip(bd.effective_weights(net), net.mlp.layers):
            np.testing.assert_array_equal(w_eff, layer.w)

    def test_scale_invariance(self):
        net = _fresh_net(True)
        before = bd.effective_weights(net)
        for layer in net.mlp.layers:
            layer.w *= 7.3
        after = bd.effective_weights(net)
        for a, b in zip(before, after):
            np.testing.assert_allclose(a, b, atol=1e-6)


class TestLipschitzBound:
    def test_enabled_product_bound(self):
        net = _fresh_net(True, hidden=(8, 8))  # 3 weight matrices
        assert bd.lipschitz_bound(net) <= (1.0 + 1e-3) ** 3

    def test_disabled_single_layer(self):
        net = _fresh_net(False, hidden=(), dim=2, perturb=False)
        net.mlp.layers = net.mlp.layers[:1]
        net.mlp.layers[0].w = np.diag([3.0, 1.0])
        net.mlp.layers[0].u = _generic_unit(2)
        assert abs(bd.lipschitz_bound(net) - 3.0) < 1e-9

    @pytest.mark.parametrize("fixture_name", ["trained_net", "trained_sn_net"])
    def test_empirical_quotient_below_bound(self, fixture_name, request):
        net, _ = request.getfixturevalue(fixture_name)
        bound = bd.lipschitz_bound(net)
        rng = np.random.default_rng(99)
        x1 = rng.uniform(-4, 4, (10_000, net.dim))
        x2 = x1 + rng.uniform(-1, 1, (10_000, net.dim))
        t = 0.5
        quotients = (np.linalg.norm(net(x1, t) - net(x2, t), axis=1)
                     / np.linalg.norm(x1 - x2, axis=1))
        assert quotients.max() <= bound

    def test_empirical_quotient_untrained_sn(self):
        net = _fresh_net(True, hidden=(16, 16), dim=1, seed=3)
        bound = bd.lipschitz_bound(net)
        rng = np.random.default_rng(12)
        x1 = rng.uniform(-5, 5, (10_000, 1))
        x2 = x1 + rng.uniform(-2, 2, (10_000, 1))
        quotients = (np.linalg.norm(net(x1, 0.3) - net(x2, 0.3), axis=1)
                     / np.linalg.norm(x1 - x2, axis=1))
        assert quotients.max() <= bound


class TestScoreForward:
    def test_zero_head_gives_zero(self):
        net = _fresh_net(False)
        net.mlp.layers[-1].w[:] = 0.0
        net.mlp.layers[-1].b[:] = 0.0
        out = bd.score_forward(net, np.array([1.0, -2.0]), 0.5)
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_deterministic(self):
        net = _fresh_net(False)
        x = np.array([[0.3, -0.4], [1.0, 2.0]])
        np.testing.assert_array_equal(net(x, 0.7), net(x, 0.7))

    def test_trained_score_zero_at_mean(self, trained_net):
        net, _ = trained_net
        assert abs(net(np.zeros(1), 0.01)[0]) < 0.05

    @pytest.mark.parametrize("t", [0.0, -0.5, 1.5])
    def test_time_out_of_range(self, t):
        net = _fresh_net(False)
        with pytest.raises(ValueError):
            net(np.zeros(2), t)

    def test_dimension_mismatch(self):
        net = _fresh_net(False)
        with pytest.raises(ValueError):
            net(np.zeros(3), 0.5)

    def test_batch_and_single_consistent(self):
        net = _fresh_net(False)
        x = np.array([0.1, 0.2])
        single = net(x, 0.5)
        batch = net(x[None, :], 0.5)
        np.testing.assert_array_equal(single, batch[0])


class TestDsmLossAndGrad:
    def test_perfect_fit_zero_loss_and_grads(self):
        # zero noise makes the target zero; a zero network matches it exactly
        net = _fresh_net(False)
        net.mlp.layers[-1].w[:] = 0.0
        net.mlp.layers[-1].b[:] = 0.0
        x0 = np.array([[0.5, -1.0], [2.0, 0.1]])
        loss, grads = dsm_loss_and_grad(net, x0, bd.SdeSpec(), np.array([0.4, 0.9]),
                                        np.zeros((2, 2)))
        assert loss == 0.0
        assert all(not g.any() for g in grads)

    def test_zero_network_single_sample_loss(self):
        net = _fresh_net(False, dim=1)
        for layer in net.mlp.layers:
            layer.w[:] = 0.0
            layer.b[:] = 0.0
        sde = bd.SdeSpec()
        t = np.array([0.8])
        eps = np.array([[1.3]])
        std = float(sde.kernel_std(0.8))
        tau = 1.3 / std  # magnitude of the conditional score target
        loss, _ = dsm_loss_and_grad(net, np.array([[0.4]]), sde, t, eps)
        assert abs(loss - tau**2) < 1e-9

    @pytest.mark.parametrize("spectral_norm", [False, True])
    def test_gradients_match_finite_differences(self, spectral_norm):
        net = _fresh_net(spectral_norm, hidden=(4, 4), dim=2)
        rng = np.random.default_rng(5)
        x0 = rng.standard_normal((3, 2))
        t = rng.uniform(0.05, 1.0, 3)
        eps = rng.standard_normal((3, 2))
        sde = bd.SdeSpec()
        _, grads = dsm_loss_and_grad(net, x0, sde, t, eps)
        h = 1e-5
        for p, g in zip(net.mlp.parameters(), grads):
            flat_p, flat_g = p.ravel(), g.ravel()
            for idx in range(flat_p.size):
                orig = flat_p[idx]
                flat_p[idx] = orig + h
                up, _ = dsm_loss_and_grad(net, x0, sde, t, eps)
                flat_p[idx] = orig - h
                down, _ = dsm_loss_and_grad(net, x0, sde, t, eps)
                flat_p[idx] = orig
                fd = (up - down) / (2 * h)
                denom = max(abs(fd), abs(flat_g[idx]), 1e-8)
                assert abs(fd - flat_g[idx]) / denom < 1e-4

    def test_weighted_loss_scales_by_kernel_variance(self):
        net = _fresh_net(False)
        sde = bd.SdeSpec()
        rng = np.random.default_rng(1)
        x0 = rng.standard_normal((4, 2))
        t = np.full(4, 0.6)
        eps = rng.standard_normal((4, 2))
        plain, _ = dsm_loss_and_grad(net, x0, sde, t, eps)
        weighted, _ = dsm_loss_and_grad(net, x0, sde, t, eps, weight_by_kernel_variance=True)
        assert abs(weighted - float(sde.kernel_variance(0.6)) * plain) < 1e-10

    def test_rejects_t_outside_training_range(self):
        net = _fresh_net(False)
        with pytest.raises(ValueError):
            dsm_loss_and_grad(net, np.zeros((1, 2)), bd.SdeSpec(),
                              np.array([0.001]), np.zeros((1, 2)))

    def test_non_finite_loss_raises(self):
        # the output head is affine, so an inf there reaches the loss
        # (a hidden-layer inf would be absorbed by tanh saturation)
        net = _fresh_net(False)
        net.mlp.layers[-1].w[0, 0] = np.inf
        with pytest.raises(TrainingDiverged):
            dsm_loss_and_grad(net, np.ones((1, 2)), bd.SdeSpec(),
                              np.array([0.5]), np.ones((1, 2)))


class TestTrainScore:
    def _setup(self, steps, seed=0, **kwargs):
        sde = bd.SdeSpec(2.0, 4.0)
        dist_sample = lambda rng, size: rng.standard_normal((size, 1))
        net = bd.ScoreNetwork.create(1, sde, hidden=(8, 8), spectral_norm=False, seed=seed)
        cfg = bd.TrainConfig(batch_size=16, steps=steps, seed=seed, **kwargs)
        return net, dist_sample, sde, cfg

    def test_zero_steps_is_noop(self):
        net, sampler, sde, cfg = self._setup(0)
        before = [p.copy() for p in net.mlp.parameters()]
        xs = np.linspace(-1, 1, 5)[:, None]
        val = (xs, np.full(5, 0.5), -xs / (1 + float(sde.kernel_variance(0.5))))
        report = bd.train_score(net, sampler, sde, cfg, validation=val)
        assert report.steps_run == 0
        assert report.loss_trace.size == 0
        assert report.validation_mse is not None
        for p, b in zip(net.mlp.parameters(), before):
            np.testing.assert_array_equal(p, b)

    def test_deterministic_training(self):
        results = []
        for _ in range(2):
            net, sampler, sde, cfg = self._setup(40, seed=77)
            bd.train_score(net, sampler, sde, cfg)
            results.append([p.copy() for p in net.mlp.parameters()])
        for a, b in zip(*results):
            np.testing.assert_array_equal(a, b)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_partial_report(self):
        # one enormous Adam step puts the output head near 1e160; the next
        # loss evaluation overflows and must abort with a partial report
        net, sampler, sde, cfg = self._setup(200, learning_rate=1e160)
        report = bd.train_score(net, sampler, sde, cfg)
        assert report.diverged
        assert report.steps_run < 200
        assert np.all(np.isfinite(report.loss_trace))

    def test_loss_trace_finite(self):
        net, sampler, sde, cfg = self._setup(60)
        report = bd.train_score(net, sampler, sde, cfg)
        assert report.steps_run == 60
        assert np.all(np.isfinite(report.loss_trace))

    def test_stream_fingerprint_mode_independent(self):
        # the training stream depends only on the seed, not the arm
        fingerprints = []
        for spectral_norm in (False, True):
            sde = bd.SdeSpec(2.0, 4.0)
            net = bd.ScoreNetwork.create(1, sde, hidden=(8, 8),
                                         spectral_norm=spectral_norm, seed=1)
            cfg = bd.TrainConfig(batch_size=16, steps=5, seed=123)
            report = bd.train_score(net, lambda rng, size: rng.standard_normal((size, 1)),
                                    sde, cfg)
            fingerprints.append(report.stream_fingerprint)
        assert fingerprints[0] == fingerprints[1] != ""

    def test_config_validation(self):
        with pytest.raises(ValueError):
            bd.TrainConfig(t_min=0.0)
        with pytest.raises(ValueError):
            bd.TrainConfig(batch_size=0)
        net, sampler, sde, _ = self._setup(1)
        with pytest.raises(ValueError):
            bd.train_score(net, sampler, sde, bd.TrainConfig(t_min=0.001))


class TestCheckpoint:
    def test_round_trip_bit_identical_inference(self, tmp_path, trained_net):
        net, _ = trained_net
        path = tmp_path / "model.ckpt"
        bd.save_checkpoint(net, path)
        loaded = bd.load_checkpoint(path)
        assert loaded.dim == net.dim
        assert loaded.spectral_norm_enabled == net.spectral_norm_enabled
        assert loaded.t_min == net.t_min
        rng = np.random.default_rng(0)
        x = rng.uniform(-3, 3, (64, net.dim))
        t = rng.uniform(0.05, 1.0, 64)
        np.testing.assert_array_equal(loaded(x, t), net(x, t))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"XXXX" + b"\x00" * 100)
        with pytest.raises(ValueError, match="magic"):
            bd.load_checkpoint(path)
