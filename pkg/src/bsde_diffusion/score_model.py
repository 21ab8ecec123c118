"""Noise-conditioned score network with spectral normalization.

A small tanh MLP maps ``concat(x, time embedding)`` to an estimate of the
score of the kernel-perturbed data distribution.  Everything is explicit
numpy: forward passes cache activations, gradients come from a hand-written
reverse pass, and the per-layer spectral norms are tracked by power
iteration so that the network's Lipschitz constant can be certified as the
product of effective layer norms (tanh has slope at most 1 everywhere, and
biases do not enter the bound).

Spectral normalization follows the running-estimate scheme: each layer keeps
a left singular vector iterate ``u``; during a loss evaluation ``u`` is held
fixed and the norm estimate is ``sigma = ||W^T u||``, which makes the
normalized forward pass an exactly differentiable function of the raw
weights (the reverse pass uses ``d sigma / d W = u v^T`` with
``v = W^T u / sigma``).  Training refreshes ``u`` with one power iteration
per layer per step; certification refines a copy of ``u`` for at least 20
iterations.
"""

from __future__ import annotations

import hashlib
import struct
import time as _time
from dataclasses import dataclass

import numpy as np

from .stochastic import derive_seed

__all__ = [
    "TrainingDiverged",
    "AffineLayer",
    "Mlp",
    "ScoreNetwork",
    "TrainConfig",
    "TrainingReport",
    "Adam",
    "power_spectral_norm",
    "effective_weights",
    "lipschitz_bound",
    "score_forward",
    "dsm_loss_and_grad",
    "train_score",
    "save_checkpoint",
    "load_checkpoint",
]


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient evaluation produces a non-finite value."""


def power_spectral_norm(w: np.ndarray, iters: int, u: np.ndarray) -> tuple[float, np.ndarray]:
    """Estimate the largest singular value of ``w`` by power iteration.

    Runs ``iters`` full iterations starting from the unit vector ``u`` and
    returns ``(sigma, u')`` where ``sigma = ||w^T u'||`` is a monotonically
    improving lower bound on the true spectral norm and ``u'`` is the updated
    iterate (persist it between calls to keep refining).  A zero matrix
    yields ``sigma = 0`` with ``u`` unchanged.
    """
    if iters < 1:
        raise ValueError(f"iters must be a positive integer, got {iters}")
    u = np.asarray(u, dtype=float)
    for _ in range(int(iters)):
        wu = w.T @ u
        norm_wu = float(np.linalg.norm(wu))
        if norm_wu == 0.0:
            return 0.0, u
        v = wu / norm_wu
        wv = w @ v
        u = wv / np.linalg.norm(wv)
    return float(np.linalg.norm(w.T @ u)), u


def _certified_norm(w: np.ndarray, u: np.ndarray, min_iters: int = 20, max_iters: int = 200) -> float:
    """Refine the power estimate until it stalls (at least ``min_iters`` runs)."""
    sigma, u = power_spectral_norm(w, min_iters, u.copy())
    for _ in range(max_iters - min_iters):
        sigma_next, u = power_spectral_norm(w, 1, u)
        if abs(sigma_next - sigma) <= 1e-13 * max(sigma_next, 1e-300):
            return sigma_next
        sigma = sigma_next
    return sigma


@dataclass
class AffineLayer:
    """One affine map with its power-iteration state."""

    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    u: np.ndarray  # (out,), unit norm

    def normalization(self) -> tuple[float, np.ndarray]:
        """Current norm estimate ``sigma = ||w^T u||`` and right vector ``v``."""
        wu = self.w.T @ self.u
        sigma = float(np.linalg.norm(wu))
        v = wu / sigma if sigma > 0 else np.zeros_like(wu)
        return sigma, v


class Mlp:
    """tanh MLP with cached forward passes and a manual reverse pass."""

    def __init__(self, sizes: tuple[int, ...], rng: np.random.Generator, spectral_norm: bool = False):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.spectral_norm = bool(spectral_norm)
        self.layers: list[AffineLayer] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
            b = np.zeros(fan_out)
            u = rng.standard_normal(fan_out)
            u /= np.linalg.norm(u)
            self.layers.append(AffineLayer(w, b, u))

    def effective_layers(self) -> list[tuple[np.ndarray, float, np.ndarray]]:
        """Per layer ``(w_eff, sigma, v)`` under the current ``u`` iterates.

        With normalization off (or a zero layer) ``w_eff`` is the raw matrix
        and ``sigma`` is 0, signalling pass-through to the reverse pass.
        """
        out = []
        for layer in self.layers:
            if self.spectral_norm:
                sigma, v = layer.normalization()
                if sigma > 0:
                    out.append((layer.w / sigma, sigma, v))
                    continue
            out.append((layer.w, 0.0, np.zeros(layer.w.shape[1])))
        return out

    def power_iterate(self, iters: int = 1) -> None:
        """Refresh every layer's ``u`` with ``iters`` power iterations."""
        for layer in self.layers:
            _, layer.u = power_spectral_norm(layer.w, iters, layer.u)

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x: np.ndarray):
        """Forward pass returning the output and the cache for ``backward``."""
        eff = self.effective_layers()
        h = np.asarray(x, dtype=float)
        inputs = []
        for i, (w_eff, _, _) in enumerate(eff):
            inputs.append(h)
            a = h @ w_eff.T + self.layers[i].b
            h = np.tanh(a) if i < len(eff) - 1 else a
        return h, (inputs, eff)

    def backward(self, cache, dout: np.ndarray):
        """Reverse pass: gradients w.r.t. raw weights, biases, and the input.

        ``dout`` has the output's shape.  Returns ``(grads, dinput)`` with
        ``grads`` a flat list ``[dw_0, db_0, dw_1, db_1, ...]``.
        """
        inputs, eff = cache
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))
        delta = np.asarray(dout, dtype=float)
        for i in range(len(self.layers) - 1, -1, -1):
            w_eff, sigma, v = eff[i]
            dw_eff = delta.T @ inputs[i]
            db = delta.sum(axis=0)
            if self.spectral_norm and sigma > 0:
                # d(w/sigma)/dw with sigma = ||w^T u||, u fixed
                inner = float(np.sum(dw_eff * w_eff))
                dw = (dw_eff - inner * np.outer(self.layers[i].u, v)) / sigma
            else:
                dw = dw_eff
            grads[2 * i] = dw
            grads[2 * i + 1] = db
            delta = delta @ w_eff
            if i > 0:
                delta = delta * (1.0 - inputs[i] ** 2)  # tanh' of the previous layer
        return grads, delta

    def parameters(self) -> list[np.ndarray]:
        """Flat list of parameter arrays, in the order used by ``backward``."""
        params = []
        for layer in self.layers:
            params.extend((layer.w, layer.b))
        return params


class ScoreNetwork:
    """Score model ``s(x, t)``: state plus a 2d embedding of the log noise scale.

    The time conditioning enters by input concatenation of
    ``(sin, cos)(pi/2 * tau)`` where ``tau`` rescales ``log sigma(t)`` to
    ``[0, 1]`` over the horizon, so every layer stays an affine map and the
    spectral product bound applies to the whole network.
    """

    def __init__(self, dim, mlp, t_min, horizon, log_sigma_min, log_sigma_ratio):
        self.dim = int(dim)
        self.mlp = mlp
        self.t_min = float(t_min)
        self.horizon = float(horizon)
        self.log_sigma_min = float(log_sigma_min)
        self.log_sigma_ratio = float(log_sigma_ratio)

    @classmethod
    def create(cls, dim, sde, hidden=(64, 64, 64), spectral_norm=True, t_min=0.01, seed=0):
        """Fresh network for the given state dimension and noise schedule."""
        if t_min <= 0:
            raise ValueError(f"t_min must be positive, got {t_min}")
        rng = np.random.Generator(np.random.Philox(key=np.array(
            [derive_seed(seed, 0x494E4954), 0], dtype=np.uint64)))
        mlp = Mlp((dim + 2, *hidden, dim), rng, spectral_norm=spectral_norm)
        return cls(
            dim,
            mlp,
            t_min,
            sde.horizon,
            np.log(sde.sigma_min),
            np.log(sde.sigma_max / sde.sigma_min),
        )

    @property
    def spectral_norm_enabled(self) -> bool:
        return self.mlp.spectral_norm

    def time_features(self, t):
        log_sigma = self.log_sigma_min + np.asarray(t, dtype=float) * self.log_sigma_ratio
        tau = (log_sigma - self.log_sigma_min) / (self.log_sigma_ratio * self.horizon)
        half_pi = 0.5 * np.pi
        return np.sin(half_pi * tau), np.cos(half_pi * tau)

    def _features(self, x, t):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        xb = np.atleast_2d(x)
        if xb.shape[-1] != self.dim:
            raise ValueError(f"state dimension {xb.shape[-1]} != network dimension {self.dim}")
        t_arr = np.broadcast_to(np.asarray(t, dtype=float), (xb.shape[0],))
        if np.any(t_arr <= 0) or np.any(t_arr > self.horizon):
            raise ValueError(f"t must lie in (0, {self.horizon}]")
        sin_f, cos_f = self.time_features(t_arr)
        return np.column_stack([xb, sin_f, cos_f]), squeeze

    def __call__(self, x, t):
        feats, squeeze = self._features(x, t)
        out = self.mlp.forward(feats)
        return out[0] if squeeze else out

    def forward_cached(self, x, t):
        feats, _ = self._features(x, t)
        return self.mlp.forward_cached(feats)


def score_forward(net: ScoreNetwork, x, t):
    """Evaluate the score network; deterministic for fixed parameters."""
    return net(x, t)


def effective_weights(net: ScoreNetwork) -> list[np.ndarray]:
    """Per-layer weight matrices as used by the forward pass.

    With normalization enabled each raw matrix is divided by its certified
    spectral norm (power iteration refined from the persisted state, at
    least 20 iterations); otherwise the stored matrices are returned as-is.
    """
    out = []
    for layer in net.mlp.layers:
        if net.spectral_norm_enabled:
            sigma = _certified_norm(layer.w, layer.u)
            out.append(layer.w / sigma if sigma > 0 else layer.w.copy())
        else:
            out.append(layer.w.copy())
    return out


def lipschitz_bound(net: ScoreNetwork) -> float:
    """Certified upper bound on the network's Lipschitz constant.

    Product over layers of the certified spectral norm of the effective
    weight matrix; valid end-to-end because tanh is 1-Lipschitz and biases
    drop out of increments.
    """
    bound = 1.0
    for w_eff, layer in zip(effective_weights(net), net.mlp.layers):
        bound *= _certified_norm(w_eff, layer.u)
    return bound


def dsm_loss_and_grad(net: ScoreNetwork, x0, sde, t, eps, weight_by_kernel_variance=False):
    """Denoising score-matching loss and parameter gradients for one batch.

    Perturbs each sample as ``x_t = x0 + std(t) * eps`` and regresses the
    network output onto ``-(x_t - x0) / var(t)``; the loss is the mean of
    squared errors over all batch entries and coordinates.  With
    ``weight_by_kernel_variance`` each sample's squared error is multiplied
    by ``var(t)``, which equalizes target scales across noise levels without
    moving the minimizer.

    Gradients are accumulated in reverse mode through the effective
    (normalized) weights, holding the power-iteration state fixed, so they
    match finite differences of this function exactly.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    t = np.asarray(t, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if np.any(t < net.t_min) or np.any(t > net.horizon):
        raise ValueError(f"t draws must lie in [{net.t_min}, {net.horizon}]")

    std = np.asarray(sde.kernel_std(t), dtype=float)[:, None]
    var = std**2
    x_t = x0 + std * eps
    target = -(x_t - x0) / var

    out, cache = net.forward_cached(x_t, t)
    diff = out - target
    weights = var if weight_by_kernel_variance else np.ones_like(var)
    n_entries = diff.size
    loss = float(np.sum(weights * diff**2) / n_entries)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss}")
    dout = 2.0 * weights * diff / n_entries
    grads, _ = net.mlp.backward(cache, dout)
    return loss, grads


class Adam:
    """Adam over a flat list of parameter arrays; updates in place."""

    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def update(self, params, grads) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            p -= self.learning_rate * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 2e-3
    steps: int = 5000
    weight_by_kernel_variance: bool = False
    t_min: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.t_min <= 0:
            raise ValueError(f"t_min must be positive, got {self.t_min}")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")


@dataclass
class TrainingReport:
    loss_trace: np.ndarray
    validation_mse: float | None
    validation_max_error: float | None
    lipschitz_bound: float
    wall_time: float
    steps_run: int
    diverged: bool
    stream_fingerprint: str


_EMA_DECAY = 0.999


def train_score(net: ScoreNetwork, sampler, sde, config: TrainConfig, validation=None) -> TrainingReport:
    """Run ``config.steps`` Adam steps of denoising score matching.

    ``sampler(rng, size)`` draws data points; all randomness (data, time,
    noise draws) comes from a stream derived from ``config.seed``, so
    identical seeds and configs give bit-identical final parameters.  With
    normalization enabled, each step first refreshes every layer's power
    iterate once and then differentiates through the normalized weights.

    The learning rate decays linearly to a tenth of its initial value, and
    the returned parameters are an exponential moving average of the
    iterates (decay 0.999): the per-sample targets are extremely noisy at
    small noise levels, and the averaged trajectory sits far closer to the
    conditional mean than the last iterate does.

    ``validation`` is an optional ``(xs, ts, targets)`` triple evaluated
    after training (or immediately for zero-step runs).  A non-finite loss
    aborts training and returns the partial report with ``diverged=True``
    (raw last-iterate parameters, no average swap).
    """
    if config.t_min < net.t_min:
        raise ValueError(
            f"config.t_min={config.t_min} below the network floor {net.t_min}"
        )
    start = _time.perf_counter()
    rng = np.random.Generator(np.random.Philox(key=np.array(
        [derive_seed(config.seed, 0x545241494E), 0], dtype=np.uint64)))
    params = net.mlp.parameters()
    adam = Adam(params, config.learning_rate)
    ema = [p.copy() for p in params]

    trace = []
    diverged = False
    fingerprint = ""
    for step in range(config.steps):
        adam.learning_rate = config.learning_rate * (1.0 - 0.9 * step / config.steps)
        x0 = np.atleast_2d(np.asarray(sampler(rng, config.batch_size), dtype=float))
        t = rng.uniform(config.t_min, sde.horizon, size=config.batch_size)
        eps = rng.standard_normal((config.batch_size, net.dim))
        if step == 0:
            digest = hashlib.sha256()
            digest.update(x0.tobytes())
            digest.update(t.tobytes())
            digest.update(eps.tobytes())
            fingerprint = digest.hexdigest()
        if net.spectral_norm_enabled:
            net.mlp.power_iterate(1)
        try:
            loss, grads = dsm_loss_and_grad(
                net, x0, sde, t, eps,
                weight_by_kernel_variance=config.weight_by_kernel_variance,
            )
        except TrainingDiverged:
            diverged = True
            break
        trace.append(loss)
        adam.update(params, grads)
        for e, p in zip(ema, params):
            e *= _EMA_DECAY
            e += (1.0 - _EMA_DECAY) * p
    if trace and not diverged:
        for e, p in zip(ema, params):
            p[:] = e

    val_mse = val_max = None
    if validation is not None:
        xs, ts, targets = validation
        preds = net(xs, ts)
        err = preds - np.asarray(targets, dtype=float)
        val_mse = float(np.mean(err**2))
        val_max = float(np.max(np.abs(err)))

    return TrainingReport(
        loss_trace=np.asarray(trace),
        validation_mse=val_mse,
        validation_max_error=val_max,
        lipschitz_bound=lipschitz_bound(net),
        wall_time=_time.perf_counter() - start,
        steps_run=len(trace),
        diverged=diverged,
        stream_fingerprint=fingerprint,
    )


_CKPT_MAGIC = b"SNET"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIIIdddd")


def save_checkpoint(net: ScoreNetwork, path) -> None:
    """Serialize parameters and power-iteration state, little-endian float64."""
    header = _CKPT_HEADER.pack(
        _CKPT_MAGIC,
        _CKPT_VERSION,
        net.dim,
        len(net.mlp.layers),
        1 if net.spectral_norm_enabled else 0,
        net.t_min,
        net.horizon,
        net.log_sigma_min,
        net.log_sigma_ratio,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(net.mlp.sizes, dtype="<u4").tobytes())
        for layer in net.mlp.layers:
            for arr in (layer.w, layer.b, layer.u):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> ScoreNetwork:
    """Restore a network saved by :func:`save_checkpoint`; inference is bit-identical."""
    with open(path, "rb") as fh:
        header = fh.read(_CKPT_HEADER.size)
        if len(header) < _CKPT_HEADER.size:
            raise ValueError(f"truncated checkpoint: {path}")
        magic, version, dim, n_layers, flags, t_min, horizon, log_smin, log_ratio = (
            _CKPT_HEADER.unpack(header)
        )
        if magic != _CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file (bad magic): {path}")
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        sizes = np.frombuffer(fh.read(4 * (n_layers + 1)), dtype="<u4").astype(int)
        mlp = Mlp.__new__(Mlp)
        mlp.sizes = tuple(sizes)
        mlp.spectral_norm = bool(flags & 1)
        mlp.layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(fh.read(8 * fan_out * fan_in), dtype="<f8").reshape(fan_out, fan_in).copy()
            b = np.frombuffer(fh.read(8 * fan_out), dtype="<f8").copy()
            u = np.frombuffer(fh.read(8 * fan_out), dtype="<f8").copy()
            mlp.layers.append(AffineLayer(w, b, u))
    return ScoreNetwork(dim, mlp, t_min, horizon, log_smin, log_ratio)
