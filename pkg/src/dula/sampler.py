"""Sampling engines: decentralized ULA, centralized ULA and a plain SGD baseline.

All agents in a round read the same snapshot ``W`` (shape ``(n, d_w)``) and
write their own row of the next one. The decentralized update for agent ``i``
is

    w_i <- w_i - beta_k (L W)_i - alpha_k n grad U_i(w_i) + sqrt(2 alpha_k) v_i,
    v_i ~ N(0, n I),

and the centralized chain is the usual ULA step with unit-variance noise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .errors import DivergenceError, InvalidParameterError, InvalidTopologyError
from .schedules import validate as validate_schedule

log = logging.getLogger(__name__)

ENGINES = ("dula", "cula", "sgd")


@dataclass
class NetworkState:
    """Stacked agent parameters plus the random streams that drive them.

    ``last_noise`` and ``last_grads`` hold the noise vectors (already scaled
    to their per-agent variance) and gradients used by the step that produced
    this state, so the averaged dynamics can be audited afterwards.
    """

    w: np.ndarray
    k: int = 0
    noise: rngmod.NoiseBuffer | None = None
    batchers: list | None = None
    last_noise: np.ndarray | None = None
    last_grads: np.ndarray | None = None

    @property
    def n(self):
        return self.w.shape[0]

    @property
    def mean(self):
        return self.w.mean(axis=0)


def init_state(n_agents, d_w, seed, init_scale=0.0, w0=None, batch_size=0, shard_sizes=None):
    """Fresh state; agents start at ``w0`` (default zero) plus optional N(0, scale^2) jitter."""
    w = np.zeros((n_agents, d_w)) if w0 is None else np.array(
        np.broadcast_to(np.asarray(w0, dtype=float), (n_agents, d_w)))
    if init_scale > 0:
        for i in range(n_agents):
            w[i] += init_scale * rngmod.stream(seed, i, rngmod.INIT).standard_normal(d_w)
    batchers = None
    if batch_size:
        batchers = [rngmod.BatchSampler(shard_sizes[i], batch_size, rngmod.stream(seed, i, rngmod.BATCH))
                    for i in range(n_agents)]
    return NetworkState(w=w, k=0, noise=rngmod.NoiseBuffer(seed, n_agents, d_w), batchers=batchers)


def _draw(state, noise, scale):
    if not noise:
        return np.zeros_like(state.w)
    z = state.noise.next()
    return z if scale == 1.0 else scale * z


def _batches(state):
    return None if state.batchers is None else [b.next() for b in state.batchers]


def _check(w, k):
    if not np.isfinite(w).all():
        bad = np.argwhere(~np.isfinite(w))[0]
        raise DivergenceError(k, int(bad[0]))


def dula_step(state, graph, schedule, model, noise=True, alpha=None, beta=None):
    """One synchronous decentralized round; returns the next state.

    ``alpha``/``beta`` override the schedule and ``noise=False`` switches the
    injected noise off (test hooks).
    """
    n = graph.n
    a = schedule.alpha(state.k) if alpha is None else alpha
    b = schedule.beta(state.k) if beta is None else beta
    G = model.local_grads(state.w, _batches(state))
    V = _draw(state, noise, math.sqrt(n))
    W = _dula_update(state.w, graph._laplacian, a, b, n, G, V)
    _check(W, state.k)
    return replace(state, w=W, k=state.k + 1, last_noise=V, last_grads=G)


def _dula_update(W, lap, a, b, n, G, V):
    return W - b * (lap @ W) - (a * n) * G + math.sqrt(2 * a) * V


def _global_grad(model, W, batchers):
    if batchers is None:
        return model.global_grad(W[0])[None, :]
    if model.n_agents != 1:
        raise InvalidParameterError("mini-batch centralized steps need a single-shard model")
    return model.local_grads(W, [b.next() for b in batchers])


def cula_step(state, schedule, model, noise=True, alpha=None):
    """One centralized ULA step on the whole posterior (unit-variance noise)."""
    a = schedule.alpha(state.k) if alpha is None else alpha
    G = _global_grad(model, state.w, state.batchers)
    V = _draw(state, noise, 1.0)
    W = _cula_update(state.w, a, G, V)
    _check(W, state.k)
    return replace(state, w=W, k=state.k + 1, last_noise=V, last_grads=G)


def _cula_update(W, a, G, V):
    return W - a * G + math.sqrt(2 * a) * V


def sgd_step(state, schedule, model, alpha=None):
    """Gradient descent on the potential (mini-batch if the state carries batchers)."""
    a = schedule.alpha(state.k) if alpha is None else alpha
    G = _global_grad(model, state.w, state.batchers)
    W = state.w - a * G
    _check(W, state.k)
    return replace(state, w=W, k=state.k + 1, last_noise=None, last_grads=G)


def average_shadow(state_before, state_after, noise_draws, schedule, model, grads=None):
    """Residual of the averaged-dynamics identity for one decentralized step.

    The network mean must follow ``mean(W) - alpha_k sum_i g_i + sqrt(2 alpha_k) mean(v)``
    exactly, because the consensus term has zero column sums. ``grads``
    defaults to full-shard gradients at ``state_before``.
    """
    V = np.asarray(noise_draws, dtype=float)
    if V.shape != state_before.w.shape or state_after.w.shape != V.shape:
        raise ValueError("noise record does not match the network state")
    if state_after.k != state_before.k + 1:
        raise ValueError("states are not consecutive")
    a = schedule.alpha(state_before.k)
    G = model.local_grads(state_before.w) if grads is None else np.asarray(grads)
    predicted = state_before.w.mean(axis=0) - a * G.sum(axis=0) + math.sqrt(2 * a) * V.mean(axis=0)
    return float(np.max(np.abs(state_after.w.mean(axis=0) - predicted)))


@dataclass
class RunConfig:
    """Engine choice and recording policy for one chain or network run."""

    engine: str = "dula"
    iterations: int = 1000
    burn_in: int = 0
    thinning: int = 1
    batch_size: int = 0
    seed: int = 0
    record_every: int = 1
    init_scale: float = 0.0
    record_samples: bool = True

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise InvalidParameterError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.iterations < 1:
            raise InvalidParameterError("iterations must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise InvalidParameterError("burn_in must lie in [0, iterations)")
        if self.thinning < 1 or self.record_every < 1:
            raise InvalidParameterError("thinning and record_every must be >= 1")
        if self.batch_size < 0:
            raise InvalidParameterError("batch_size must be >= 0")


@dataclass
class RunLog:
    """Everything a run records, ordered by iteration.

    ``sample_iters[t]`` is the iteration of ``samples[t]`` (shape ``(n, d_w)``);
    consensus rows are ``(iter, error_sq, bound)`` and accuracy rows
    ``(iter, agent, accuracy)``.
    """

    metadata: dict = field(default_factory=dict)
    sample_iters: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    samples: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))
    consensus: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    accuracy: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    final_state: np.ndarray | None = None

    def pooled_samples(self):
        return self.samples.reshape(-1, self.samples.shape[-1])


def run(config, graph, schedule, model, test_set=None, bound=None, w0=None):
    """Execute ``config.iterations`` steps and return the recorded log.

    Args:
        config: A :class:`RunConfig`.
        graph: Agent topology (ignored, except for its size, by the
            centralized engines).
        schedule: Step sizes.
        model: Target; for the decentralized engine ``model.n_agents`` must
            equal ``graph.n``.
        test_set: Optional ``(X, y)``; when given, per-agent test accuracy of
            the running posterior-mean predictive is logged every
            ``record_every`` iterations.
        bound: Optional callable ``k -> bound`` for the consensus log.
        w0: Common initial point (default zeros).

    Raises:
        DivergenceError: With the partial log attached as ``.log``.
    """
    verdict = validate_schedule(schedule)
    if verdict.fatal:
        raise InvalidParameterError("; ".join(verdict.fatal))
    for v in verdict.violations:
        log.warning("step-size condition: %s", v)

    decentralized = config.engine == "dula"
    if decentralized:
        if not graph.is_connected():
            raise InvalidTopologyError("decentralized sampling needs a connected graph")
        if model.n_agents != graph.n:
            raise InvalidParameterError(
                f"model has {model.n_agents} shards but the graph has {graph.n} agents")
        n = graph.n
    else:
        n = 1
    d = model.d_w
    sizes = [model.shard_size(i) for i in range(model.n_agents)]
    state = init_state(n, d, config.seed, config.init_scale, w0, config.batch_size, sizes)

    K = config.iterations
    ks = np.arange(K)
    alphas = schedule.alpha(ks)
    betas = schedule.beta(ks) if decentralized else None
    lap = graph._laplacian
    noise_scale = math.sqrt(n)
    use_noise = config.engine != "sgd"

    n_kept = (K - config.burn_in - 1) // config.thinning + 1 if config.record_samples else 0
    samples = np.empty((n_kept, n, d))
    sample_iters = np.empty(n_kept, dtype=np.int64)
    n_rec = K // config.record_every
    consensus = np.full((n_rec, 3), np.nan)
    accuracy = []
    tracker = _PredictiveTracker(test_set, n) if test_set is not None else None

    W = state.w
    kept = rec = 0
    logd = RunLog(metadata={"engine": config.engine, "seed": config.seed, "n_agents": n})
    try:
        for k in range(K):
            a = alphas[k]
            if decentralized:
                G = model.local_grads(W, _batches(state))
                V = state.noise.next()
                if noise_scale != 1.0:
                    V = noise_scale * V
                W = _dula_update(W, lap, a, betas[k], n, G, V)
            else:
                G = _global_grad(model, W, state.batchers)
                if use_noise:
                    W = _cula_update(W, a, G, state.noise.next())
                else:
                    W = W - a * G
            _check(W, k)
            it = k + 1
            retain = it > config.burn_in and (it - config.burn_in - 1) % config.thinning == 0
            if retain and config.record_samples:
                samples[kept] = W
                sample_iters[kept] = it
                kept += 1
            if tracker is not None and retain:
                tracker.add(W)
            if it % config.record_every == 0:
                c = W - W.mean(axis=0)
                consensus[rec] = (it, float(np.sum(c * c)), bound(it) if bound else np.nan)
                rec += 1
                if tracker is not None:
                    for i, acc in enumerate(tracker.accuracy(W)):
                        accuracy.append((it, i, acc))
    except DivergenceError as err:
        logd.sample_iters, logd.samples = sample_iters[:kept], samples[:kept]
        logd.consensus = consensus[:rec]
        logd.accuracy = np.array(accuracy, dtype=float).reshape(-1, 3)
        err.log = logd
        raise
    logd.sample_iters, logd.samples = sample_iters, samples
    logd.consensus = consensus
    logd.accuracy = np.array(accuracy, dtype=float).reshape(-1, 3)
    logd.final_state = W
    return logd


class _PredictiveTracker:
    """Running mean of ``sigmoid(X w)`` over retained samples, per agent."""

    def __init__(self, test_set, n):
        from scipy.special import expit

        self._expit = expit
        self.X, self.y = (np.asarray(v, dtype=float) for v in test_set)
        self.total = np.zeros((n, len(self.y)))
        self.count = 0

    def add(self, W):
        self.total += self._expit(W @ self.X.T)
        self.count += 1

    def accuracy(self, W):
        p = self.total / self.count if self.count else self._expit(W @ self.X.T)
        return ((p >= 0.5) == (self.y >= 0.5)).mean(axis=1)
