"""Evaluation tools: consensus error and its bound, Sinkhorn distances,
grid reference posteriors and test-accuracy curves."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit, logsumexp

from .errors import BoundUnavailableError, InvalidParameterError
from .models import GaussianMixtureTiedMeans
from .topology import spectral_summary

log = logging.getLogger(__name__)

# exp(-x) underflows double precision beyond this
_EXP_CUTOFF = 700.0


# ---------------------------------------------------------------- consensus


def consensus_error(w, n=None, d_w=None):
    """Squared norm of the disagreement component of the stacked state.

    ``w`` is either ``(n, d_w)`` or the flat ``n * d_w`` vector.
    """
    W = np.asarray(w, dtype=float)
    if W.ndim == 1:
        if n is None:
            raise InvalidParameterError("flat input needs n")
        d_w = W.size // n if d_w is None else d_w
        if n * d_w != W.size:
            raise InvalidParameterError("dimensions do not match the stacked vector")
        W = W.reshape(n, d_w)
    c = W - W.mean(axis=0)
    return float(np.sum(c * c))


@dataclass(frozen=True)
class ConsensusBoundConstants:
    W1: float
    W2: float
    W3: float
    W4: float
    kbar: int
    delta1: float
    delta2: float

    @property
    def rate(self):
        return self.delta2 - 2 * self.delta1


def bound_constants(graph, schedule, mu_g, d_w, E_w0_sq):
    """Constants of the mean-square consensus bound for a power-law schedule.

    Assumes the plain ``a / (k + 1) ** delta2``, ``b / (k + 1) ** delta1``
    law (offsets are ignored with a warning).
    """
    lam2 = spectral_summary(graph).lambda2
    n = graph.n
    a, b = schedule.a, schedule.b
    d1, d2 = schedule.delta1, schedule.delta2
    if schedule.offset1 or schedule.offset2:
        log.warning("consensus bound assumes zero schedule offsets")
    mb = b * lam2
    if not 0 < mb < 1:
        raise InvalidParameterError(f"b * lambda2 must lie in (0, 1), got {mb}")
    if d1 <= 0:
        raise BoundUnavailableError("the closed-form bound needs delta1 > 0 (constant beta unsupported)")
    if not d2 > d1:
        raise InvalidParameterError("delta2 must exceed delta1")

    W1 = mb / (1 - d1)
    # drift of the one-step recursion: 2 n^2 a (2 d_w / sqrt(1 - b lam2) + n a mu_g) / (b lam2)
    drive = 2 * n * n * a * (2 * d_w / math.sqrt(1 - mb) + n * a * mu_g)
    W2 = drive * (d2 - d1) / (mb * mb * d1) * math.exp(W1 * 2 ** (1 - d1))
    kbar = math.ceil(((d2 - d1) / mb) ** (1 / (1 - d1)))
    ell = np.arange(kbar + 1)
    tail = float(np.sum(np.exp(-ell * math.log1p(-mb)) / (ell + 1.0) ** (d2 - d1)))
    W3 = math.exp(W1) * (E_w0_sq + drive / mb * tail)
    p = d2 - 2 * d1
    if p > 0:
        W4 = W3 * math.exp(-p / (1 - d1)) * (p / mb) ** (p / (1 - d1))
    else:
        W4 = math.inf
    return ConsensusBoundConstants(W1, W2, W3, W4, kbar, d1, d2)


def consensus_bound(c, k, delta1=None, delta2=None):
    """``W3 exp(-W1 (k+1)^(1-delta1)) + W2 / (k+1)^(delta2 - 2 delta1)``.

    Bounds the expected squared consensus error one step after ``k``.
    Returns ``inf`` (vacuous) when ``delta2 <= 2 delta1``.
    """
    d1 = c.delta1 if delta1 is None else delta1
    d2 = c.delta2 if delta2 is None else delta2
    p = d2 - 2 * d1
    if p <= 0:
        log.warning("consensus bound is vacuous: delta2 - 2 delta1 = %g", p)
        return np.full(np.shape(k), np.inf) if np.ndim(k) else math.inf
    kk = np.asarray(k, dtype=float) + 1.0
    expo = c.W1 * kk ** (1 - d1) - (math.log(c.W3) if c.W3 > 0 else -math.inf)
    first = np.where(expo > _EXP_CUTOFF, 0.0, np.exp(-np.minimum(expo, _EXP_CUTOFF)))
    out = first + c.W2 / kk ** p
    return float(out) if np.ndim(out) == 0 else out


def consensus_rate_bound(c, k, delta1=None, delta2=None):
    """Single-term form ``(W2 + W4) / (k+1)^(delta2 - 2 delta1)``; never below :func:`consensus_bound`."""
    d1 = c.delta1 if delta1 is None else delta1
    d2 = c.delta2 if delta2 is None else delta2
    p = d2 - 2 * d1
    if p <= 0:
        return np.full(np.shape(k), np.inf) if np.ndim(k) else math.inf
    out = (c.W2 + c.W4) / (np.asarray(k, dtype=float) + 1.0) ** p
    return float(out) if np.ndim(out) == 0 else out


def estimate_mu_g(graph, schedule, model, iterations, seed=0, init_scale=0.0):
    """Pilot estimate of the gradient-disagreement constant.

    Runs the decentralized sampler and returns
    ``max_k ||g_k - mean_i g_k||^2 / (n (1 + k)^delta2)`` over full-shard
    gradients. Advisory only.
    """
    from .sampler import dula_step, init_state

    n = graph.n
    state = init_state(n, model.d_w, seed, init_scale)
    best = 0.0
    for k in range(iterations):
        G = model.local_grads(state.w)
        Gt = G - G.mean(axis=0)
        best = max(best, float(np.sum(Gt * Gt)) / (n * (1.0 + k) ** schedule.delta2))
        state = dula_step(state, graph, schedule, model)
    return best


# ---------------------------------------------------------------- Sinkhorn


@dataclass(frozen=True)
class DiscreteDistribution:
    """Weighted atoms; weights are nonnegative and sum to one."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise InvalidParameterError("one weight per support point required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, points, weights):
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        # one correction pass keeps the sum within a few ulps of 1
        w = w / math.fsum(w)
        return cls(points, w)

    def pruned(self):
        keep = self.weights > 0
        if keep.all():
            return self
        return DiscreteDistribution.normalized(self.points[keep], self.weights[keep])


@dataclass(frozen=True)
class SinkhornResult:
    distance: float
    converged: bool
    iterations: int
    marginal_error: float
    plan: np.ndarray | None = None

    def __float__(self):
        return self.distance


def _sinkhorn_plan(p, q, C, eps, max_iter, tol, check_every=10):
    """Balanced entropic plan; scaling form when the kernel is representable, log form otherwise."""
    if C.max() / eps < 600:
        K = np.exp(-C / eps)
        u = np.ones_like(p)
        v = np.ones_like(q)
        err = math.inf
        for it in range(1, max_iter + 1):
            u = p / (K @ v)
            v = q / (K.T @ u)
            if it % check_every == 0 or it == max_iter:
                err = float(np.abs(u * (K @ v) - p).sum())
                if err < tol:
                    break
        return u[:, None] * K * v[None, :], it, err
    logp, logq = np.log(p), np.log(q)
    f = np.zeros_like(p)
    g = np.zeros_like(q)
    M = -C / eps
    err = math.inf
    for it in range(1, max_iter + 1):
        f = eps * (logp - logsumexp(M + g[None, :] / eps, axis=1))
        g = eps * (logq - logsumexp(M + f[:, None] / eps, axis=0))
        if it % check_every == 0 or it == max_iter:
            T = np.exp(M + (f[:, None] + g[None, :]) / eps)
            err = float(np.abs(T.sum(axis=1) - p).sum())
            if err < tol:
                break
    return np.exp(M + (f[:, None] + g[None, :]) / eps), it, err


def sinkhorn_distance(P, Q, lam=0.1, max_iter=10_000, tol=1e-9,
                      convention="regularization", debiased=False, return_plan=False):
    """Transport cost of the entropic optimal plan under squared-Euclidean cost.

    Args:
        P, Q: :class:`DiscreteDistribution` inputs; zero-weight atoms are dropped.
        lam: Regularization. With ``convention="regularization"`` the kernel
            is ``exp(-C / lam)``; with ``"inverse"`` it is ``exp(-lam * C)``.
        max_iter, tol: Stop once the L1 marginal violation is below ``tol``.
        debiased: Subtract the self-transport costs,
            ``S(P, Q) - (S(P, P) + S(Q, Q)) / 2``, so that ``P == Q`` gives 0.

    Returns:
        SinkhornResult with the cost ``sum T_ij C_ij`` (entropy excluded).
    """
    if not lam > 0:
        raise InvalidParameterError("lam must be positive")
    if convention not in ("regularization", "inverse"):
        raise InvalidParameterError(f"unknown convention {convention!r}")
    eps = lam if convention == "regularization" else 1.0 / lam
    P, Q = P.pruned(), Q.pruned()
    if len(P.weights) == 0 or len(Q.weights) == 0:
        raise InvalidParameterError("empty support")

    def solve(A, B):
        C = cdist(A.points, B.points, "sqeuclidean")
        T, it, err = _sinkhorn_plan(A.weights, B.weights, C, eps, max_iter, tol)
        return float(np.sum(T * C)), T, it, err

    d, T, it, err = solve(P, Q)
    converged = err < tol
    if debiased:
        dp, _, itp, errp = solve(P, P)
        dq, _, itq, errq = solve(Q, Q)
        d = d - 0.5 * (dp + dq)
        converged = converged and errp < tol and errq < tol
        err = max(err, errp, errq)
    if not converged:
        log.warning("Sinkhorn stopped after %d iterations with marginal error %.3g", it, err)
    return SinkhornResult(d, converged, it, err, T if return_plan else None)


# ---------------------------------------------------------------- GM grid


@dataclass(frozen=True)
class GridSpec:
    theta1: tuple = (-1.5, 2.5)
    theta2: tuple = (-3.0, 3.0)
    step: float = 0.1

    def axes(self):
        def axis(lo, hi):
            m = int(round((hi - lo) / self.step)) + 1
            return lo + self.step * np.arange(m)

        return axis(*self.theta1), axis(*self.theta2)

    def points(self):
        a1, a2 = self.axes()
        t1, t2 = np.meshgrid(a1, a2, indexing="ij")
        return np.column_stack([t1.ravel(), t2.ravel()])

    def refined(self, factor=2):
        return GridSpec(self.theta1, self.theta2, self.step / factor)


def gm_reference_posterior(data, grid=GridSpec(), **model_kwargs):
    """Grid discretization of the exact tied-means posterior.

    ``data`` is either the observation array or a
    :class:`GaussianMixtureTiedMeans` model.
    """
    model = data if isinstance(data, GaussianMixtureTiedMeans) else \
        GaussianMixtureTiedMeans(data, **model_kwargs)
    pts = grid.points()
    logp = model.log_posterior_grid(pts)
    return DiscreteDistribution.normalized(pts, np.exp(logp - logp.max()))


def histogram_on_grid(samples, grid=GridSpec()):
    """Bin samples to their nearest grid node; samples outside the grid are dropped."""
    s = np.asarray(samples, dtype=float).reshape(-1, 2)
    a1, a2 = grid.axes()
    i = np.rint((s[:, 0] - a1[0]) / grid.step).astype(np.int64)
    j = np.rint((s[:, 1] - a2[0]) / grid.step).astype(np.int64)
    inside = (i >= 0) & (i < len(a1)) & (j >= 0) & (j < len(a2))
    if not inside.any():
        raise InvalidParameterError("no samples fall inside the grid")
    counts = np.bincount(i[inside] * len(a2) + j[inside], minlength=len(a1) * len(a2))
    return DiscreteDistribution.normalized(grid.points(), counts.astype(float))


def mode_masses(samples, modes=((0.0, 1.0), (1.0, -1.0)), radius=0.3):
    """Fraction of samples within ``radius`` of each mode."""
    s = np.asarray(samples, dtype=float).reshape(-1, 2)
    return [float(np.mean(np.linalg.norm(s - np.asarray(m), axis=1) <= radius)) for m in modes]


# ---------------------------------------------------------------- accuracy


def accuracy_curve(samples, X, y, retained=None):
    """Test accuracy of the running posterior-mean predictive.

    Args:
        samples: ``(T, n_agents, d)`` parameter snapshots in iteration order.
        X, y: Test features and {0, 1} labels.
        retained: Boolean mask over ``T``; only retained snapshots enter the
            running mean. Before the first retained snapshot the current
            iterate is used on its own. Defaults to all retained.

    Returns:
        ``(T, n_agents)`` accuracies; a predictive probability of exactly 0.5
        counts as class 1.
    """
    S = np.asarray(samples, dtype=float)
    if S.ndim == 2:
        S = S[:, None, :]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y) >= 0.5
    if len(y) == 0:
        raise InvalidParameterError("empty test set")
    retained = np.ones(len(S), dtype=bool) if retained is None else np.asarray(retained, bool)
    total = np.zeros((S.shape[1], len(y)))
    count = 0
    out = np.empty(S.shape[:2])
    for t, W in enumerate(S):
        prob = expit(W @ X.T)
        if retained[t]:
            total += prob
            count += 1
        p = total / count if count else prob
        out[t] = ((p >= 0.5) == y).mean(axis=1)
    return out


def aggregate_runs(curves):
    """Mean and standard deviation across replications, elementwise."""
    A = np.asarray(curves, dtype=float)
    return A.mean(axis=0), A.std(axis=0)
