"""Target posteriors split across agents.

Agent ``i`` holds shard ``X_i`` and the local potential

    U_i(w) = -log p(X_i | w) - (1/n) log p(w),

so that the potentials sum to the negative log of the global posterior.
``local_grad`` returns ``grad U_i``; the samplers apply the sign.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize
from scipy.special import expit

from .errors import InvalidParameterError, NumericInputError


def _check_finite(w):
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise NumericInputError("parameter vector contains non-finite entries")
    return w


class Model:
    """Common interface; subclasses implement the per-agent potential and gradient."""

    d_w: int
    n_agents: int

    def shard_size(self, i):
        raise NotImplementedError

    def _local_grad(self, i, w, batch):
        raise NotImplementedError

    def _local_potential(self, i, w):
        raise NotImplementedError

    def local_grad(self, i, w, batch=None):
        """Gradient of ``U_i`` at ``w``.

        With ``batch`` (indices into shard ``i``) the likelihood part is
        estimated from those rows and rescaled by ``shard_size / len(batch)``;
        the prior share is never rescaled.
        """
        if not 0 <= i < self.n_agents:
            raise IndexError(f"agent {i} out of range")
        return self._local_grad(i, _check_finite(w), batch)

    def local_potential(self, i, w):
        """``U_i(w)`` up to an additive constant."""
        return self._local_potential(i, _check_finite(w))

    def local_grads(self, W, batches=None):
        """Stacked gradients, row ``i`` evaluated at ``W[i]`` on agent ``i``'s data."""
        W = _check_finite(W)
        out = np.empty_like(W)
        for i in range(self.n_agents):
            out[i] = self._local_grad(i, W[i], None if batches is None else batches[i])
        return out

    def global_grad(self, w):
        w = _check_finite(w)
        return self.local_grads(np.broadcast_to(w, (self.n_agents, w.size))).sum(axis=0)

    def potential(self, w):
        w = _check_finite(w)
        return math.fsum(self._local_potential(i, w) for i in range(self.n_agents))

    def log_posterior_unnormalized(self, w):
        return -self.potential(w)


class QuadraticGaussian(Model):
    """Gaussian target ``N(0, inv(precision))`` with heterogeneous local pieces.

    Agent ``i`` holds ``U_i(w) = 0.5 (w - m_i)' (s_i P) (w - m_i)`` with shares
    ``s_i`` summing to 1 and centers satisfying ``sum_i s_i m_i = 0``, so the
    potentials sum to ``0.5 w' P w`` plus a constant.
    """

    def __init__(self, precision, n_agents=1, shares=None, centers=None):
        P = np.atleast_2d(np.asarray(precision, dtype=float))
        if P.shape[0] != P.shape[1] or not np.allclose(P, P.T):
            raise InvalidParameterError("precision must be a symmetric square matrix")
        if np.linalg.eigvalsh(P).min() <= 0:
            raise InvalidParameterError("precision must be positive definite")
        self.precision = P
        self.d_w = P.shape[0]
        self.n_agents = int(n_agents)
        s = np.full(self.n_agents, 1.0 / self.n_agents) if shares is None else np.asarray(shares, float)
        if s.shape != (self.n_agents,) or np.any(s < 0) or not np.isclose(s.sum(), 1.0):
            raise InvalidParameterError("shares must be nonnegative and sum to 1")
        m = np.zeros((self.n_agents, self.d_w)) if centers is None else np.asarray(centers, float)
        if m.shape != (self.n_agents, self.d_w):
            raise InvalidParameterError("centers must have shape (n_agents, d_w)")
        if np.max(np.abs(s @ m), initial=0.0) > 1e-9 * max(1.0, np.abs(m).max()):
            raise InvalidParameterError("share-weighted centers must sum to zero")
        self.shares = s
        self.centers = m
        self._local_prec = s[:, None, None] * P

    @classmethod
    def heterogeneous(cls, precision, n_agents, spread, rng):
        """Random unequal shares and centers, rebalanced to keep the target exact."""
        shares = rng.uniform(0.5, 1.5, size=n_agents)
        shares /= shares.sum()
        d = np.atleast_2d(precision).shape[0]
        centers = rng.normal(scale=spread, size=(n_agents, d))
        centers -= (shares @ centers) / shares.sum()
        return cls(precision, n_agents, shares, centers)

    @property
    def lipschitz(self):
        """Largest Lipschitz constant among the local gradients."""
        return float(np.linalg.eigvalsh(self.precision).max() * self.shares.max())

    @property
    def covariance(self):
        return np.linalg.inv(self.precision)

    def shard_size(self, i):
        return 0

    def _local_grad(self, i, w, batch):
        return self._local_prec[i] @ (w - self.centers[i])

    def local_grads(self, W, batches=None):
        W = _check_finite(W)
        return np.einsum("ijk,ik->ij", self._local_prec, W - self.centers)

    def _local_potential(self, i, w):
        r = w - self.centers[i]
        return 0.5 * float(r @ self._local_prec[i] @ r)


class GaussianMixtureTiedMeans(Model):
    """Two-component mixture with tied means, parameter ``w = [theta1, theta2]``.

    ``x ~ 0.5 N(theta1, sx2) + 0.5 N(theta1 + theta2, sx2)`` with independent
    Gaussian priors on ``theta1`` (variance ``s1``) and ``theta2`` (variance ``s2``).
    """

    d_w = 2

    def __init__(self, data, partition=None, sigma1_sq=10.0, sigma2_sq=1.0, sigmax_sq=2.0):
        data = np.asarray(data, dtype=float).ravel()
        shards = [data] if partition is None else [data[np.asarray(p, dtype=int)] for p in partition]
        self.data = data
        self.shards = shards
        self.n_agents = len(shards)
        self.sigma1_sq = sigma1_sq
        self.sigma2_sq = sigma2_sq
        self.sigmax_sq = sigmax_sq
        width = max((len(s) for s in shards), default=0)
        self._pad = np.zeros((self.n_agents, width))
        self._mask = np.zeros((self.n_agents, width))
        for i, s in enumerate(shards):
            self._pad[i, :len(s)] = s
            self._mask[i, :len(s)] = 1.0
        self._prior_prec = np.array([1.0 / sigma1_sq, 1.0 / sigma2_sq])

    def shard_size(self, i):
        return len(self.shards[i])

    def _terms(self, x, w):
        # responsibilities of the shifted component, computed in logistic form
        d1 = x - w[..., 0:1]
        d2 = d1 - w[..., 1:2]
        r = expit((d1 * d1 - d2 * d2) / (2 * self.sigmax_sq))
        return d1, d2, r

    def _lik_grad(self, x, w, mask=None):
        d1, d2, r = self._terms(x, w)
        g1 = ((1 - r) * d1 + r * d2) / self.sigmax_sq
        g2 = r * d2 / self.sigmax_sq
        if mask is not None:
            g1, g2 = g1 * mask, g2 * mask
        return np.stack([g1.sum(axis=-1), g2.sum(axis=-1)], axis=-1)

    def _local_grad(self, i, w, batch):
        x = self.shards[i]
        scale = 1.0
        if batch is not None:
            batch = np.asarray(batch, dtype=int)
            scale = len(x) / len(batch) if len(batch) else 0.0
            x = x[batch]
        lik = self._lik_grad(x, w) * scale
        return -lik + self._prior_prec * w / self.n_agents

    def local_grads(self, W, batches=None):
        if batches is not None:
            return super().local_grads(W, batches)
        W = _check_finite(W)
        lik = self._lik_grad(self._pad, W, self._mask)
        return -lik + self._prior_prec * W / self.n_agents

    def _loglik(self, x, w):
        c = -0.5 * math.log(2 * math.pi * self.sigmax_sq) - math.log(2.0)
        d1 = x - w[..., 0:1]
        d2 = d1 - w[..., 1:2]
        return np.logaddexp(-d1 * d1 / (2 * self.sigmax_sq), -d2 * d2 / (2 * self.sigmax_sq)) + c

    def _log_prior(self, w):
        return -0.5 * (w[..., 0] ** 2 / self.sigma1_sq + w[..., 1] ** 2 / self.sigma2_sq)

    def _local_potential(self, i, w):
        x = self.shards[i]
        return float(-self._loglik(x, w).sum() - self._log_prior(w) / self.n_agents)

    def log_posterior_grid(self, points):
        """Unnormalized log posterior at each row of ``points`` (shape (m, 2))."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return self._loglik(self.data[None, :], pts).sum(axis=-1) + self._log_prior(pts)


def generate_gm_data(rng, count, theta1=0.0, theta2=1.0, sigmax_sq=2.0):
    """Draw ``count`` observations from the tied-means mixture (fair-coin component)."""
    if count < 1:
        raise InvalidParameterError("count must be >= 1")
    coin = rng.integers(0, 2, size=count)
    noise = rng.standard_normal(count)
    return theta1 + coin * theta2 + math.sqrt(sigmax_sq) * noise


class BayesianLogisticRegression(Model):
    """Logistic likelihood with labels in {0, 1} and a Laplace(0, scale) prior.

    Features are stored densely per shard.
    """

    def __init__(self, X, y, partition=None, prior_scale=1.0):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise InvalidParameterError("X must be (N, d) and y must be (N,)")
        if partition is None:
            partition = [np.arange(X.shape[0])]
        self.X_shards = [X[np.asarray(p, dtype=int)] for p in partition]
        self.y_shards = [y[np.asarray(p, dtype=int)] for p in partition]
        self.n_agents = len(partition)
        self.d_w = X.shape[1]
        self.prior_scale = float(prior_scale)

    def shard_size(self, i):
        return len(self.y_shards[i])

    def _rows(self, i, batch):
        X, y = self.X_shards[i], self.y_shards[i]
        if batch is None:
            return X, y, 1.0
        batch = np.asarray(batch, dtype=int)
        if len(batch) == 0:
            return X[:0], y[:0], 0.0
        return X[batch], y[batch], len(y) / len(batch)

    def _prior_grad(self, w):
        # subgradient of |w_j| at 0 is taken as 0
        return np.sign(w) / (self.prior_scale * self.n_agents)

    def _local_grad(self, i, w, batch):
        X, y, scale = self._rows(i, batch)
        resid = y - expit(X @ w)
        return -scale * (X.T @ resid) + self._prior_grad(w)

    def local_grads(self, W, batches=None):
        W = _check_finite(W)
        if batches is None or len({len(b) for b in batches}) != 1:
            return super().local_grads(W, batches)
        Xb = np.stack([self.X_shards[i][b] for i, b in enumerate(batches)])
        yb = np.stack([self.y_shards[i][b] for i, b in enumerate(batches)])
        scale = np.array([self.shard_size(i) for i in range(self.n_agents)], float) / Xb.shape[1]
        resid = yb - expit(np.einsum("ibd,id->ib", Xb, W))
        lik = np.einsum("ibd,ib->id", Xb, resid) * scale[:, None]
        return -lik + self._prior_grad(W)

    def _local_potential(self, i, w):
        X, y = self.X_shards[i], self.y_shards[i]
        z = X @ w
        loglik = float(np.sum(y * z - np.logaddexp(0.0, z)))
        return -loglik + float(np.abs(w).sum()) / (self.prior_scale * self.n_agents)

    def map_estimate(self):
        """MAP point via L-BFGS-B on the split ``w = u - v`` with ``u, v >= 0``."""
        X = np.concatenate(self.X_shards)
        y = np.concatenate(self.y_shards)
        d = self.d_w
        lam = 1.0 / self.prior_scale

        def fun(uv):
            w = uv[:d] - uv[d:]
            z = X @ w
            f = -np.sum(y * z - np.logaddexp(0.0, z)) + lam * uv.sum()
            g = -X.T @ (y - expit(z))
            return f, np.concatenate([g + lam, -g + lam])

        res = optimize.minimize(fun, np.zeros(2 * d), jac=True, method="L-BFGS-B",
                                bounds=[(0, None)] * (2 * d),
                                options={"maxiter": 5000, "ftol": 1e-12, "gtol": 1e-8})
        return res.x[:d] - res.x[d:]


def predict_proba(X, w):
    return expit(np.asarray(X) @ w)
