import logging

import numpy as np
import pytest

from dula import datasets as DS
from dula import models as M
from dula import sampler as SA
from dula import schedules as S
from dula import topology as T
from dula.errors import DivergenceError, InvalidParameterError, InvalidTopologyError


class ZeroModel(M.Model):
    """Flat potential; isolates the consensus term."""

    def __init__(self, n_agents, d_w=1):
        self.n_agents = n_agents
        self.d_w = d_w

    def shard_size(self, i):
        return 0

    def _local_grad(self, i, w, batch):
        return np.zeros_like(w)

    def _local_potential(self, i, w):
        return 0.0


class CountingModel(M.QuadraticGaussian):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.calls = []

    def local_grads(self, W, batches=None):
        self.calls.append(np.array(W))
        return super().local_grads(W, batches)


class BlowUp(M.QuadraticGaussian):
    """Gradient turns non-finite after a fixed number of calls."""

    def __init__(self, after):
        super().__init__(np.eye(2), n_agents=3)
        self.after = after
        self.count = 0

    def local_grads(self, W, batches=None):
        self.count += 1
        G = super().local_grads(W, batches)
        if self.count > self.after:
            G[1, 0] = np.inf
        return G


def gm(n, count=40):
    data = M.generate_gm_data(np.random.default_rng(0), count)
    parts = None if n == 1 else DS.partition(count, n, 0).shards()
    return M.GaussianMixtureTiedMeans(data, parts)


SCHED = S.StepSchedule(a=0.05, b=0.2, delta1=0.05, delta2=0.7)


class TestDulaStep:
    def test_consensus_hand_arithmetic(self):
        g = T.from_edges(2, [(0, 1)])
        st = SA.init_state(2, 1, seed=0, w0=None)
        st.w[:] = [[0.0], [2.0]]
        out = SA.dula_step(st, g, SCHED, ZeroModel(2), noise=False, beta=0.25)
        assert out.w.ravel().tolist() == [0.5, 1.5]
        assert out.k == 1

    def test_identical_states_stay_in_consensus(self):
        g = T.ring(5)
        st = SA.init_state(5, 2, 0, w0=[1.0, -2.0])
        for _ in range(50):
            st = SA.dula_step(st, g, SCHED, ZeroModel(5, 2), noise=False)
            assert np.all(st.w == st.w[0])

    def test_zero_noise_consensus_contracts(self):
        g = T.ring(5)
        lam2 = T.spectral_summary(g).lambda2
        beta = 0.2
        st = SA.init_state(5, 3, seed=1, init_scale=1.0)
        dev0 = np.linalg.norm(st.w - st.w.mean(0))
        for k in range(1, 60):
            st = SA.dula_step(st, g, SCHED, ZeroModel(5, 3), noise=False, beta=beta)
            dev = np.linalg.norm(st.w - st.w.mean(0))
            assert dev <= (1 - beta * lam2) ** k * dev0 + 1e-12

    def test_one_gradient_call_per_step_at_current_state(self):
        m = CountingModel(np.eye(2), n_agents=5)
        st = SA.init_state(5, 2, seed=3, init_scale=1.0)
        before = st.w.copy()
        SA.dula_step(st, T.ring(5), SCHED, m)
        assert len(m.calls) == 1
        assert np.array_equal(m.calls[0], before)

    def test_noise_variance_scales_with_network_size(self):
        n = 4
        st = SA.init_state(n, 1, seed=2)
        draws = []
        for _ in range(4000):
            st = SA.dula_step(st, T.ring(n), SCHED, ZeroModel(n), alpha=0.0, beta=0.0)
            draws.append(st.last_noise)
        assert np.var(np.array(draws)) == pytest.approx(n, rel=0.05)


class TestCulaStep:
    def test_zero_step_is_identity(self):
        st = SA.init_state(1, 2, 0, w0=[0.4, 0.1])
        out = SA.cula_step(st, SCHED, gm(1), alpha=0.0)
        assert np.array_equal(out.w, st.w)

    def test_ula_gaussian_variance(self):
        m = M.QuadraticGaussian(np.eye(2))
        st = SA.init_state(1, 2, seed=11)
        xs = []
        for k in range(100_000):
            st = SA.cula_step(st, SCHED, m, alpha=0.01)
            if k >= 10_000:
                xs.append(st.w[0])
        var = np.var(np.array(xs), axis=0)
        assert np.all((0.9 <= var) & (var <= 1.1))


class TestSgdStep:
    def test_quadratic_contraction(self):
        P = np.diag([3.0, 0.5])
        m = M.QuadraticGaussian(P)
        st = SA.init_state(1, 2, 0, w0=[1.0, -2.0])
        for _ in range(20):
            out = SA.sgd_step(st, SCHED, m, alpha=0.6)  # < 2 / 3
            assert np.linalg.norm(out.w) < np.linalg.norm(st.w)
            st = out

    def test_fixed_point(self):
        st = SA.init_state(1, 2, 0)
        out = SA.sgd_step(st, SCHED, M.QuadraticGaussian(np.eye(2)), alpha=0.3)
        assert np.array_equal(out.w, st.w)

    def test_separable_logistic_loss_decreases(self):
        r = np.random.default_rng(0)
        X = r.standard_normal((80, 3))
        y = (X @ np.array([2.0, -1.0, 0.5]) > 0).astype(float)
        m = M.BayesianLogisticRegression(X, y, prior_scale=1e6)
        st = SA.init_state(1, 3, 0, w0=[0.01, 0.01, 0.01])
        losses = [m.potential(st.w[0])]
        for _ in range(100):
            st = SA.sgd_step(st, SCHED, m, alpha=0.01)
            losses.append(m.potential(st.w[0]))
        assert np.all(np.diff(losses) < 0)


class TestAverageShadow:
    def test_residual_on_gm_ring(self):
        g, m = T.ring(5), gm(5)
        st = SA.init_state(5, 2, seed=4, init_scale=0.5)
        for _ in range(200):
            nxt = SA.dula_step(st, g, SCHED, m)
            assert SA.average_shadow(st, nxt, nxt.last_noise, SCHED, m) < 1e-10
            st = nxt

    def test_independent_of_beta(self):
        g, m = T.ring(5), gm(5)
        st = SA.init_state(5, 2, seed=4, init_scale=0.5)
        nxt = SA.dula_step(st, g, SCHED, m, beta=0.17)
        wrong = S.StepSchedule(SCHED.a, 0.01, SCHED.delta1, SCHED.delta2)
        assert SA.average_shadow(st, nxt, nxt.last_noise, wrong, m) < 1e-10

    def test_gradient_at_wrong_iterate_detected(self):
        g, m = T.ring(5), gm(5)
        st = SA.init_state(5, 2, seed=4, init_scale=0.5)
        nxt = SA.dula_step(st, g, SCHED, m)
        stale = m.local_grads(nxt.w)
        assert SA.average_shadow(st, nxt, nxt.last_noise, SCHED, m, grads=stale) > 1e-6

    def test_mismatched_noise_record(self):
        g, m = T.ring(5), gm(5)
        st = SA.init_state(5, 2, seed=4)
        nxt = SA.dula_step(st, g, SCHED, m)
        with pytest.raises(ValueError):
            SA.average_shadow(st, nxt, nxt.last_noise[:3], SCHED, m)


class TestSingleAgentReduction:
    @pytest.mark.parametrize("make", [lambda: gm(1),
                                      lambda: M.QuadraticGaussian(np.array([[2.0, 0.5], [0.5, 1.0]]))],
                             ids=["gm", "quadratic"])
    def test_bit_identical(self, make):
        m = make()
        cfg = dict(iterations=500, burn_in=0, seed=21, record_every=1)
        a = SA.run(SA.RunConfig(engine="dula", **cfg), T.Graph(1), SCHED, m)
        b = SA.run(SA.RunConfig(engine="cula", **cfg), T.Graph(1), SCHED, m)
        assert np.array_equal(a.samples, b.samples)

    def test_bit_identical_minibatch(self):
        r = np.random.default_rng(1)
        X = r.standard_normal((50, 3))
        y = (r.random(50) < 0.5).astype(float)
        m = M.BayesianLogisticRegression(X, y)
        cfg = dict(iterations=300, seed=2, batch_size=10)
        a = SA.run(SA.RunConfig(engine="dula", **cfg), T.Graph(1), SCHED, m)
        b = SA.run(SA.RunConfig(engine="cula", **cfg), T.Graph(1), SCHED, m)
        assert np.array_equal(a.samples, b.samples)


class TestRun:
    def test_deterministic(self):
        cfg = SA.RunConfig(iterations=300, seed=5, init_scale=0.3)
        a = SA.run(cfg, T.ring(5), SCHED, gm(5))
        b = SA.run(cfg, T.ring(5), SCHED, gm(5))
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.consensus, b.consensus, equal_nan=True)

    def test_record_counts(self):
        lg = SA.run(SA.RunConfig(iterations=10, record_every=1), T.ring(3), SCHED, gm(3))
        assert len(lg.consensus) == 10
        assert lg.consensus[:, 0].tolist() == list(range(1, 11))

    def test_single_kept_sample(self):
        lg = SA.run(SA.RunConfig(iterations=10, burn_in=9), T.ring(3), SCHED, gm(3))
        assert lg.samples.shape == (1, 3, 2)
        assert lg.sample_iters.tolist() == [10]

    def test_thinning(self):
        lg = SA.run(SA.RunConfig(iterations=100, burn_in=20, thinning=7), T.ring(3), SCHED, gm(3))
        assert lg.sample_iters.tolist() == list(range(21, 101, 7))

    def test_disconnected_graph_rejected(self):
        g = T.from_edges(4, [(0, 1), (2, 3)])
        with pytest.raises(InvalidTopologyError):
            SA.run(SA.RunConfig(iterations=5), g, SCHED, gm(4))

    def test_shard_count_mismatch(self):
        with pytest.raises(InvalidParameterError):
            SA.run(SA.RunConfig(iterations=5), T.ring(5), SCHED, gm(4))

    def test_fatal_schedule_rejected(self):
        bad = S.StepSchedule(a=-1.0, b=0.2, delta1=0.05, delta2=0.7)
        with pytest.raises(InvalidParameterError):
            SA.run(SA.RunConfig(iterations=5), T.ring(3), bad, gm(3))

    def test_window_violation_only_warns(self, caplog):
        s = S.StepSchedule(a=0.05, b=0.2, delta1=0.05, delta2=0.55)
        with caplog.at_level(logging.WARNING):
            SA.run(SA.RunConfig(iterations=5), T.ring(3), s, gm(3))
        assert "1/2 + delta1 < delta2" in caplog.text

    def test_divergence_keeps_partial_log(self):
        cfg = SA.RunConfig(iterations=50, record_every=1)
        with pytest.raises(DivergenceError) as exc:
            SA.run(cfg, T.ring(3), SCHED, BlowUp(after=12))
        err = exc.value
        assert err.iteration == 12 and err.agent == 1
        assert len(err.log.consensus) == 12
        assert np.all(np.isfinite(err.log.samples))

    @pytest.mark.parametrize("kwargs", [dict(engine="mcmc"), dict(iterations=0),
                                        dict(iterations=5, burn_in=5), dict(thinning=0)])
    def test_invalid_config(self, kwargs):
        with pytest.raises(InvalidParameterError):
            SA.RunConfig(**kwargs)


def test_consensus_error_decays_on_gm():
    g, m = T.ring(5), gm(5, count=100)
    s = S.StepSchedule.from_offset_form(0.199, 231, 0.55, 0.9 / T.spectral_summary(g).sigma_max, 231, 0.05)
    errs = []
    for seed in range(20):
        lg = SA.run(SA.RunConfig(iterations=10_000, record_every=100, seed=seed,
                                 record_samples=False), g, s, m)
        errs.append(lg.consensus[:, 1])
    mean = np.mean(errs, axis=0)
    assert mean[-1] < mean[0]  # iteration 10^4 vs 10^2
