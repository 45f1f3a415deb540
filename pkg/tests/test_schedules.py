import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dula import schedules as S
from dula.errors import InvalidParameterError, InvalidScheduleError


class TestStepSizes:
    def test_plain_law(self):
        s = S.StepSchedule(a=0.5, b=0.2, delta1=0.05, delta2=0.55)
        assert S.alpha(s, 0) == pytest.approx(0.5)
        assert S.alpha(s, 3) == pytest.approx(0.5 / 4 ** 0.55)
        assert S.beta(s, 9) == pytest.approx(0.2 / 10 ** 0.05)

    def test_offset_form_matches_shifted_law(self):
        s = S.StepSchedule.from_offset_form(alpha0=0.00082, b1=230, delta2=0.55,
                                            beta0=0.48, b2=230, delta1=0.05)
        for k in (0, 1, 100, 10_000):
            assert s.alpha(k) == pytest.approx(0.00082 / (230 + k) ** 0.55, rel=1e-14)
            assert s.beta(k) == pytest.approx(0.48 / (230 + k) ** 0.05, rel=1e-14)

    def test_offset_below_one_rejected(self):
        with pytest.raises(InvalidScheduleError):
            S.StepSchedule.from_offset_form(1.0, 0.5, 0.55, 0.1, 1, 0.05)

    def test_array_input(self):
        s = S.StepSchedule(1.0, 0.1, 0.1, 0.7)
        ks = np.arange(5)
        assert np.allclose(s.alpha(ks), [s.alpha(int(k)) for k in ks])

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(1e-4, 10), d2=st.floats(0.01, 0.99), k=st.integers(0, 10**6))
    def test_alpha_positive_nonincreasing(self, a, d2, k):
        s = S.StepSchedule(a, 0.1, 0.0, d2)
        assert 0 < s.alpha(k + 1) <= s.alpha(k)


class TestValidate:
    def test_valid(self):
        v = S.validate(S.StepSchedule(1.0, 0.1, 0.05, 0.7))
        assert v.ok and bool(v) and not v.fatal

    def test_preset_exponents_violate_window(self):
        # 1/2 + 0.05 = 0.55 is not strictly below 0.55
        v = S.validate(S.StepSchedule(1.0, 0.1, 0.05, 0.55))
        assert not v.ok
        assert not v.fatal
        assert any("1/2 + delta1 < delta2" in m for m in v.violations)

    @pytest.mark.parametrize("kwargs,needle", [
        (dict(a=0.0, b=0.1, delta1=0.05, delta2=0.7), "a > 0"),
        (dict(a=1.0, b=-0.1, delta1=0.05, delta2=0.7), "b > 0"),
        (dict(a=1.0, b=0.1, delta1=-0.1, delta2=0.7), "delta1 >= 0"),
        (dict(a=1.0, b=0.1, delta1=0.05, delta2=0.7, offset1=-1.0), "offsets"),
    ])
    def test_fatal(self, kwargs, needle):
        v = S.validate(S.StepSchedule(**kwargs))
        assert any(needle in m for m in v.fatal)

    def test_delta2_at_least_one(self):
        v = S.validate(S.StepSchedule(1.0, 0.1, 0.05, 1.0))
        assert any("delta2 < 1" in m for m in v.violations)


class TestRecommendedGain:
    def test_ratio_is_24_over_25_for_single_agent(self):
        t = S.TheoreticalInputs(rho_u=2.0, lipschitz=3.0, gamma=2.5)
        g = S.recommended_a(t, n=1, delta2=0.7)
        assert g.ratio == pytest.approx(24 / 25, rel=1e-12)
        assert g.admissible

    def test_closed_form(self):
        t = S.TheoreticalInputs(rho_u=1.0, lipschitz=1.0, gamma=3.0)
        g = S.recommended_a(t, n=2, delta2=0.75)
        expected = 2 ** -3 * (1.0 * 1.25 / (25 * 0.75)) ** (1 / 3)
        assert g.a == pytest.approx(expected, rel=1e-12)
        assert g.ratio == pytest.approx(24 * 16 * 0.75 * expected ** 3 / 1.25, rel=1e-12)

    @pytest.mark.parametrize("n", [2, 5, 10, 50])
    def test_decreases_in_network_size(self, n):
        t = S.TheoreticalInputs(rho_u=1.0, lipschitz=2.0, gamma=2.5)
        assert S.recommended_a(t, n + 1, 0.7).a < S.recommended_a(t, n, 0.7).a
        assert S.recommended_a(t, n, 0.7).admissible

    def test_gamma_must_exceed_two(self):
        with pytest.raises(InvalidParameterError):
            S.TheoreticalInputs(rho_u=1.0, lipschitz=1.0, gamma=2.0)


class TestKStar:
    t = S.TheoreticalInputs(rho_u=1.0, lipschitz=1.0, gamma=3.0)
    s = S.StepSchedule(a=0.1, b=0.2, delta1=0.05, delta2=0.7)

    def test_zero_constants(self):
        assert S.k_star(self.t, self.s, 5, 0.1, 0, 0, 0, 0) == 0

    def test_closed_form(self):
        eps, F0, CF1, CF2, CF3 = 0.1, 1.0, 0.5, 2.0, 0.3
        n = 4
        q1 = (F0 + CF1) * math.exp(0.1 / 0.3) + CF3
        q2 = CF2 / n ** 1.0
        first = (0.3 / 0.1 * math.log(2 * q1 / eps)) ** (1 / 0.3)
        second = (2 * q2 / eps) ** (1 / 0.6)
        got = S.k_star(self.t, self.s, n, eps, F0, CF1, CF2, CF3)
        assert got == math.ceil(max(first, second))

    def test_monotone_in_epsilon(self):
        ks = [S.k_star(self.t, self.s, 5, e, 1, 1, 1, 1) for e in (0.5, 0.2, 0.1, 0.05)]
        assert ks == sorted(ks)

    def test_rejects_bad_epsilon(self):
        with pytest.raises(InvalidParameterError):
            S.k_star(self.t, self.s, 5, 1.5, 1, 1, 1, 1)

    def test_rejects_nonpositive_rate(self):
        s = S.StepSchedule(a=0.1, b=0.2, delta1=0.4, delta2=0.7)
        with pytest.raises(InvalidScheduleError):
            S.k_star(self.t, s, 5, 0.1, 1, 1, 1, 1)
