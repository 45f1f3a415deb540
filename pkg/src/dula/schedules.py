"""Power-law step sizes for the gradient (alpha) and consensus (beta) terms.

``alpha_k = a / (offset2 + k + 1) ** delta2`` and
``beta_k = b / (offset1 + k + 1) ** delta1``. Zero offsets give the plain
``a / (k + 1) ** delta2`` law; the shifted law ``alpha0 / (b1 + k) ** delta2``
used in the experiments corresponds to ``offset2 = b1 - 1`` (see
:meth:`StepSchedule.from_offset_form`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, InvalidScheduleError


@dataclass(frozen=True)
class StepSchedule:
    a: float
    b: float
    delta1: float
    delta2: float
    offset1: float = 0.0
    offset2: float = 0.0

    @classmethod
    def from_offset_form(cls, alpha0, b1, delta2, beta0, b2, delta1):
        """Build from ``alpha0 / (b1 + k) ** delta2`` and ``beta0 / (b2 + k) ** delta1``."""
        if b1 < 1 or b2 < 1:
            raise InvalidScheduleError("offset-form shifts b1, b2 must be >= 1")
        return cls(a=alpha0, b=beta0, delta1=delta1, delta2=delta2,
                   offset1=b2 - 1.0, offset2=b1 - 1.0)

    def alpha(self, k):
        """Gradient step size at iteration ``k`` (scalar or array)."""
        return self.a / (self.offset2 + np.asarray(k, dtype=float) + 1.0) ** self.delta2

    def beta(self, k):
        """Consensus step size at iteration ``k`` (scalar or array)."""
        return self.b / (self.offset1 + np.asarray(k, dtype=float) + 1.0) ** self.delta1


def alpha(s, k):
    return s.alpha(k)


def beta(s, k):
    return s.beta(k)


@dataclass(frozen=True)
class ScheduleVerdict:
    """Outcome of :func:`validate`.

    ``fatal`` lists violations that make the sampler meaningless (non-positive
    gains, negative exponents or offsets); ``violations`` lists every failed
    inequality, fatal or not.
    """

    violations: tuple = ()
    fatal: tuple = ()

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def validate(s):
    """Check every step-size inequality and name each failure."""
    violations, fatal = [], []

    def fail(msg, is_fatal=False):
        violations.append(msg)
        if is_fatal:
            fatal.append(msg)

    if not s.a > 0:
        fail(f"a > 0 violated (a={s.a})", True)
    if not s.b > 0:
        fail(f"b > 0 violated (b={s.b})", True)
    if not s.delta1 >= 0:
        fail(f"delta1 >= 0 violated (delta1={s.delta1})", True)
    if not (s.offset1 >= 0 and s.offset2 >= 0):
        fail(f"offsets must be >= 0 (offset1={s.offset1}, offset2={s.offset2})", True)
    lower = 0.5 + s.delta1
    if not s.delta2 > lower:
        fail(f"1/2 + delta1 < delta2 violated ({lower:g} not < {s.delta2:g})")
    if not s.delta2 < 1:
        fail(f"delta2 < 1 violated (delta2={s.delta2:g})")
    if not s.delta2 > 0:
        fail(f"delta2 > 0 violated (delta2={s.delta2:g})", True)
    return ScheduleVerdict(tuple(violations), tuple(fatal))


@dataclass(frozen=True)
class TheoreticalInputs:
    """User-supplied constants for the advisory convergence formulas.

    Attributes:
        rho_u: Log-Sobolev constant of the target.
        lipschitz: Largest Lipschitz constant of the local potential gradients.
        gamma: Speed-up exponent, strictly greater than 2.
        mu_g: Gradient-disagreement constant.
        d_w: Parameter dimension.
    """

    rho_u: float
    lipschitz: float
    gamma: float
    mu_g: float = 1.0
    d_w: int = 1

    def __post_init__(self):
        if not self.gamma > 2:
            raise InvalidParameterError(f"gamma must exceed 2, got {self.gamma}")
        for name in ("rho_u", "lipschitz", "mu_g", "d_w"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")


@dataclass(frozen=True)
class RecommendedGain:
    a: float
    ratio: float
    margin: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "margin", 1.0 - self.ratio)

    @property
    def admissible(self):
        return self.ratio < 1


def recommended_a(t, n, delta2):
    """Gradient gain ``a`` that keeps the averaged chain's second moment bounded.

    Returns the gain together with ``24 n^4 L^4 delta2 a^3 / (rho (3 delta2 - 1))``,
    which must stay below 1.
    """
    if not t.gamma > 2:
        raise InvalidParameterError(f"gamma must exceed 2, got {t.gamma}")
    if not (0.5 < delta2 < 1):
        raise InvalidScheduleError(f"delta2 must lie in (1/2, 1), got {delta2}")
    L4 = t.lipschitz ** 4
    a = n ** (-t.gamma) * (t.rho_u * (3 * delta2 - 1) / (25 * L4 * delta2)) ** (1 / 3)
    ratio = 24 * n ** 4 * L4 * delta2 * a ** 3 / (t.rho_u * (3 * delta2 - 1))
    return RecommendedGain(a=a, ratio=ratio)


def k_star(t, s, n, epsilon, F0, CF1, CF2, CF3):
    """Iterations after which the KL bound drops below ``epsilon``.

    Uses the gain ``s.a`` and exponents of ``s``. A branch whose argument is
    not positive (e.g. all constants zero) contributes 0.
    """
    if not 0 < epsilon < 1:
        raise InvalidParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    if min(F0, CF1, CF2, CF3) < 0:
        raise InvalidParameterError("bound constants must be nonnegative")
    rate = s.delta2 - 2 * s.delta1
    if rate <= 0:
        raise InvalidScheduleError(f"delta2 - 2 delta1 must be positive, got {rate}")
    if not s.delta2 < 1:
        raise InvalidScheduleError("delta2 must be < 1")
    ar = s.a * t.rho_u
    q1 = (F0 + CF1) * math.exp(ar / (1 - s.delta2)) + CF3
    q2 = CF2 / n ** (t.gamma - 2)

    first = 0.0
    if q1 > 0:
        arg = (1 - s.delta2) / ar * math.log(2 * q1 / epsilon)
        if arg > 0:
            first = arg ** (1 / (1 - s.delta2))
    second = (2 * q2 / epsilon) ** (1 / rate) if q2 > 0 else 0.0
    return int(math.ceil(max(first, second)))
