"""Closed-form results for the Keller-Segel system with nonlocal logistic growth.

Everything here is a pure function of its arguments.  The total mass obeys the
logistic law ``dm/dt = m (M0 - m)`` exactly, so the mass, the second moment and
the critical constants are available without simulation.  The solvers in
:mod:`nlks.radialmass` and :mod:`nlks.planefield` are checked against these.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError

EIGHT_PI = 8.0 * math.pi

#: Relative half-width of the band around 8*pi treated as "equal to 8*pi".
CRITICAL_RTOL = 1e-12


def compare_8pi(x: float) -> int:
    """Return -1, 0 or +1 as ``x`` is below, within the band of, or above 8*pi."""
    if abs(x - EIGHT_PI) <= CRITICAL_RTOL * EIGHT_PI:
        return 0
    return -1 if x < EIGHT_PI else 1


def _same(a: float, b: float) -> bool:
    return abs(a - b) <= CRITICAL_RTOL * max(abs(a), abs(b))


def _check_time(t):
    t = float(t)
    if not math.isfinite(t) or t < 0:
        raise DomainError(f"time must be finite and non-negative, got {t!r}")
    return t


@dataclass(frozen=True)
class GrowthParams:
    """Growth capacity ``M0`` and initial mass ``m0``."""

    M0: float
    m0: float
    cbar: float = field(init=False)

    def __post_init__(self):
        M0, m0 = float(self.M0), float(self.m0)
        if not (math.isfinite(M0) and math.isfinite(m0)) or M0 <= 0 or m0 <= 0:
            raise DomainError(f"M0 and m0 must be positive and finite, got M0={M0!r}, m0={m0!r}")
        object.__setattr__(self, "M0", M0)
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "cbar", (M0 - m0) / m0)

    @property
    def regime(self) -> "Regime":
        return classify(self)


def mass_at(p: GrowthParams, t: float) -> float:
    """Total mass ``M0 / (1 + cbar exp(-M0 t))``."""
    t = _check_time(t)
    if t == 0.0:
        return p.m0
    return p.M0 / (1.0 + p.cbar * math.exp(-p.M0 * t))


def mass_at_array(p: GrowthParams, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0):
        raise DomainError("times must be finite and non-negative")
    return np.where(t == 0.0, p.m0, p.M0 / (1.0 + p.cbar * np.exp(-p.M0 * t)))


def mass_rate(p: GrowthParams, m: float) -> float:
    """Right-hand side ``m (M0 - m)`` of the mass equation."""
    m = float(m)
    if not math.isfinite(m) or m < 0:
        raise DomainError(f"mass must be non-negative, got {m!r}")
    return m * (p.M0 - m)


def logistic_update(M0: float, m: float, dt: float) -> float:
    """Exact mass after evolving ``dm/dt = m (M0 - m)`` from ``m`` for ``dt``."""
    if m == 0.0:
        return 0.0
    return M0 * m / (m + (M0 - m) * math.exp(-M0 * dt))


def _log_growth(p: GrowthParams, t: float) -> float:
    # ln(m0/M0 e^{M0 t} + (M0-m0)/M0), written to avoid overflow for large M0 t
    if t == 0.0:
        return 0.0
    a = math.log(p.m0 / p.M0) + p.M0 * t
    b = (p.M0 - p.m0) / p.M0
    if b == 0.0:
        return a
    # ln(e^a + b) = a + ln(1 + b e^{-a});  b > -1 e^{a} always holds here
    return a + math.log1p(b * math.exp(-a))


def normalized_second_moment(p: GrowthParams, m2_0: float, t: float) -> float:
    """The second moment divided by the current mass (the quantity ``h(t)``)."""
    return 4.0 * t - _log_growth(p, t) / (2.0 * math.pi) + m2_0 / p.m0


def second_moment_at(p: GrowthParams, m2_0: float, t: float) -> float:
    """Closed-form second moment; negative values mean blow-up happened earlier."""
    t = _check_time(t)
    m2_0 = float(m2_0)
    if not math.isfinite(m2_0) or m2_0 < 0:
        raise DomainError(f"initial second moment must be non-negative, got {m2_0!r}")
    if t == 0.0:
        return m2_0
    return mass_at(p, t) * normalized_second_moment(p, m2_0, t)


def h_min_time(p: GrowthParams) -> Optional[float]:
    """Time at which the mass trajectory crosses 8*pi, or ``None`` if it never does.

    This is where ``h'(t) = 4 - m(t)/(2 pi)`` vanishes.
    """
    if compare_8pi(p.m0) == 0:
        return 0.0
    lo, hi = sorted((p.m0, p.M0))
    # the open interval (m0, M0) must contain 8 pi
    if not (lo < EIGHT_PI < hi) or compare_8pi(p.M0) == 0:
        return None
    # M0 / (1 + cbar e^{-M0 t}) = 8 pi
    ratio = (p.M0 - EIGHT_PI) * p.m0 / (EIGHT_PI * (p.M0 - p.m0))
    return -math.log(ratio) / p.M0


def critical_second_moment(p: GrowthParams) -> float:
    """Threshold on the initial second moment below which blow-up is guaranteed.

    Only defined for ``M0 < 8 pi < m0``.
    """
    if not (compare_8pi(p.M0) < 0 and compare_8pi(p.m0) > 0):
        raise DomainError(
            f"critical second moment needs M0 < 8pi < m0, got M0={p.M0:.6g}, m0={p.m0:.6g}"
        )
    M0, m0 = p.M0, p.m0
    first = -((EIGHT_PI - M0) * m0 / (2.0 * M0 * math.pi)) * math.log((m0 - M0) / (EIGHT_PI - M0))
    second = (4.0 * m0 / M0) * math.log(m0 / EIGHT_PI)
    return first + second


def _bisect_root(f, lo, hi, atol=1e-12, max_iter=400):
    flo = f(lo)
    for _ in range(max_iter):
        if hi - lo <= atol:
            break
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def blowup_time(p: GrowthParams, m2_0: float, atol: float = 1e-12) -> Optional[float]:
    """First zero of the closed-form second moment, or ``None`` if it stays positive."""
    m2_0 = float(m2_0)
    if not math.isfinite(m2_0) or m2_0 <= 0:
        raise DomainError(f"initial second moment must be positive, got {m2_0!r}")

    def h(t):
        return normalized_second_moment(p, m2_0, t)

    M0_side = compare_8pi(p.M0)
    m0_side = compare_8pi(p.m0)
    if M0_side > 0:
        search = True
    elif M0_side == 0:
        # h decreases toward m2_0/m0 - ln(m0/M0)/(2 pi) only when m0 > 8 pi
        search = m0_side > 0 and m2_0 / p.m0 - math.log(p.m0 / p.M0) / (2 * math.pi) < 0
    else:
        if m0_side <= 0:
            return None
        t_min = h_min_time(p)
        if h(t_min) >= 0:
            return None
        return _bisect_root(h, 0.0, t_min, atol)
    if not search:
        return None
    hi = 1.0 / p.M0
    while h(hi) > 0:
        hi *= 2.0
        if hi > 1e12:  # pragma: no cover - guarded by the existence checks above
            return None
    return _bisect_root(h, 0.0, hi, atol)


class RegimeTag(str, enum.Enum):
    GLOBAL_EXISTENCE = "GlobalExistence"
    GLOBAL_BY_COMPARISON = "GlobalByComparison"
    INFINITE_TIME_BLOWUP = "InfiniteTimeBlowup"
    FINITE_TIME_BLOWUP = "FiniteTimeBlowup"
    CONDITIONAL_FINITE_BLOWUP = "ConditionalFiniteBlowup"
    OPEN_CRITICAL = "OpenCritical"


@dataclass(frozen=True)
class Regime:
    tag: RegimeTag
    note: str

    def __str__(self):
        return self.tag.value


def classify(p: GrowthParams, m2_0: Optional[float] = None) -> Regime:
    """Map ``(m0, M0)`` and optionally ``m2_0`` to the qualitative regime."""
    M0s, m0s = compare_8pi(p.M0), compare_8pi(p.m0)
    equal = _same(p.m0, p.M0)
    T = RegimeTag
    if M0s > 0:
        return Regime(T.FINITE_TIME_BLOWUP,
                      "M0 > 8pi: second moment reaches zero in finite time for any data")
    if M0s < 0:
        if m0s < 0:
            if equal:
                return Regime(T.GLOBAL_BY_COMPARISON,
                              "m0 = M0 < 8pi: constant subcritical mass, classical global existence")
            if p.m0 < p.M0:
                return Regime(T.GLOBAL_EXISTENCE,
                              "m0 < M0 < 8pi: global weak solution with energy inequality")
            return Regime(T.GLOBAL_BY_COMPARISON,
                          "M0 < m0 < 8pi: sub-solution of subcritical Keller-Segel")
        if m0s == 0:
            return Regime(T.OPEN_CRITICAL,
                          "M0 < m0 = 8pi: infinite time blow-up possible but global existence "
                          "is not excluded; left open")
        if m2_0 is not None and m2_0 < critical_second_moment(p):
            return Regime(T.CONDITIONAL_FINITE_BLOWUP,
                          "M0 < 8pi < m0 with m2(0) < C(M0, m0): some solutions blow up in finite "
                          "time; not asserted for all solutions")
        return Regime(T.OPEN_CRITICAL,
                      "M0 < 8pi < m0 without a small second moment: no prediction")
    # M0 within the critical band
    if m0s < 0:
        return Regime(T.INFINITE_TIME_BLOWUP,
                      "m0 < M0 = 8pi: global, concentrates to a Dirac mass as t -> inf")
    if m0s > 0:
        return Regime(T.OPEN_CRITICAL,
                      "M0 = 8pi < m0: both global existence and finite time blow-up may occur; open")
    return Regime(T.OPEN_CRITICAL,
                  "m0 = M0 = 8pi: mass fixed at the critical value; stationary states exist but "
                  "the case is not covered by the regime list")


@dataclass(frozen=True)
class SteadyFamily:
    """Radial steady profiles with scale ``lam`` (a squared length)."""

    lam: float
    M0: float = EIGHT_PI
    normalized: bool = True

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise DomainError(f"lambda must be positive, got {self.lam!r}")
        if not (self.M0 > 0):
            raise DomainError(f"M0 must be positive, got {self.M0!r}")


def steady_density(f: SteadyFamily, r):
    """Steady density at radius ``r``.

    ``normalized=True`` gives the unit-mass profile ``(8 lam / M0) / (r^2 + lam)^2``;
    otherwise ``32 lam^2 / (4 + lam^2 r^2)^2``, which carries mass 8 pi.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("radius must be non-negative")
    lam = f.lam
    if f.normalized:
        out = (8.0 * lam / f.M0) / (r * r + lam) ** 2
    else:
        out = 32.0 * lam * lam / (4.0 + lam * lam * r * r) ** 2
    return out if out.ndim else float(out)


def steady_cumulative_s(f: SteadyFamily, s):
    """Cumulative steady mass fraction as a function of ``s = r^2``."""
    s = np.asarray(s, dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(s), EIGHT_PI / f.M0, (EIGHT_PI / f.M0) * s / (s + f.lam))
    return out if out.ndim else float(out)


def steady_cumulative(f: SteadyFamily, r):
    """``8 pi / (M0 (1 + lam r^-2))``, zero at the origin and ``8 pi / M0`` at infinity."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("radius must be non-negative")
    return steady_cumulative_s(f, r * r)


class EnvelopeKind(str, enum.Enum):
    SUPER = "super"
    SUB = "sub"


@dataclass(frozen=True)
class Envelope:
    """Time-dependent super- or sub-solution built from the steady family.

    Use :meth:`super_solution` and :meth:`sub_solution`; they validate the
    ordering constants against ``M0`` and precompute ``R0`` and ``A``.
    """

    kind: EnvelopeKind
    lambda0: float
    M0: float
    mu: float = math.nan
    mu0: float = math.nan
    mu1: float = math.nan
    R0: float = math.nan
    A: float = math.nan

    @classmethod
    def super_solution(cls, lambda0: float, mu: float, M0: float) -> "Envelope":
        if compare_8pi(M0) >= 0:
            raise DomainError(f"the super-solution needs M0 < 8pi, got M0={M0:.6g}")
        if not lambda0 > 0:
            raise DomainError("lambda0 must be positive")
        if not (0.0 < mu < 1.0 and mu * EIGHT_PI / M0 > 1.0):
            raise DomainError(f"need 0 < mu < 1 and mu*8pi/M0 > 1, got mu={mu!r}, M0={M0:.6g}")
        return cls(EnvelopeKind.SUPER, float(lambda0), float(M0), mu=float(mu))

    @classmethod
    def sub_solution(cls, lambda0: float, mu0: float, mu1: float, M0: float) -> "Envelope":
        if compare_8pi(M0) <= 0:
            raise DomainError(f"the sub-solution needs M0 > 8pi, got M0={M0:.6g}")
        if not lambda0 > 0:
            raise DomainError("lambda0 must be positive")
        if not (1.0 < mu0 < mu1 and mu1 * EIGHT_PI / M0 < 1.0):
            raise DomainError(
                f"need 1 < mu0 < mu1 and mu1*8pi/M0 < 1, got mu0={mu0!r}, mu1={mu1!r}, M0={M0:.6g}"
            )
        R0_sq = lambda0 / (mu1 / mu0 - 1.0)
        A = -(8.0 * mu0 / (R0_sq * mu1)) * (mu0 - 1.0)
        return cls(EnvelopeKind.SUB, float(lambda0), float(M0), mu0=float(mu0), mu1=float(mu1),
                   R0=math.sqrt(R0_sq), A=A)

    def lam(self, t: float) -> float:
        """Scale parameter at time ``t``."""
        if self.kind is EnvelopeKind.SUPER:
            mu, M0 = self.mu, self.M0
            slope = (M0 / (mu * math.pi)) * (1.0 - mu) * (mu * EIGHT_PI / M0 - 1.0)
            return self.lambda0 + slope * t
        return self.lambda0 * math.exp(self.A * t)

    def crossing_radius(self, t: float) -> float:
        """Radius where the two branches of the envelope meet."""
        if self.kind is EnvelopeKind.SUPER:
            # 1 = mu 8pi / (M0 (1 + lam R^-2))
            q = self.mu * EIGHT_PI / self.M0
            return math.sqrt(self.lam(t) / (q - 1.0))
        # mu1/(1 + lam0 R^-2) = mu0/(1 + lam(t) R^-2); R(t) grows from 0 toward R0
        num = self.mu0 * self.lambda0 - self.mu1 * self.lam(t)
        return math.sqrt(max(num, 0.0) / (self.mu1 - self.mu0))

    def _check(self, p: GrowthParams):
        if not _same(p.M0, self.M0):
            raise DomainError(f"envelope built for M0={self.M0:.6g}, evaluated with M0={p.M0:.6g}")

    def evaluate_s(self, p: GrowthParams, t: float, s):
        """Envelope value as a function of ``s = r^2``."""
        self._check(p)
        t = _check_time(t)
        s = np.asarray(s, dtype=float)
        base = EIGHT_PI / self.M0
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind is EnvelopeKind.SUPER:
                out = np.minimum(1.0, self.mu * base * s / (s + self.lam(t)))
            else:
                n1 = self.mu1 * base * s / (s + self.lambda0)
                n0 = self.mu0 * base * s / (s + self.lam(t))
                out = np.maximum(n1, n0)
        return out if out.ndim else float(out)


def super_envelope(e: Envelope, p: GrowthParams, t: float, r):
    """``min(1, mu 8pi / (M0 (1 + lam(t) r^-2)))`` with ``lam`` growing linearly."""
    if e.kind is not EnvelopeKind.SUPER:
        raise DomainError("super_envelope needs a super-solution envelope")
    if compare_8pi(p.M0) >= 0:
        raise DomainError("super_envelope needs M0 < 8pi")
    r = np.asarray(r, dtype=float)
    return e.evaluate_s(p, t, r * r)


def sub_envelope(e: Envelope, p: GrowthParams, t: float, r):
    """Maximum of the frozen and the shrinking steady branches."""
    if e.kind is not EnvelopeKind.SUB:
        raise DomainError("sub_envelope needs a sub-solution envelope")
    if compare_8pi(p.M0) <= 0:
        raise DomainError("sub_envelope needs M0 > 8pi")
    r = np.asarray(r, dtype=float)
    return e.evaluate_s(p, t, r * r)
