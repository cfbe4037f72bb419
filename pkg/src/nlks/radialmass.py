"""Radial solver for the cumulative mass of the normalized density.

With ``rho = u / m(t)`` and ``M(t, s)`` the fraction of mass inside radius
``sqrt(s)``, radial solutions satisfy

    M_t = 4 s M_ss + (m(t) / pi) M M_s,     M(t, 0) = 0,  M(t, s_max) = 1.

Working in ``s = r**2`` removes the coordinate singularity at the axis.  Time
stepping is backward Euler on the full operator, solved by Newton iteration
with a tridiagonal Jacobian.  The advection term uses a centred difference
wherever that keeps the Jacobian an M-matrix and a forward (upwind)
difference elsewhere; together with a step cap this makes every accepted step
order preserving.  ``m(t)`` is never integrated; it comes from the closed
form in :mod:`nlks.oracle`.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from . import oracle
from .errors import DomainError, NonFinite, StepRejected
from .oracle import GrowthParams

logger = logging.getLogger(__name__)

#: Violations of monotonicity or of [0, 1] up to this size are treated as roundoff.
ROUNDOFF_TOL = 1e-12

#: Fraction of the order-preservation limit ``dt * k * max slope < 1`` used by the step cap.
SAFETY = 0.9


# --------------------------------------------------------------------------------------
# grid


def stretch_for_first_spacing(n: int, s_max: float, ds0: float) -> float:
    """Grading exponent giving a first cell of width ``ds0``."""
    if n < 3:
        raise DomainError("need at least three nodes")
    uniform = s_max / (n - 1)
    if ds0 >= uniform:
        return 0.0
    xi1 = 1.0 / (n - 1)

    def first(kappa):
        return s_max * math.expm1(kappa * xi1) / math.expm1(kappa) - ds0

    hi = 1.0
    while first(hi) > 0:
        hi *= 2.0
    return brentq(first, 1e-12, hi, xtol=1e-14, rtol=1e-14)


@dataclass(frozen=True, eq=False)
class SGrid:
    """Graded nodes ``s_i = s_max * expm1(stretch * xi_i) / expm1(stretch)``.

    ``xi`` is uniform on [0, 1], so ``stretch = 0`` is a uniform grid and larger
    values cluster nodes near the origin.  Refinement at fixed ``stretch`` is a
    smooth mapping, which keeps the centred stencils second order.
    """

    s_nodes: np.ndarray
    s_max: float
    n: int
    stretch: float

    @classmethod
    def graded(cls, n: int = 512, s_max: float = 1e4, stretch: float = 0.0) -> "SGrid":
        if n < 3:
            raise DomainError("need at least three nodes")
        if not (s_max > 0 and math.isfinite(s_max)):
            raise DomainError("s_max must be positive")
        if stretch < 0:
            raise DomainError("stretch must be non-negative")
        xi = np.linspace(0.0, 1.0, n)
        if stretch == 0.0:
            s = s_max * xi
        else:
            s = s_max * np.expm1(stretch * xi) / math.expm1(stretch)
        s[0], s[-1] = 0.0, s_max
        if np.any(np.diff(s) <= 0):
            raise DomainError("grading too strong for double precision; lower the stretch")
        s.setflags(write=False)
        return cls(s, float(s_max), int(n), float(stretch))

    @classmethod
    def with_first_spacing(cls, n: int, s_max: float, ds0: float) -> "SGrid":
        return cls.graded(n, s_max, stretch_for_first_spacing(n, s_max, ds0))

    @property
    def ds(self) -> np.ndarray:
        return np.diff(self.s_nodes)

    @property
    def r_nodes(self) -> np.ndarray:
        return np.sqrt(self.s_nodes)

    @property
    def s_mid(self) -> np.ndarray:
        return 0.5 * (self.s_nodes[1:] + self.s_nodes[:-1])

    def __eq__(self, other):
        return (isinstance(other, SGrid) and self.n == other.n and self.s_max == other.s_max
                and self.stretch == other.stretch
                and np.array_equal(self.s_nodes, other.s_nodes))

    __hash__ = None


class Mode(str, enum.Enum):
    NORMALIZED = "normalized"
    PHYSICAL = "physical"


@dataclass(eq=False)
class RadialState:
    """Cumulative mass fractions ``M`` on ``grid`` at time ``t``.

    ``mode`` only changes what is reported: in ``PHYSICAL`` mode densities
    and masses are multiplied by ``m(t)``.  ``rescale`` records the factor
    applied to the initial profile so that the last node equals 1.
    """

    grid: SGrid
    M: np.ndarray
    t: float
    p: GrowthParams
    mode: Mode = Mode.NORMALIZED
    rescale: float = 1.0

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=float)
        if self.M.shape != (self.grid.n,):
            raise DomainError(f"profile has shape {self.M.shape}, grid has {self.grid.n} nodes")

    @property
    def m(self) -> float:
        """Total mass ``m(t)`` of the unnormalized density."""
        return oracle.mass_at(self.p, self.t)

    @property
    def mass(self) -> float:
        """Reported mass: ``M(s_max)`` or ``m(t) M(s_max)`` in physical mode."""
        scale = self.m if self.mode is Mode.PHYSICAL else 1.0
        return scale * float(self.M[-1])

    @property
    def mass_deficit(self) -> float:
        """Fraction of the initial profile that lay beyond ``s_max``."""
        return 1.0 - 1.0 / self.rescale

    def copy(self) -> "RadialState":
        return replace(self, M=self.M.copy())

    def __eq__(self, other):
        return (isinstance(other, RadialState) and self.grid == other.grid
                and np.array_equal(self.M, other.M) and self.t == other.t and self.p == other.p
                and self.mode == other.mode and self.rescale == other.rescale)

    __hash__ = None


def check_profile(M: np.ndarray, tol: float = ROUNDOFF_TOL) -> None:
    """Raise ``DomainError`` unless ``M`` is a nondecreasing profile in [0, 1]."""
    if not np.all(np.isfinite(M)):
        raise NonFinite("profile contains non-finite values")
    if np.any(np.diff(M) < -tol):
        raise DomainError("profile is not monotone")
    if M.min() < -tol or M.max() > 1 + tol:
        raise DomainError("profile leaves [0, 1]")


def init_from_profile(grid: SGrid, profile: Callable, p: GrowthParams, *,
                      variable: str = "r", mode: Mode = Mode.NORMALIZED,
                      t0: float = 0.0) -> RadialState:
    """Sample a cumulative-mass profile and pin the last node to 1.

    ``profile`` takes radii by default, or ``s = r**2`` with ``variable='s'``.
    """
    x = grid.r_nodes if variable == "r" else grid.s_nodes
    M = np.asarray(profile(x), dtype=float) * np.ones_like(x)
    if not np.all(np.isfinite(M)):
        raise DomainError("profile returned non-finite values")
    if np.any(np.diff(M) < 0):
        raise DomainError("profile samples are not monotone")
    last = M[-1]
    if last < 0.5:
        raise DomainError(
            f"profile reaches only {last:.3g} at s_max={grid.s_max:.3g}; enlarge the domain"
        )
    if last > 1.0 + ROUNDOFF_TOL:
        raise DomainError(f"profile exceeds 1 (value {last:.6g} at the last node)")
    if abs(M[0]) > ROUNDOFF_TOL:
        raise DomainError("profile must vanish at the origin")
    M = M / last
    M[0], M[-1] = 0.0, 1.0
    return RadialState(grid, M, float(t0), p, mode, rescale=1.0 / last)


# --------------------------------------------------------------------------------------
# spatial operator


@dataclass(frozen=True, eq=False)
class _Stencil:
    """Precomputed interior coefficients for one grid and advection bound.

    The advective slope at node i is ``cw (M[i+1] - M[i-1]) + fw (M[i+1] - M[i])``
    where exactly one of ``cw`` (centred) and ``fw`` (forward) is nonzero.
    """

    a_plus: np.ndarray
    a_minus: np.ndarray
    cw: np.ndarray
    fw: np.ndarray
    central: np.ndarray

    @classmethod
    def build(cls, grid: SGrid, k_max: float, advection: str = "hybrid") -> "_Stencil":
        s = grid.s_nodes[1:-1]
        dl = grid.ds[:-1]
        dr = grid.ds[1:]
        tot = dl + dr
        if advection == "hybrid":
            # centred advection keeps the subdiagonal nonnegative while k dl <= 8 s
            central = k_max * dl <= 8.0 * s
        elif advection == "upwind":
            central = np.zeros(s.shape, dtype=bool)
        else:
            raise DomainError(f"unknown advection stencil {advection!r}")
        cw = np.where(central, 1.0 / tot, 0.0)
        fw = np.where(central, 0.0, 1.0 / dr)
        return cls(8.0 * s / (dr * tot), 8.0 * s / (dl * tot), cw, fw, central)


_STENCIL_CACHE: dict = {}


def _stencil(grid: SGrid, p: GrowthParams, advection: str) -> _Stencil:
    k_max = max(p.m0, p.M0) / math.pi
    key = (id(grid), k_max, advection)
    hit = _STENCIL_CACHE.get(key)
    # the grid is kept alive by the cache entry, so its id cannot be reused
    if hit is None or hit[0] is not grid:
        if len(_STENCIL_CACHE) > 64:
            _STENCIL_CACHE.clear()
        hit = (grid, _Stencil.build(grid, k_max, advection))
        _STENCIL_CACHE[key] = hit
    return hit[1]


def _operator(M, st: _Stencil, k):
    """Interior rate ``G(M)`` and its three Jacobian bands.

    ``M`` has shape (B, n); ``k`` has shape (B, 1).  Returns arrays of shape
    (B, n - 2).
    """
    Ml, Mc, Mr = M[:, :-2], M[:, 1:-1], M[:, 2:]
    dr = Mr - Mc
    dl = Mc - Ml
    slope = st.cw * (dr + dl) + st.fw * dr
    kM = k * Mc
    G = st.a_plus * dr - st.a_minus * dl + kM * slope
    lower = st.a_minus - kM * st.cw
    upper = st.a_plus + kM * (st.cw + st.fw)
    diag = k * slope - kM * st.fw - (st.a_plus + st.a_minus)
    return G, lower, diag, upper


def interior_rate(state: RadialState, advection: str = "hybrid") -> np.ndarray:
    """Semi-discrete rate ``dM/dt`` at every interior node."""
    st = _stencil(state.grid, state.p, advection)
    k = np.array([[state.m / math.pi]])
    G, *_ = _operator(state.M[None, :], st, k)
    return G[0]


def change_coordinates_rhs(state: RadialState, i: int, advection: str = "hybrid") -> float:
    """Rate of ``4 s M_ss + (m/pi) M M_s`` at interior node ``i``."""
    n = state.grid.n
    if not (0 < i < n - 1):
        raise DomainError(f"node {i} is not interior (0 < i < {n - 1})")
    return float(interior_rate(state, advection)[i - 1])


def max_forward_slope(M: np.ndarray, grid: SGrid) -> np.ndarray:
    """Largest ``(M[j+1] - M[j]) / ds[j]`` along the last axis."""
    return np.max(np.diff(M, axis=-1) / grid.ds, axis=-1)


def stability_dt(state: RadialState, m: Optional[float] = None) -> float:
    """Largest step for which the implicit update is guaranteed to preserve order."""
    m = state.m if m is None else m
    slope = float(max_forward_slope(state.M, state.grid))
    if slope <= 0 or m <= 0:
        return math.inf
    return SAFETY * math.pi / (m * slope)


# --------------------------------------------------------------------------------------
# time stepping


def implicit_solve(M_old: np.ndarray, grid: SGrid, st: _Stencil, k: np.ndarray, dt: float,
                   newton_tol: float = 1e-15, max_iter: int = 30) -> np.ndarray:
    """Backward Euler update of a batch of profiles.

    ``M_old`` has shape (B, n) and ``k`` shape (B,).  The B systems are
    independent; stacking them into a single banded solve keeps the cost of
    a batch close to that of one profile.
    """
    B, n = M_old.shape
    k = np.asarray(k, dtype=float).reshape(B, 1)
    M = M_old.copy()
    x_old = M_old[:, 1:-1]
    ab = np.zeros((3, B * (n - 2)))
    for it in range(max_iter):
        G, lo, di, up = _operator(M, st, k)
        F = M[:, 1:-1] - x_old - dt * G
        lo = -dt * lo
        up = -dt * up
        di = 1.0 - dt * di
        # block boundaries have no coupling between profiles
        up[:, -1] = 0.0
        lo[:, 0] = 0.0
        ab[0, 1:] = up.ravel()[:-1]
        ab[1] = di.ravel()
        ab[2, :-1] = lo.ravel()[1:]
        try:
            delta = solve_banded((1, 1), ab, -F.ravel(), overwrite_ab=False,
                                 overwrite_b=True, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise StepRejected(f"Newton linear solve failed: {exc}") from exc
        delta = delta.reshape(B, n - 2)
        M[:, 1:-1] += delta
        if not np.all(np.isfinite(M)):
            raise StepRejected("Newton iteration diverged")
        if np.max(np.abs(delta)) <= newton_tol * max(1.0, float(np.max(np.abs(M)))):
            return M
        # stagnation at roundoff level is accepted as convergence
        if it >= 3 and np.max(np.abs(delta)) <= 64 * np.finfo(float).eps:
            return M
    raise StepRejected(f"Newton iteration did not converge in {max_iter} iterations")


def admissible(M: np.ndarray, tol: float = ROUNDOFF_TOL) -> np.ndarray:
    """Clip roundoff into [0, 1]; raise ``StepRejected`` on real violations."""
    if np.any(np.diff(M, axis=-1) < -tol):
        raise StepRejected("update violates monotonicity")
    if M.min() < -tol or M.max() > 1.0 + tol:
        raise StepRejected("update leaves [0, 1]")
    np.clip(M, 0.0, 1.0, out=M)
    # clipping is monotone, but tiny inversions below tol are flattened too
    np.maximum.accumulate(M, axis=-1, out=M)
    return M


def step_batch(M: np.ndarray, grid: SGrid, p_list, t: float, dt: float,
               advection: str = "hybrid") -> np.ndarray:
    """Advance a batch of profiles on one grid by one common step.

    ``p_list`` holds one :class:`GrowthParams` per profile; all must share
    the same advection bound so that they use the same stencil selection.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise DomainError(f"dt must be positive, got {dt!r}")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    p_list = list(p_list)
    k_max = max(max(p.m0, p.M0) for p in p_list)
    st = _stencil(grid, GrowthParams(k_max, k_max), advection)
    M0 = np.array([p.M0 for p in p_list])
    cbar = np.array([p.cbar for p in p_list])
    k = M0 / (1.0 + cbar * np.exp(-M0 * (t + 0.5 * dt))) / math.pi
    slope = max_forward_slope(M, grid)
    if np.any(dt * k * slope >= 1.0):
        raise StepRejected("dt exceeds the order-preserving bound")
    new = implicit_solve(M, grid, st, k, dt)
    if np.any(dt * k * max_forward_slope(new, grid) >= 1.0):
        raise StepRejected("dt exceeds the order-preserving bound at the new state")
    new[:, 0] = 0.0
    new[:, -1] = 1.0
    return admissible(new)


def step(state: RadialState, dt: float, advection: str = "hybrid") -> RadialState:
    """One backward Euler step; the input state is not modified."""
    if not np.all(np.isfinite(state.M)):
        raise NonFinite("state contains non-finite values")
    new = step_batch(state.M[None, :], state.grid, [state.p], state.t, dt, advection)[0]
    if not np.all(np.isfinite(new)):
        raise NonFinite("update produced non-finite values")
    return replace(state, M=new, t=state.t + dt)


def density_from_mass(state: RadialState) -> np.ndarray:
    """Cell densities ``(1/pi) dM/ds`` at the cell midpoints ``grid.s_mid``.

    Multiplied by ``m(t)`` in physical mode.
    """
    rho = np.diff(state.M) / (math.pi * state.grid.ds)
    if state.mode is Mode.PHYSICAL:
        rho = rho * state.m
    return rho


def max_density(state: RadialState) -> float:
    """Largest cell value of the physical density ``u``."""
    return state.m * float(np.max(np.diff(state.M) / state.grid.ds)) / math.pi


# --------------------------------------------------------------------------------------
# driver


class Outcome(str, enum.Enum):
    COMPLETED = "completed"
    BLOWUP = "BlowupDetected"


@dataclass
class StepPolicy:
    """Adaptive step control.

    ``dt`` halves on rejection and grows by ``grow`` after ``grow_after``
    consecutive accepted steps, never beyond the order-preserving cap or
    ``dt_max``.
    """

    dt0: float = 1e-6
    dt_max: float = 0.1
    dt_min: float = 1e-12
    grow: float = 1.25
    grow_after: int = 10
    ceiling: float = 1e8
    advection: str = "hybrid"
    max_steps: int = 10_000_000


@dataclass
class Trajectory:
    states: List = field(default_factory=list)
    records: List = field(default_factory=list)
    outcome: Outcome = Outcome.COMPLETED
    t_stop: float = 0.0
    reason: str = ""
    steps: int = 0
    rejections: int = 0

    @property
    def blowup(self) -> bool:
        return self.outcome is Outcome.BLOWUP


def observation_times(t0: float, t_end: float, every: float) -> np.ndarray:
    if not every > 0:
        raise DomainError("observation interval must be positive")
    count = int(math.floor((t_end - t0) / every + 1e-9))
    times = t0 + every * np.arange(1, count + 1)
    if count == 0 or times[-1] < t_end - 1e-12 * max(1.0, abs(t_end)):
        times = np.append(times, t_end)
    return times


def run(initial: RadialState, t_end: float, observe_every: float,
        policy: Optional[StepPolicy] = None, record: Optional[Callable] = None,
        keep_states: bool = True, **record_kw) -> Trajectory:
    """Integrate to ``t_end``, recording gauges at each observation time.

    Stops early with ``Outcome.BLOWUP`` when the physical density exceeds
    ``policy.ceiling`` or the step falls below ``policy.dt_min``.
    """
    from . import gauges  # deferred: gauges consumes states from this module

    policy = policy or StepPolicy()
    record = record or gauges.radial_record
    if t_end < initial.t:
        raise DomainError("t_end precedes the initial time")
    traj = Trajectory(t_stop=initial.t)
    state = initial.copy()

    def emit(st, **flags):
        rec = record(st, **record_kw, **flags)
        traj.records.append(rec)
        if keep_states:
            traj.states.append(st.copy())

    emit(state)
    if t_end == initial.t:
        return traj
    if max_density(state) > policy.ceiling:
        traj.outcome, traj.reason = Outcome.BLOWUP, "density ceiling"
        return traj

    dt = policy.dt0
    streak = 0
    for t_obs in observation_times(initial.t, t_end, observe_every):
        while state.t < t_obs:
            remaining = t_obs - state.t
            cap = stability_dt(state, oracle.mass_at(state.p, state.t))
            trial = min(dt, cap, policy.dt_max)
            if trial < policy.dt_min:
                traj.outcome, traj.reason = Outcome.BLOWUP, "dt underflow"
                traj.t_stop = state.t
                emit(state, blowup=True)
                return traj
            hit = trial >= remaining
            trial = remaining if hit else trial
            try:
                new = step(state, trial, policy.advection)
            except StepRejected as exc:
                traj.rejections += 1
                dt = 0.5 * min(dt, trial)
                streak = 0
                logger.debug("t=%.6g: step %.3g rejected (%s)", state.t, trial, exc)
                if dt < policy.dt_min:
                    traj.outcome, traj.reason = Outcome.BLOWUP, "dt underflow"
                    traj.t_stop = state.t
                    emit(state, blowup=True)
                    return traj
                continue
            if hit:
                new.t = t_obs
            state = new
            traj.steps += 1
            streak += 1
            if not hit:
                dt = trial
            if streak >= policy.grow_after:
                dt *= policy.grow
                streak = 0
            if max_density(state) > policy.ceiling:
                traj.outcome, traj.reason = Outcome.BLOWUP, "density ceiling"
                traj.t_stop = state.t
                emit(state, blowup=True)
                return traj
            if traj.steps >= policy.max_steps:
                raise StepRejected("step budget exhausted")
        traj.t_stop = state.t
        emit(state)
    return traj
