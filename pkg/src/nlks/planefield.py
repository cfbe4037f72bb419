"""Finite-volume solver for the full planar system on a square box.

    u_t = Lap u - div(u grad c) + u (M0 - int u),   c = -(1/2 pi) log|.| * u

The potential is the free-space convolution, evaluated aperiodically by
zero padding to twice the box.  Each step is a Strang splitting of an exact
logistic reaction, implicit Neumann diffusion (diagonalised by a cosine
transform) and explicit upwind-biased advection (minmod-limited traces)
with no-flux walls.  All three substeps keep ``u`` nonnegative.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, FrozenSet, Optional

import numpy as np
from scipy import fft as sfft

from . import oracle
from .errors import DomainError, NonFinite, StepRejected
from .oracle import GrowthParams

logger = logging.getLogger(__name__)

#: Mean of log|x| over the square [-1, 1]^2.
SQUARE_LOG_MEAN = 0.5 * math.log(2.0) - 1.5 + 0.25 * math.pi

CFL = 0.45
ALL_PARTS: FrozenSet[str] = frozenset({"reaction", "diffusion", "advection"})


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def cell_log_average(h: float) -> float:
    """Mean of ``log|x|`` over a square cell of side ``h`` centred at the origin."""
    return math.log(0.5 * h) + SQUARE_LOG_MEAN


@dataclass(frozen=True, eq=False)
class PlanarDomain:
    """Square ``[-L, L]^2`` split into ``n x n`` cells."""

    L: float
    n: int
    h: float = field(init=False)
    kernel_spectrum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not _is_pow2(int(self.n)):
            raise DomainError(f"n must be a power of two, got {self.n!r}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise DomainError("L must be positive")
        n = int(self.n)
        h = 2.0 * self.L / n
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "kernel_spectrum", self._kernel(n, h))

    @staticmethod
    def _kernel(n: int, h: float) -> np.ndarray:
        d = np.arange(2 * n)
        d = np.where(d < n, d, d - 2 * n).astype(float)
        dx, dy = np.meshgrid(d, d, indexing="ij")
        rr = np.hypot(dx, dy)
        with np.errstate(divide="ignore"):
            g = -np.log(h * rr) / (2.0 * math.pi)
        g[0, 0] = -cell_log_average(h) / (2.0 * math.pi)
        # offset n is never reached by an n-cell box; zero it for symmetry
        g[n, :] = 0.0
        g[:, n] = 0.0
        spec = sfft.rfft2(g * h * h)
        spec.setflags(write=False)
        return spec

    def centers(self):
        x = -self.L + (np.arange(self.n) + 0.5) * self.h
        return np.meshgrid(x, x, indexing="ij")

    def __eq__(self, other):
        return isinstance(other, PlanarDomain) and self.L == other.L and self.n == other.n

    __hash__ = None


@dataclass(eq=False)
class PlanarState:
    domain: PlanarDomain
    u: np.ndarray
    t: float
    p: GrowthParams

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.u.shape != (self.domain.n, self.domain.n):
            raise DomainError("density shape does not match the domain")

    @property
    def mass(self) -> float:
        return float(np.sum(self.u)) * self.domain.h ** 2

    def copy(self) -> "PlanarState":
        return replace(self, u=self.u.copy())

    def __eq__(self, other):
        return (isinstance(other, PlanarState) and self.domain == other.domain
                and np.array_equal(self.u, other.u) and self.t == other.t and self.p == other.p)

    __hash__ = None


def init_planar(domain: PlanarDomain, density: Callable, p: GrowthParams,
                t0: float = 0.0, normalize: bool = True) -> PlanarState:
    """Sample ``density(X, Y)`` at cell centres, rescaled so the discrete mass is ``m(t0)``."""
    X, Y = domain.centers()
    u = np.asarray(density(X, Y), dtype=float) * np.ones_like(X)
    if np.any(~np.isfinite(u)) or np.any(u < 0):
        raise DomainError("initial density must be finite and nonnegative")
    if normalize:
        total = float(np.sum(u)) * domain.h ** 2
        if total <= 0:
            raise DomainError("initial density has zero mass")
        u *= oracle.mass_at(p, t0) / total
    return PlanarState(domain, u, float(t0), p)


# --------------------------------------------------------------------------------------
# operators


def convolve_log(u: np.ndarray, domain: PlanarDomain, workers: Optional[int] = None) -> np.ndarray:
    n = domain.n
    pad = np.zeros((2 * n, 2 * n))
    pad[:n, :n] = u
    out = sfft.irfft2(sfft.rfft2(pad, workers=workers) * domain.kernel_spectrum,
                      s=(2 * n, 2 * n), workers=workers)
    return out[:n, :n]


def solve_potential(state: PlanarState, workers: Optional[int] = None) -> np.ndarray:
    """Free-space potential ``c = -(1/2 pi) log|.| * u`` at cell centres."""
    c = convolve_log(state.u, state.domain, workers)
    if not np.all(np.isfinite(c)):
        raise NonFinite("potential is not finite")
    return c


def velocity(state: PlanarState, c: np.ndarray):
    """Face-normal drift velocities ``grad c``; wall faces carry zero velocity.

    Returns ``(vx, vy)`` with shapes ``(n + 1, n)`` and ``(n, n + 1)``.
    """
    h = state.domain.h
    n = state.domain.n
    vx = np.zeros((n + 1, n))
    vy = np.zeros((n, n + 1))
    vx[1:-1, :] = (c[1:, :] - c[:-1, :]) / h
    vy[:, 1:-1] = (c[:, 1:] - c[:, :-1]) / h
    return vx, vy


def edge_velocities(c: np.ndarray, h: float):
    """One-sided outward normal drift on the left, right, bottom and top edges."""
    return (-(c[1, :] - c[0, :]) / h, (c[-1, :] - c[-2, :]) / h,
            -(c[:, 1] - c[:, 0]) / h, (c[:, -1] - c[:, -2]) / h)


def advective_limit(vx: np.ndarray, vy: np.ndarray, h: float, scheme: str = "muscl") -> float:
    """Largest dt satisfying both the CFL bound and cellwise positivity.

    Limited reconstruction can place up to twice the cell average on an
    outflow face, so its positivity bound is half the first-order one.
    """
    vmax = max(float(np.max(np.abs(vx))), float(np.max(np.abs(vy))))
    out = (np.maximum(vx[1:, :], 0.0) - np.minimum(vx[:-1, :], 0.0)
           + np.maximum(vy[:, 1:], 0.0) - np.minimum(vy[:, :-1], 0.0))
    omax = float(np.max(out))
    factor = 0.5 if scheme == "muscl" else 1.0
    lim = math.inf
    if vmax > 0:
        lim = CFL * h / vmax
    if omax > 0:
        lim = min(lim, factor * h / omax)
    return lim


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _face_states(u, axis, scheme):
    """Left and right traces at the interior faces along ``axis``."""
    lo = np.take(u, np.arange(u.shape[axis] - 1), axis=axis)
    hi = np.take(u, np.arange(1, u.shape[axis]), axis=axis)
    if scheme == "upwind":
        return lo, hi
    d = np.diff(u, axis=axis)
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 1)
    d = np.pad(d, pad)  # zero slope differences beyond the walls
    n = u.shape[axis]
    dl = np.take(d, np.arange(n), axis=axis)
    dr = np.take(d, np.arange(1, n + 1), axis=axis)
    slope = _minmod(dl, dr)
    plus = u + 0.5 * slope   # trace on the high side of each cell
    minus = u - 0.5 * slope  # trace on the low side
    left = np.take(plus, np.arange(n - 1), axis=axis)
    right = np.take(minus, np.arange(1, n), axis=axis)
    return left, right


def _divergence(u, vx, vy, h, scheme):
    n = u.shape[0]
    fx = np.zeros((n + 1, n))
    fy = np.zeros((n, n + 1))
    left, right = _face_states(u, 0, scheme)
    vxi = vx[1:-1, :]
    fx[1:-1, :] = np.maximum(vxi, 0.0) * left + np.minimum(vxi, 0.0) * right
    left, right = _face_states(u, 1, scheme)
    vyi = vy[:, 1:-1]
    fy[:, 1:-1] = np.maximum(vyi, 0.0) * left + np.minimum(vyi, 0.0) * right
    return ((fx[1:, :] - fx[:-1, :]) + (fy[:, 1:] - fy[:, :-1])) / h


def advect(u: np.ndarray, vx: np.ndarray, vy: np.ndarray, h: float, dt: float,
           scheme: str = "muscl") -> np.ndarray:
    """Finite-volume transport with closed wall faces; conserves mass exactly.

    ``scheme="upwind"`` is donor-cell with forward Euler.  ``"muscl"`` uses
    minmod-limited linear traces with the two-stage strong-stability-preserving
    Runge-Kutta method, which keeps the update a convex combination of
    positive forward Euler steps.
    """
    if scheme == "upwind":
        return u - dt * _divergence(u, vx, vy, h, scheme)
    if scheme != "muscl":
        raise DomainError(f"unknown advection scheme {scheme!r}")
    u1 = u - dt * _divergence(u, vx, vy, h, scheme)
    u1 = np.maximum(u1, 0.0) if np.min(u1) > -1e-12 * np.max(u) else u1
    return 0.5 * (u + u1 - dt * _divergence(u1, vx, vy, h, scheme))


def _neumann_eigs(n: int, h: float) -> np.ndarray:
    k = np.arange(n)
    lam = (2.0 * np.cos(math.pi * k / n) - 2.0) / (h * h)
    return lam[:, None] + lam[None, :]


def diffuse(u: np.ndarray, h: float, dt: float, workers: Optional[int] = None) -> np.ndarray:
    """Backward Euler for the five-point Neumann Laplacian, solved exactly.

    The cosine transform of type II diagonalises the operator, so the
    solve is two transforms and a division.
    """
    lam = _neumann_eigs(u.shape[0], h)
    coef = sfft.dctn(u, type=2, norm="ortho", workers=workers)
    coef /= 1.0 - dt * lam
    return sfft.idctn(coef, type=2, norm="ortho", workers=workers)


def laplacian5(c: np.ndarray, h: float) -> np.ndarray:
    """Five-point Laplacian on interior cells (boundary ring set to NaN)."""
    out = np.full(c.shape, np.nan)
    out[1:-1, 1:-1] = (c[2:, 1:-1] + c[:-2, 1:-1] + c[1:-1, 2:] + c[1:-1, :-2]
                       - 4.0 * c[1:-1, 1:-1]) / (h * h)
    return out


def react(u: np.ndarray, h: float, M0: float, dt: float) -> np.ndarray:
    """Exact logistic substep; the growth rate is uniform so it is a single scale."""
    m = float(np.sum(u)) * h * h
    if m <= 0:
        return u
    return u * (oracle.logistic_update(M0, m, dt) / m)


def _clean(u: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    umax = float(np.max(np.abs(u))) if u.size else 0.0
    neg = float(-np.min(u)) if u.size else 0.0
    if neg > tol * max(umax, 1e-300):
        raise StepRejected(f"negative density {-neg:.3g} after substep")
    return np.maximum(u, 0.0)


def step2d(state: PlanarState, dt: float, parts: FrozenSet[str] = ALL_PARTS,
           splitting: str = "strang", workers: Optional[int] = None,
           scheme: str = "muscl") -> PlanarState:
    """One split step.

    ``parts`` selects which substeps run (a test hook); ``splitting`` is
    ``"strang"`` (R/2 D/2 A D/2 R/2) or ``"lie"`` (R D A).
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise DomainError(f"dt must be positive, got {dt!r}")
    unknown = set(parts) - ALL_PARTS
    if unknown:
        raise DomainError(f"unknown substeps {sorted(unknown)}")
    dom, h, M0 = state.domain, state.domain.h, state.p.M0
    u = state.u
    half = 0.5 * dt if splitting == "strang" else dt
    if splitting not in ("strang", "lie"):
        raise DomainError(f"unknown splitting {splitting!r}")

    if "reaction" in parts:
        u = react(u, h, M0, half)
    if "diffusion" in parts:
        u = _clean(diffuse(u, h, half, workers))
    if "advection" in parts:
        tmp = PlanarState(dom, u, state.t, state.p)
        vx, vy = velocity(tmp, solve_potential(tmp, workers))
        if dt > advective_limit(vx, vy, h, scheme) * (1.0 + 1e-12):
            raise StepRejected("advective CFL violated")
        u = _clean(advect(u, vx, vy, h, dt, scheme))
    if splitting == "strang":
        if "diffusion" in parts:
            u = _clean(diffuse(u, h, half, workers))
        if "reaction" in parts:
            u = react(u, h, M0, half)
    if not np.all(np.isfinite(u)):
        raise NonFinite("density is not finite")
    return PlanarState(dom, u, state.t + dt, state.p)


# --------------------------------------------------------------------------------------
# driver


@dataclass
class PlanarPolicy:
    dt0: float = 1e-3
    dt_max: float = 1e-2
    dt_min: float = 1e-12
    grow: float = 1.25
    grow_after: int = 10
    ceiling: float = 1e8
    #: A cell holding this much mass triggers blow-up detection on coarse grids.
    cell_mass_ceiling: float = 0.5 * math.pi
    splitting: str = "strang"
    scheme: str = "muscl"
    workers: Optional[int] = None
    max_steps: int = 10_000_000

    def density_ceiling(self, h: float) -> float:
        return min(self.ceiling, self.cell_mass_ceiling / (h * h))


def run2d(initial: PlanarState, t_end: float, observe_every: float,
          policy: Optional[PlanarPolicy] = None, keep_states: bool = True):
    """Integrate to ``t_end`` with the same stopping rules as the radial driver."""
    from . import gauges
    from .radialmass import Outcome, Trajectory, observation_times

    policy = policy or PlanarPolicy()
    if t_end < initial.t:
        raise DomainError("t_end precedes the initial time")
    traj = Trajectory(t_stop=initial.t)
    state = initial.copy()
    h = state.domain.h
    ceiling = policy.density_ceiling(h)
    com0 = None

    def emit(st, blowup=False):
        nonlocal com0
        c = solve_potential(st, policy.workers)
        rec = gauges.planar_record(st, c, blowup=blowup, com0=com0)
        if com0 is None:
            com0 = rec.center_of_mass
            rec.extra["com_drift"] = 0.0
        traj.records.append(rec)
        if keep_states:
            traj.states.append(st.copy())

    emit(state)
    if t_end == initial.t:
        return traj

    dt = policy.dt0
    streak = 0
    for t_obs in observation_times(initial.t, t_end, observe_every):
        while state.t < t_obs:
            vx, vy = velocity(state, solve_potential(state, policy.workers))
            cap = 0.9 * advective_limit(vx, vy, h, policy.scheme)
            trial = min(dt, cap, policy.dt_max)
            if trial < policy.dt_min:
                traj.outcome, traj.reason, traj.t_stop = Outcome.BLOWUP, "dt underflow", state.t
                emit(state, True)
                return traj
            remaining = t_obs - state.t
            hit = trial >= remaining
            trial = remaining if hit else trial
            try:
                new = step2d(state, trial, splitting=policy.splitting, workers=policy.workers,
                             scheme=policy.scheme)
            except StepRejected as exc:
                traj.rejections += 1
                dt = 0.5 * min(dt, trial)
                streak = 0
                logger.debug("t=%.6g: 2d step %.3g rejected (%s)", state.t, trial, exc)
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
            if float(np.max(state.u)) > ceiling:
                traj.outcome, traj.reason, traj.t_stop = Outcome.BLOWUP, "density ceiling", state.t
                emit(state, True)
                return traj
            if traj.steps >= policy.max_steps:
                raise StepRejected("step budget exhausted")
        traj.t_stop = state.t
        emit(state)
    return traj
