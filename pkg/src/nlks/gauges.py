"""Scalar diagnostics: moments, entropy, interaction and free energy, dissipation.

Radial states are read as a density that is constant on each annulus
``s_j < r**2 < s_{j+1}``, so the cumulative mass is linear in ``s`` on each
cell.  Entropy, interaction energy and the log-HLS functional are evaluated
exactly for that piecewise representation, which keeps the discrete log-HLS
gap nonnegative and lets the two free-energy forms agree to roundoff.

All record fields refer to the physical density ``u = m(t) rho``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.integrate import simpson

from . import oracle

#: Densities below this contribute nothing to log-weighted integrands (0 log 0 = 0).
DENSITY_FLOOR = 1e-14

CSV_HEADER = ("t", "mass", "m2", "entropy", "interaction", "F_u", "F_rho", "dissipation",
              "max_density", "half_mass_radius", "boundary_current", "flags")


@dataclass
class GaugeRecord:
    """One time-stamped row of diagnostics."""

    t: float
    mass: float
    m2: float
    entropy: float
    interaction: float
    free_energy: float
    free_energy_rho: float
    dissipation: float
    max_density: float
    half_mass_radius: float
    boundary_current: float
    concentration_flag: bool = False
    vanishing_flag: bool = False
    blowup_flag: bool = False
    concentration_radius: float = math.nan
    log_hls_gap: float = math.nan
    mass_deficit: float = 0.0
    m2_remainder: float = 0.0
    center_of_mass: tuple = (0.0, 0.0)
    extra: dict = field(default_factory=dict)

    @property
    def flags(self) -> str:
        names = []
        if self.concentration_flag:
            names.append("concentration")
        if self.vanishing_flag:
            names.append("vanishing")
        if self.blowup_flag:
            names.append("blowup")
        return ";".join(names)

    def csv_row(self) -> list:
        vals = [self.t, self.mass, self.m2, self.entropy, self.interaction, self.free_energy,
                self.free_energy_rho, self.dissipation, self.max_density, self.half_mass_radius,
                self.boundary_current]
        return [repr(float(v)) for v in vals] + [self.flags]

    def as_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------------------
# generic quadratures


def entropy(density, measure) -> float:
    """``sum u log(u) * measure`` with cells below the floor contributing zero."""
    u = np.asarray(density, dtype=float)
    w = np.broadcast_to(np.asarray(measure, dtype=float), u.shape)
    pos = u > DENSITY_FLOOR
    return float(np.sum(u[pos] * np.log(u[pos]) * w[pos]))


def log_hls_gap_from_parts(entropy_value: float, pair_integral: float, mass: float) -> float:
    """``S + (2/M) P - M (log M - 1 - log pi)`` with ``P`` the log pair integral."""
    if mass <= 0:
        return 0.0
    return entropy_value + (2.0 / mass) * pair_integral - mass * (math.log(mass) - 1.0
                                                               - math.log(math.pi))


def log_hls_gap(density, measure, potential, mass: Optional[float] = None) -> float:
    """Gap in the logarithmic HLS inequality for ``density`` with Newtonian ``potential``.

    The pair integral ``int int f f log|x - y|`` equals ``-2 pi int f c``.
    """
    f = np.asarray(density, dtype=float)
    w = np.broadcast_to(np.asarray(measure, dtype=float), f.shape)
    M = float(np.sum(f * w)) if mass is None else float(mass)
    pair = -2.0 * math.pi * float(np.sum(f * np.asarray(potential) * w))
    return log_hls_gap_from_parts(entropy(f, w), pair, M)


def free_energy_from_parts(entropy_value: float, interaction: float, m: float) -> float:
    """``S/m - I/(2m) - log m``."""
    return entropy_value / m - interaction / (2.0 * m) - math.log(m)


def chemical_potential_spread(density, potential, mask=None) -> float:
    """``max - min`` of ``log u - c`` over ``mask``; zero for an exact steady state."""
    u = np.asarray(density, dtype=float)
    c = np.asarray(potential, dtype=float)
    sel = np.ones(u.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    sel = sel & (u > DENSITY_FLOOR)
    if not np.any(sel):
        return math.nan
    mu = np.log(u[sel]) - c[sel]
    return float(mu.max() - mu.min())


def _log_mean(a, b):
    """Logarithmic mean, ``rho_hat (log rho)' = rho'`` exactly for the two-point stencil."""
    with np.errstate(divide="ignore", invalid="ignore"):
        lm = (b - a) / (np.log(b) - np.log(a))
    return np.where(np.abs(b - a) <= 1e-12 * np.maximum(a, b), 0.5 * (a + b), lm)


# --------------------------------------------------------------------------------------
# radial states


def radial_cells(state):
    """Normalized cell densities and annulus areas ``pi ds``."""
    ds = state.grid.ds
    rho = np.diff(state.M) / (math.pi * ds)
    return rho, math.pi * ds


def _cell_log_ratio(s):
    """``log(s_{j+1} / s_j)`` per cell, set to 0 on the first cell where ``s_0 = 0``."""
    s0 = s[:-1]
    safe = np.where(s0 > 0, s0, 1.0)
    return np.where(s0 > 0, np.log1p(np.diff(s) / safe), 0.0)


def _cell_m2_over_s(s, M):
    """Exact ``int M**2 / s ds`` per cell for ``M`` linear in ``s``.

    The first cell has ``M = b s``, so the logarithmic term drops out there.
    """
    s0, s1 = s[:-1], s[1:]
    d = s1 - s0
    b = np.diff(M) / d
    a = M[:-1] - b * s0
    return a * a * _cell_log_ratio(s) + 2.0 * a * b * d + 0.5 * b * b * (s1 * s1 - s0 * s0)


def radial_potential(state) -> np.ndarray:
    """Normalized potential ``w`` at the nodes, anchored to the point-mass far field."""
    s, M = state.grid.s_nodes, state.M
    d = np.diff(s)
    b = np.diff(M) / d
    a = M[:-1] - b * s[:-1]
    cell = a * _cell_log_ratio(s) + b * d  # int M/s ds per cell
    tail = np.concatenate([np.cumsum(cell[::-1])[::-1], [0.0]])
    return -M[-1] * math.log(state.grid.s_max) / (4.0 * math.pi) + tail / (4.0 * math.pi)


def _rho_w(state) -> float:
    s_max = state.grid.s_max
    total = float(np.sum(_cell_m2_over_s(state.grid.s_nodes, state.M)))
    return (total - state.M[-1] ** 2 * math.log(s_max)) / (4.0 * math.pi)


def interaction_radial(state, physical: Optional[bool] = None) -> float:
    """``int rho w`` (normalized) or ``int u c = m**2 int rho w`` (physical)."""
    from .radialmass import Mode

    physical = state.mode is Mode.PHYSICAL if physical is None else physical
    val = _rho_w(state)
    return state.m ** 2 * val if physical else val


def entropy_radial(state, physical: bool = True) -> float:
    rho, area = radial_cells(state)
    return entropy(state.m * rho if physical else rho, area)


def second_moment_radial(state, physical: bool = True) -> float:
    """``int |x|^2 u dx = m int_0^s_max (1 - M) ds`` (the by-parts form)."""
    s, M = state.grid.s_nodes, state.M
    val = float(simpson(M[-1] - M, x=s))
    return state.m * val if physical else val


def second_moment_remainder(state, physical: bool = True) -> float:
    """Lower bound for the second moment of the initial mass cut off beyond ``s_max``."""
    val = state.grid.s_max * state.mass_deficit
    return state.m * val if physical else val


def dissipation_radial(state) -> float:
    """``int rho |d_r log rho + m M / (2 pi r)|^2 dx`` from node differences."""
    rho, _ = radial_cells(state)
    s = state.grid.s_nodes[1:-1]
    ds = state.grid.ds
    w = 0.5 * (ds[:-1] + ds[1:])
    a, b = rho[:-1], rho[1:]
    ok = (a > DENSITY_FLOOR) & (b > DENSITY_FLOOR)
    if not np.any(ok):
        return 0.0
    a, b, s, w = a[ok], b[ok], s[ok], w[ok]
    Mi = state.M[1:-1][ok]
    g = (np.log(b) - np.log(a)) / w + state.m * Mi / (4.0 * math.pi * s)
    return float(4.0 * math.pi * np.sum(s * _log_mean(a, b) * g * g * w))


def half_mass_radius(state) -> float:
    s, M = state.grid.s_nodes, state.M
    target = 0.5 * M[-1]
    j = int(np.searchsorted(M, target, side="left"))
    if j == 0:
        return 0.0
    j = min(j, len(s) - 1)
    m_lo, m_hi = M[j - 1], M[j]
    frac = 0.0 if m_hi == m_lo else (target - m_lo) / (m_hi - m_lo)
    return math.sqrt(s[j - 1] + frac * (s[j] - s[j - 1]))


def boundary_current_radial(state) -> float:
    """Outward flux ``-4 pi s rho_s - m rho M`` at ``s_max``, in units of ``u``."""
    rho, _ = radial_cells(state)
    ds = state.grid.ds
    s = state.grid.s_max
    rho_s = (rho[-1] - rho[-2]) / (0.5 * (ds[-1] + ds[-2]))
    m = state.m
    return m * (-4.0 * math.pi * s * rho_s - m * rho[-1] * state.M[-1])


def free_energy_radial(state):
    """Return ``(F_u, F_rho)``, the free energy in ``u`` and in ``rho`` variables."""
    m = state.m
    rho, area = radial_cells(state)
    rho_w = _rho_w(state)
    S_u = entropy(m * rho, area)
    I_u = m * m * rho_w
    F_u = free_energy_from_parts(S_u, I_u, m)
    F_rho = entropy(rho, area) - 0.5 * m * rho_w
    return F_u, F_rho


def log_hls_gap_radial(state) -> float:
    rho, area = radial_cells(state)
    m = state.m
    f = m * rho
    pair = -2.0 * math.pi * m * m * _rho_w(state)
    return log_hls_gap_from_parts(entropy(f, area), pair, float(np.sum(f * area)))


def detect_concentration(state, threshold: float) -> Optional[float]:
    """Smallest node radius with ``M > threshold``, or ``None``."""
    if not (0.0 < threshold < 1.0):
        raise oracle.DomainError(f"threshold must lie in (0, 1), got {threshold!r}")
    idx = np.flatnonzero(state.M > threshold)
    if idx.size == 0:
        return None
    return float(state.grid.r_nodes[idx[0]])


def detect_vanishing(state, R: float, tol: float) -> bool:
    """True iff ``M(t, R) < tol``, interpolating linearly in ``s``."""
    s_max = state.grid.s_max
    if R < 0 or R * R > s_max * (1 + 1e-12):
        raise oracle.DomainError(f"R={R!r} lies beyond the truncation radius {math.sqrt(s_max):.6g}")
    val = float(np.interp(R * R, state.grid.s_nodes, state.M))
    return val < tol


def radial_record(state, *, vanish_R: float = 1.0, vanish_tol: float = 0.01,
                  concentration_threshold: Optional[float] = None,
                  blowup: bool = False) -> GaugeRecord:
    """Gauge row for a radial state (physical units)."""
    m = state.m
    rho, area = radial_cells(state)
    rho_w = _rho_w(state)
    u = m * rho
    S = entropy(u, area)
    I = m * m * rho_w
    mass = m * float(state.M[-1])
    F_u = free_energy_from_parts(S, I, mass)
    F_rho = entropy(rho, area) - 0.5 * m * rho_w
    thr = 8.0 * math.pi / state.p.M0 if concentration_threshold is None else concentration_threshold
    conc = detect_concentration(state, thr) if 0.0 < thr < 1.0 else None
    vanish = (detect_vanishing(state, vanish_R, vanish_tol)
              if vanish_R * vanish_R <= state.grid.s_max else False)
    return GaugeRecord(
        t=state.t, mass=mass, m2=second_moment_radial(state), entropy=S, interaction=I,
        free_energy=F_u, free_energy_rho=F_rho, dissipation=dissipation_radial(state),
        max_density=float(u.max()), half_mass_radius=half_mass_radius(state),
        boundary_current=boundary_current_radial(state),
        concentration_flag=conc is not None, vanishing_flag=bool(vanish), blowup_flag=blowup,
        concentration_radius=math.nan if conc is None else conc,
        log_hls_gap=log_hls_gap_from_parts(S, -2.0 * math.pi * I, mass),
        mass_deficit=state.mass_deficit, m2_remainder=second_moment_remainder(state),
    )


# --------------------------------------------------------------------------------------
# planar states


def planar_dissipation(u, c, h: float, m: float) -> float:
    """``int (u/m) |grad log u - grad c|^2`` summed over interior faces."""
    total = 0.0
    for axis in (0, 1):
        a = np.take(u, np.arange(u.shape[axis] - 1), axis=axis)
        b = np.take(u, np.arange(1, u.shape[axis]), axis=axis)
        ca = np.take(c, np.arange(c.shape[axis] - 1), axis=axis)
        cb = np.take(c, np.arange(1, c.shape[axis]), axis=axis)
        ok = (a > DENSITY_FLOOR) & (b > DENSITY_FLOOR)
        a, b, dc = a[ok], b[ok], (cb - ca)[ok]
        g = (np.log(b) - np.log(a) - dc) / h
        total += float(np.sum(_log_mean(a, b) * g * g)) * h * h
    return total / m


def planar_half_mass_radius(u, r2, h: float, center=None) -> float:
    order = np.argsort(r2, axis=None)
    cum = np.cumsum(u.ravel()[order]) * h * h
    total = cum[-1]
    if total <= 0:
        return math.nan
    j = int(np.searchsorted(cum, 0.5 * total))
    return math.sqrt(r2.ravel()[order][min(j, cum.size - 1)])


def planar_boundary_current(u, vx_edge, h: float) -> float:
    """Outflow a zero exterior would draw through the four box edges.

    ``vx_edge`` is a tuple of outward normal velocities on the left, right,
    bottom and top edges, matching the edge rows of ``u``.
    """
    edges = (u[0, :], u[-1, :], u[:, 0], u[:, -1])
    total = 0.0
    for ue, vn in zip(edges, vx_edge):
        total += float(np.sum(ue * np.maximum(vn, 0.0) + 2.0 * ue / h)) * h
    return total


def planar_record(state, c=None, *, blowup: bool = False, com0=None) -> GaugeRecord:
    """Gauge row for a planar state; ``c`` is computed when not supplied."""
    from . import planefield

    dom = state.domain
    h = dom.h
    u = state.u
    if c is None:
        c = planefield.solve_potential(state)
    cell = h * h
    mass = float(np.sum(u)) * cell
    X, Y = dom.centers()
    r2 = X * X + Y * Y
    S = entropy(u, cell)
    I = float(np.sum(u * c)) * cell
    if mass > 0:
        F_u = free_energy_from_parts(S, I, mass)
        rho = u / mass
        F_rho = entropy(rho, cell) - 0.5 * mass * float(np.sum(rho * (c / mass))) * cell
        com = (float(np.sum(u * X)) * cell / mass, float(np.sum(u * Y)) * cell / mass)
        D = planar_dissipation(u, c, h, mass)
        gap = log_hls_gap_from_parts(S, -2.0 * math.pi * I, mass)
    else:
        F_u = F_rho = D = gap = math.nan
        com = (math.nan, math.nan)
    vedge = planefield.edge_velocities(c, h)
    extra = {}
    if com0 is not None:
        extra["com_drift"] = math.hypot(com[0] - com0[0], com[1] - com0[1])
    return GaugeRecord(
        t=state.t, mass=mass, m2=float(np.sum(u * r2)) * cell, entropy=S, interaction=I,
        free_energy=F_u, free_energy_rho=F_rho, dissipation=D, max_density=float(u.max()),
        half_mass_radius=planar_half_mass_radius(u, r2, h),
        boundary_current=planar_boundary_current(u, vedge, h), blowup_flag=blowup,
        log_hls_gap=gap, center_of_mass=com, extra=extra,
    )


def record_fieldnames():
    return [f.name for f in fields(GaugeRecord)]
