"""Build initial data from a config, run the solver and write its outputs."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .. import gauges, oracle, planefield, radialmass
from ..errors import NLKSError
from .checkpoint import checkpoint_save
from .config import ScenarioConfig, parse_bumps

logger = logging.getLogger(__name__)

EIGHT_PI = oracle.EIGHT_PI


# --------------------------------------------------------------------------------------
# initial data


def _gaussian_sigma2(cfg: ScenarioConfig) -> float:
    ini = cfg.initial
    if ini.get("sigma") is not None:
        return ini.get("sigma") ** 2
    # m2 = int |x|^2 u = 2 sigma^2 m0 for a centred Gaussian
    return ini.get("m2") / (2.0 * cfg.m0)


def cumulative_profile(cfg: ScenarioConfig):
    """Cumulative-mass fraction as a function of ``s = r**2``."""
    ini = cfg.initial
    kind = ini.kind
    if kind == "steady":
        lam, scale = ini.get("lambda", 1.0), ini.get("scale", 1.0)
        return lambda s: np.minimum(1.0, scale * s / (s + lam))
    if kind == "scaled_steady":
        fam = oracle.SteadyFamily(ini.get("lambda", 1.0), cfg.M0)
        factor = ini.get("factor")
        return lambda s: np.minimum(1.0, factor * oracle.steady_cumulative_s(fam, s))
    if kind == "gaussian":
        two_sig2 = 2.0 * _gaussian_sigma2(cfg)
        return lambda s: -np.expm1(-s / two_sig2)
    if kind == "ramp":
        R = ini.get("radius")
        s_edge = cfg.s_max if R is None else R * R
        return lambda s: np.minimum(1.0, s / s_edge)
    if kind == "custom_samples":
        r, M = load_samples(ini.get("path"))
        return lambda s: np.interp(np.sqrt(s), r, M, right=M[-1])
    raise NLKSError(f"initial kind {kind!r} has no radial profile")


def load_samples(path):
    """Read a two-column ``r, M`` CSV; a header row is optional."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(rec[0]), float(rec[1])))
            except ValueError:
                if rows:
                    raise
    if len(rows) < 2:
        raise NLKSError(f"{path}: need at least two samples")
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1]


def planar_density(cfg: ScenarioConfig):
    """Density ``u(X, Y)`` up to normalisation."""
    ini = cfg.initial
    kind = ini.kind
    if kind == "bumps":
        if ini.get("bumps") is not None:
            bumps = parse_bumps(ini.get("bumps"))
        else:
            rng = np.random.default_rng(cfg.seed)
            sig = ini.get("sigma", 0.3)
            bumps = [(*rng.uniform(-0.25, 0.25, 2) * cfg.L, sig, rng.uniform(0.5, 1.5))
                     for _ in range(ini.get("count"))]

        def dens(X, Y):
            out = np.zeros_like(X)
            for x, y, s, w in bumps:
                out += w * np.exp(-((X - x) ** 2 + (Y - y) ** 2) / (2 * s * s)) / (2 * math.pi * s * s)
            return out
        return dens
    if kind == "gaussian":
        two_sig2 = 2.0 * _gaussian_sigma2(cfg)
        return lambda X, Y: np.exp(-(X * X + Y * Y) / two_sig2)
    if kind in ("steady", "scaled_steady"):
        lam = ini.get("lambda", 1.0)
        a = ini.get("scale", 1.0) if kind == "steady" else ini.get("factor") * EIGHT_PI / cfg.M0
        # density of min(1, a s/(s+lam)) is a lam / (pi (s+lam)^2) below the cap
        s_cap = lam / (a - 1.0) if a > 1.0 else math.inf
        return lambda X, Y: np.where(X * X + Y * Y < s_cap,
                                     a * lam / (math.pi * (X * X + Y * Y + lam) ** 2), 0.0)
    if kind == "ramp":
        R = ini.get("radius", 0.5 * cfg.L)
        return lambda X, Y: np.where(X * X + Y * Y <= R * R, 1.0, 0.0)
    raise NLKSError(f"initial kind {kind!r} has no planar density")


def radial_grid(cfg: ScenarioConfig) -> radialmass.SGrid:
    if cfg.stretch is not None:
        return radialmass.SGrid.graded(cfg.n, cfg.s_max, cfg.stretch)
    return radialmass.SGrid.with_first_spacing(cfg.n, cfg.s_max, cfg.first_spacing)


def initial_state(cfg: ScenarioConfig):
    p = cfg.params
    if cfg.solver == "radial":
        return radialmass.init_from_profile(radial_grid(cfg), cumulative_profile(cfg), p,
                                            variable="s", mode=radialmass.Mode.PHYSICAL)
    dom = planefield.PlanarDomain(cfg.L, cfg.n)
    return planefield.init_planar(dom, planar_density(cfg), p)


# --------------------------------------------------------------------------------------
# reports


@dataclass
class ScenarioReport:
    name: str
    solver: str
    M0: float
    m0: float
    m2_0: float
    predicted: str
    predicted_note: str
    observed: str
    agree: bool
    verdict: str
    t_end: float
    t_stop: float
    blowup_detected: bool
    detected_time: Optional[float]
    analytic_blowup_time: Optional[float]
    stop_reason: str
    vanishing: bool
    concentration: bool
    concentration_radii: List[float] = field(default_factory=list)
    mass_deficit: float = 0.0
    boundary_current_max: float = 0.0
    m2_remainder: float = 0.0
    config_hash: str = ""
    out_dir: Optional[str] = None
    error: Optional[str] = None
    notes: List[str] = field(default_factory=list)
    steps: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


_GLOBAL = {oracle.RegimeTag.GLOBAL_EXISTENCE, oracle.RegimeTag.GLOBAL_BY_COMPARISON,
           oracle.RegimeTag.INFINITE_TIME_BLOWUP}
_BLOWUP = {oracle.RegimeTag.FINITE_TIME_BLOWUP, oracle.RegimeTag.CONDITIONAL_FINITE_BLOWUP}


def judge(predicted: oracle.Regime, blowup: bool, failed: bool):
    """Agreement between the predicted regime and what the run showed.

    Open cases carry no prediction, so any outcome is consistent with them.
    """
    tag = predicted.tag
    if failed:
        return False, "solver failure"
    if tag is oracle.RegimeTag.OPEN_CRITICAL:
        return True, "open case: outcome recorded, no prediction to test"
    if tag in _BLOWUP:
        return blowup, "blow-up predicted" + (" and detected" if blowup else " but not detected")
    if tag in _GLOBAL:
        return (not blowup), ("no finite-time blow-up predicted"
                              + (", none detected" if not blowup else ", but detected"))
    return False, "unknown regime"  # pragma: no cover


def _observed_label(traj, records, failed, predicted):
    if failed:
        return "failed"
    if traj.blowup:
        label = f"BlowupDetected({traj.t_stop:.6g})"
    else:
        last = records[-1]
        if last.vanishing_flag:
            label = "vanishing"
        elif any(r.concentration_flag for r in records):
            label = "concentration"
        else:
            label = "completed"
    if predicted.tag is oracle.RegimeTag.OPEN_CRITICAL:
        label = f"OpenCritical-observed: {label}"
    return label


# --------------------------------------------------------------------------------------
# running


def _radial_policy(cfg: ScenarioConfig) -> radialmass.StepPolicy:
    pol = radialmass.StepPolicy(ceiling=cfg.ceiling, dt_min=cfg.dt_min)
    if cfg.dt0 is not None:
        pol.dt0 = cfg.dt0
    pol.dt_max = cfg.dt_max if cfg.dt_max is not None else max(cfg.observe_every, 1e-12)
    return pol


def _planar_policy(cfg: ScenarioConfig) -> planefield.PlanarPolicy:
    pol = planefield.PlanarPolicy(ceiling=cfg.ceiling, dt_min=cfg.dt_min,
                                  cell_mass_ceiling=cfg.cell_mass_ceiling,
                                  workers=1 if cfg.reproducible else None)
    if cfg.dt0 is not None:
        pol.dt0 = cfg.dt0
    pol.dt_max = cfg.dt_max if cfg.dt_max is not None else min(1e-2, cfg.observe_every)
    return pol


def simulate(cfg: ScenarioConfig, keep_states: bool = True):
    """Run the configured solver; returns ``(initial_state, trajectory)``."""
    st0 = initial_state(cfg)
    if cfg.solver == "radial":
        thr = cfg.concentration_threshold
        traj = radialmass.run(st0, cfg.t_end, cfg.observe_every, _radial_policy(cfg),
                              keep_states=keep_states, vanish_R=cfg.vanish_radius,
                              vanish_tol=cfg.vanish_tol, concentration_threshold=thr)
    else:
        traj = planefield.run2d(st0, cfg.t_end, cfg.observe_every, _planar_policy(cfg),
                                keep_states=keep_states)
    return st0, traj


def write_csv(records, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(gauges.CSV_HEADER)
    for rec in records:
        w.writerow(rec.csv_row())


def csv_text(records) -> str:
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue()


def output_dir(cfg: ScenarioConfig, root) -> Path:
    safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in cfg.name) or "scenario"
    return Path(root) / f"{safe}-{cfg.digest()}"


def run_scenario(cfg: ScenarioConfig, out_root=None) -> ScenarioReport:
    """Run one scenario; solver errors become a failed report rather than an exception."""
    out = output_dir(cfg, out_root) if out_root is not None else None
    m2_0 = math.nan
    traj = None
    error = None
    try:
        st0 = initial_state(cfg)
        m2_0 = initial_second_moment(st0)
        keep = out is not None and cfg.snapshots != "none"
        _, traj = simulate(cfg, keep_states=keep)
    except (NLKSError, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        logger.warning("scenario %s failed: %s", cfg.name, error)
    rep = assess(cfg, traj, m2_0, error, out)
    if out is not None:
        _write_outputs(out, cfg, rep, traj)
    return rep


def initial_second_moment(st0) -> float:
    if isinstance(st0, planefield.PlanarState):
        return gauges.planar_record(st0).m2
    return gauges.second_moment_radial(st0)


def assess(cfg: ScenarioConfig, traj, m2_0: float, error: Optional[str] = None,
           out: Optional[Path] = None) -> ScenarioReport:
    """Compare a finished trajectory (``None`` on failure) with the predicted regime."""
    p = cfg.params
    predicted = oracle.classify(p, m2_0 if math.isfinite(m2_0) else None)
    failed = traj is None
    blowup = bool(traj is not None and traj.blowup)
    records = traj.records if traj is not None else []
    agree, verdict = judge(predicted, blowup, failed)
    t_star = None
    if predicted.tag in _BLOWUP and math.isfinite(m2_0) and m2_0 > 0:
        t_star = oracle.blowup_time(p, m2_0)
    radii = [r.concentration_radius for r in records if r.concentration_flag]
    return ScenarioReport(
        name=cfg.name, solver=cfg.solver, M0=cfg.M0, m0=cfg.m0, m2_0=m2_0,
        predicted=predicted.tag.value, predicted_note=predicted.note,
        observed=_observed_label(traj, records, failed, predicted) if not failed else "failed",
        agree=agree, verdict=verdict, t_end=cfg.t_end,
        t_stop=traj.t_stop if traj is not None else 0.0, blowup_detected=blowup,
        detected_time=traj.t_stop if blowup else None, analytic_blowup_time=t_star,
        stop_reason=traj.reason if traj is not None else "",
        vanishing=bool(records and records[-1].vanishing_flag),
        concentration=bool(radii), concentration_radii=radii,
        mass_deficit=records[0].mass_deficit if records else 0.0,
        boundary_current_max=max((abs(r.boundary_current) for r in records), default=0.0),
        m2_remainder=records[0].m2_remainder if records else 0.0,
        config_hash=cfg.digest(), out_dir=str(out) if out is not None else None,
        error=error, notes=list(cfg.notes), steps=traj.steps if traj is not None else 0,
    )


def _write_outputs(out: Path, cfg: ScenarioConfig, rep: ScenarioReport, traj) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.source)
    if traj is not None:
        with open(out / "gauges.csv", "w", newline="") as fh:
            write_csv(traj.records, fh)
        states = traj.states
        if cfg.snapshots == "final":
            states = states[-1:]
        elif cfg.snapshots == "none":
            states = []
        snap = out / "snapshots"
        if states:
            snap.mkdir(exist_ok=True)
        for k, st in enumerate(states):
            idx = k if cfg.snapshots == "all" else len(traj.states) - 1
            checkpoint_save(st, snap / f"state_{idx:05d}.nlks")
    (out / "report.json").write_text(rep.to_json())


def _run_one(args):
    cfg, root = args
    return run_scenario(cfg, root)


def run_sweep(cfgs: Sequence[ScenarioConfig], out_root=None,
              max_workers: Optional[int] = 1) -> List[ScenarioReport]:
    """Run independent scenarios, in worker processes when ``max_workers > 1``.

    Reports come back in input order whatever the completion order.
    """
    jobs = [(c, out_root) for c in cfgs]
    if max_workers is not None and max_workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_one, jobs))


def load_reports(paths) -> List[ScenarioReport]:
    """Collect ``report.json`` files from the given files or folders."""
    found = []
    for p in paths:
        p = Path(p)
        files = [p] if p.is_file() else sorted(p.rglob("report.json"))
        for f in files:
            found.append(ScenarioReport.from_dict(json.loads(f.read_text())))
    return found
