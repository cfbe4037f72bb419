"""Scenario documents: INI-style sections of ``key = value`` lines.

Numbers may be written as multiples of pi (``16pi``, ``16*pi``, ``pi/2``,
``2.5 pi``).  Unknown sections and keys are errors, reported with the line
they appear on.  A minimal document::

    [scenario]
    name = collapse
    solver = radial

    [growth]
    M0 = 16pi
    m0 = 16pi

    [initial]
    kind = gaussian
    m2 = 1

    [times]
    t_end = 0.02
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .. import oracle
from ..errors import ParseError, ValidationError

_NUM = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_PI_RE = re.compile(rf"^\s*(?P<coef>{_NUM})?\s*\*?\s*pi\s*(?:/\s*(?P<den>{_NUM}))?\s*$", re.I)

SOLVERS = ("radial", "planar")
INITIAL_KINDS = ("steady", "scaled_steady", "gaussian", "ramp", "custom_samples", "bumps")
SNAPSHOT_MODES = ("all", "final", "none")

# section -> key -> type tag
SCHEMA: Dict[str, Dict[str, str]] = {
    "scenario": {"name": "str", "solver": "str", "reproducible": "bool", "seed": "int"},
    "growth": {"M0": "num", "m0": "num"},
    "initial": {"kind": "str", "lambda": "num", "scale": "num", "factor": "num",
                "sigma": "num", "m2": "num", "mass": "num", "radius": "num", "path": "str",
                "bumps": "str", "count": "int"},
    "grid": {"n": "int", "s_max": "num", "stretch": "num", "first_spacing": "num", "L": "num"},
    "times": {"t_end": "num", "observe_every": "num", "dt0": "num", "dt_max": "num"},
    "detectors": {"ceiling": "num", "dt_min": "num", "vanish_radius": "num",
                  "vanish_tol": "num", "concentration_threshold": "num",
                  "cell_mass_ceiling": "num"},
    "output": {"snapshots": "str"},
}

DEFAULTS = {
    "n": 512,
    "s_max": 1e4,
    "first_spacing": 1e-10,
    "L": 8.0,
    "planar_n": 128,
    "ceiling": 1e8,
    "dt_min": 1e-12,
    "vanish_radius": 1.0,
    "vanish_tol": 0.01,
    "cell_mass_ceiling": math.pi / 2,
}


def parse_number(text: str) -> float:
    """Parse a float, accepting multiples of pi."""
    s = text.strip()
    m = _PI_RE.match(s)
    if m:
        coef = float(m.group("coef")) if m.group("coef") else 1.0
        den = float(m.group("den")) if m.group("den") else 1.0
        if den == 0:
            raise ValueError("division by zero")
        return coef * math.pi / den
    return float(s)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class InitialSpec:
    kind: str
    params: Tuple[Tuple[str, object], ...] = ()

    def get(self, key, default=None):
        return dict(self.params).get(key, default)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    solver: str
    M0: float
    m0: float
    initial: InitialSpec
    t_end: float
    observe_every: float
    n: int
    s_max: float
    stretch: Optional[float]
    first_spacing: float
    L: float
    dt0: Optional[float]
    dt_max: Optional[float]
    ceiling: float
    dt_min: float
    vanish_radius: float
    vanish_tol: float
    concentration_threshold: Optional[float]
    cell_mass_ceiling: float
    reproducible: bool = True
    seed: int = 0
    snapshots: str = "all"
    notes: Tuple[str, ...] = ()
    source: str = field(default="", compare=False, repr=False)

    @property
    def params(self) -> oracle.GrowthParams:
        return oracle.GrowthParams(self.M0, self.m0)

    def digest(self) -> str:
        """Short hash of the canonical settings, used to name output folders."""
        fields_ = [f"{k}={getattr(self, k)!r}" for k in (
            "name", "solver", "M0", "m0", "initial", "t_end", "observe_every", "n", "s_max",
            "stretch", "first_spacing", "L", "dt0", "dt_max", "ceiling", "dt_min",
            "vanish_radius", "vanish_tol", "concentration_threshold", "cell_mass_ceiling",
            "reproducible", "seed", "snapshots")]
        return hashlib.sha256("\n".join(fields_).encode()).hexdigest()[:12]


def _line_index(text: str) -> Dict[Tuple[Optional[str], Optional[str]], int]:
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    out: Dict[Tuple[Optional[str], Optional[str]], int] = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            out.setdefault((section, None), no)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", line)
        if m:
            out.setdefault((section, m.group(1).strip()), no)
    return out


def _read(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None,
                                   default_section="__none__")
    cp.optionxform = str  # keys are case sensitive (M0 and m0 differ)
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("key outside any section", line=exc.lineno) from exc
    except configparser.DuplicateOptionError as exc:
        raise ParseError("duplicate key", line=exc.lineno, key=exc.option) from exc
    except configparser.DuplicateSectionError as exc:
        raise ParseError(f"duplicate section [{exc.section}]", line=exc.lineno) from exc
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ParseError("malformed line", line=lineno) from exc
    return cp


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document."""
    cp = _read(text)
    lines = _line_index(text)
    raw: Dict[str, Dict[str, object]] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ParseError(f"unknown section [{section}]", line=lines.get((section, None)))
        raw[section] = {}
        for key, value in cp.items(section):
            where = dict(line=lines.get((section, key)), key=f"{section}.{key}")
            kind = SCHEMA[section].get(key)
            if kind is None:
                raise ParseError("unknown key", **where)
            try:
                if kind == "num":
                    val: object = parse_number(value)
                elif kind == "int":
                    val = int(value.strip())
                elif kind == "bool":
                    val = _parse_bool(value)
                else:
                    val = value.strip()
            except ValueError as exc:
                raise ParseError(f"bad value {value.strip()!r}: {exc}", **where) from exc
            raw[section][key] = val
    return _build(raw, text)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    cfg = parse_config(path.read_text())
    # custom sample paths are resolved against the document's folder
    p = cfg.initial.get("path")
    if p and not Path(p).is_absolute():
        params = dict(cfg.initial.params)
        params["path"] = str((path.parent / p).resolve())
        cfg = _replace(cfg, initial=InitialSpec(cfg.initial.kind, tuple(sorted(params.items()))))
    return cfg


def _replace(cfg, **kw):
    from dataclasses import replace
    return replace(cfg, **kw)


def _require(cond, message):
    if not cond:
        raise ValidationError(message)


def _positive(name, value):
    _require(value is not None and math.isfinite(value) and value > 0,
             f"{name} must be positive and finite, got {value!r}")


def _build(raw, text) -> ScenarioConfig:
    sc = raw.get("scenario", {})
    gr = raw.get("growth", {})
    ini = raw.get("initial", {})
    grid = raw.get("grid", {})
    tm = raw.get("times", {})
    det = raw.get("detectors", {})
    out = raw.get("output", {})
    notes: List[str] = []

    solver = sc.get("solver", "radial")
    _require(solver in SOLVERS, f"solver must be one of {SOLVERS}, got {solver!r}")
    _require("M0" in gr and "m0" in gr, "growth.M0 and growth.m0 are required")
    M0, m0 = gr["M0"], gr["m0"]
    _positive("growth.M0", M0)
    _positive("growth.m0", m0)
    p = oracle.GrowthParams(M0, m0)

    _require("t_end" in tm, "times.t_end is required")
    t_end = tm["t_end"]
    _require(math.isfinite(t_end) and t_end >= 0, f"times.t_end must be >= 0, got {t_end!r}")
    observe = tm.get("observe_every", t_end / 100 if t_end > 0 else 1.0)
    _positive("times.observe_every", observe)
    for key in ("dt0", "dt_max"):
        if key in tm:
            _positive(f"times.{key}", tm[key])

    kind = ini.get("kind")
    _require(kind in INITIAL_KINDS, f"initial.kind must be one of {INITIAL_KINDS}, got {kind!r}")
    params = {k: v for k, v in ini.items() if k != "kind"}
    notes += _check_initial(kind, params, p, solver)

    n_default = DEFAULTS["n"] if solver == "radial" else DEFAULTS["planar_n"]
    n = grid.get("n", n_default)
    if solver == "radial":
        _require(n >= 3, f"grid.n must be at least 3, got {n}")
        _require("L" not in grid, "grid.L applies to the planar solver only")
    else:
        _require(n >= 2 and (n & (n - 1)) == 0, f"grid.n must be a power of two, got {n}")
        for key in ("s_max", "stretch", "first_spacing"):
            _require(key not in grid, f"grid.{key} applies to the radial solver only")
    s_max = grid.get("s_max", DEFAULTS["s_max"])
    _positive("grid.s_max", s_max)
    stretch = grid.get("stretch")
    if stretch is not None:
        _require(stretch >= 0, "grid.stretch must be non-negative")
    first = grid.get("first_spacing", DEFAULTS["first_spacing"])
    _positive("grid.first_spacing", first)
    L = grid.get("L", DEFAULTS["L"])
    _positive("grid.L", L)

    thr = det.get("concentration_threshold")
    if thr is not None:
        _require(0 < thr < 1, "detectors.concentration_threshold must lie in (0, 1)")
    vt = det.get("vanish_tol", DEFAULTS["vanish_tol"])
    _require(0 < vt <= 1, "detectors.vanish_tol must lie in (0, 1]")
    vr = det.get("vanish_radius", DEFAULTS["vanish_radius"])
    _positive("detectors.vanish_radius", vr)
    if solver == "radial":
        _require(vr * vr <= s_max, "detectors.vanish_radius lies beyond the truncation radius")
    for key in ("ceiling", "dt_min", "cell_mass_ceiling"):
        if key in det:
            _positive(f"detectors.{key}", det[key])

    snaps = out.get("snapshots", "all")
    _require(snaps in SNAPSHOT_MODES, f"output.snapshots must be one of {SNAPSHOT_MODES}")

    return ScenarioConfig(
        name=sc.get("name", "scenario"), solver=solver, M0=M0, m0=m0,
        initial=InitialSpec(kind, tuple(sorted(params.items()))),
        t_end=t_end, observe_every=observe, n=n, s_max=s_max, stretch=stretch,
        first_spacing=first, L=L, dt0=tm.get("dt0"), dt_max=tm.get("dt_max"),
        ceiling=det.get("ceiling", DEFAULTS["ceiling"]),
        dt_min=det.get("dt_min", DEFAULTS["dt_min"]), vanish_radius=vr, vanish_tol=vt,
        concentration_threshold=thr,
        cell_mass_ceiling=det.get("cell_mass_ceiling", DEFAULTS["cell_mass_ceiling"]),
        reproducible=sc.get("reproducible", True), seed=sc.get("seed", 0),
        snapshots=snaps, notes=tuple(notes), source=text,
    )


_ALLOWED = {
    "steady": {"lambda", "scale"},
    "scaled_steady": {"lambda", "factor"},
    "gaussian": {"sigma", "m2", "mass"},
    "ramp": {"radius"},
    "custom_samples": {"path"},
    "bumps": {"bumps", "count", "sigma"},
}


def _check_initial(kind, params, p: oracle.GrowthParams, solver) -> List[str]:
    """Validate initial-data parameters and return notes on hypotheses they meet."""
    extra = set(params) - _ALLOWED[kind]
    _require(not extra, f"initial.kind={kind} does not take {sorted(extra)}")
    notes = []
    if "lambda" in params:
        _positive("initial.lambda", params["lambda"])
    if kind == "steady":
        scale = params.get("scale", 1.0)
        _positive("initial.scale", scale)
    elif kind == "scaled_steady":
        _require("factor" in params, "scaled_steady needs initial.factor")
        factor = params["factor"]
        _positive("initial.factor", factor)
        side = oracle.compare_8pi(p.M0)
        if side < 0:
            _require(factor < 1.0,
                     "scaled_steady with M0 < 8pi: the vanishing envelope needs the initial "
                     f"profile strictly below the steady profile (factor < 1), got {factor!r}")
            notes.append("initial profile lies strictly below the steady profile with M0 < 8pi: "
                         "vanishing envelope hypothesis holds")
        elif side > 0:
            _require(factor > 1.0,
                     "scaled_steady with M0 > 8pi: the concentration envelope needs the initial "
                     f"profile strictly above the steady profile (factor > 1), got {factor!r}")
            notes.append("initial profile lies strictly above the steady profile with M0 > 8pi: "
                         "concentration envelope hypothesis holds")
    elif kind == "gaussian":
        _require(("sigma" in params) != ("m2" in params),
                 "gaussian needs exactly one of initial.sigma and initial.m2")
        for key in ("sigma", "m2"):
            if key in params:
                _positive(f"initial.{key}", params[key])
        if "mass" in params:
            _require(abs(params["mass"] - p.m0) <= 1e-12 * p.m0,
                     "initial.mass must equal growth.m0 when given")
    elif kind == "ramp":
        if "radius" in params:
            _positive("initial.radius", params["radius"])
    elif kind == "custom_samples":
        _require(bool(params.get("path")), "custom_samples needs initial.path")
        _require(solver == "radial", "custom_samples is available for the radial solver only")
    elif kind == "bumps":
        _require(solver == "planar", "bumps initial data needs the planar solver")
        _require(("bumps" in params) != ("count" in params),
                 "bumps needs exactly one of initial.bumps and initial.count")
        if "bumps" in params:
            parse_bumps(params["bumps"])
        else:
            _require(params["count"] >= 1, "initial.count must be at least 1")
    return notes


def parse_bumps(text: str) -> List[Tuple[float, float, float, float]]:
    """Parse ``x, y, sigma, weight; ...`` into tuples."""
    out = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        parts = [parse_number(v) for v in chunk.split(",")]
        _require(len(parts) == 4, f"each bump needs x, y, sigma, weight; got {chunk.strip()!r}")
        x, y, s, w = parts
        _require(s > 0 and w > 0, "bump sigma and weight must be positive")
        out.append((x, y, s, w))
    _require(bool(out), "initial.bumps is empty")
    return out
