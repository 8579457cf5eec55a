"""Scenario files: TOML grammar, validation against the data hypotheses.

A scenario file has the sections ``[domain]``, ``[rock]`` with one or more
``[[rock.region]]`` tables, ``[fluid]``, ``[wells]`` with ``[[wells.well]]``
tables, ``[init]``, ``[numerics]``, ``[output]`` and an optional ``[ladder]``.
Unknown keys and sections are errors. See ``README.md`` for every key.

Validation messages are prefixed with the label of the hypothesis they break,
e.g. ``hyp:compatibility: imbalance 0.1 from t=0``.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import tomli
import tomli_w

from .coefficients import FluidModel, Region, RockModel, check_viscosity_hypotheses
from .grid import Grid, build_grid
from .transport import CROSS_MODES
from .wells import INJECTOR, PRODUCER, MollifiedSources, Well, WellSet, build_sources, validate_wells


class ScenarioError(ValueError):
    """Raised with every parse or validation problem found in a scenario."""

    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class Domain:
    Lx: float = 1.0
    Ly: float = 1.0
    nx: int = 32
    ny: int = 32
    T: float = 0.1
    nt: int = 100


@dataclass(frozen=True)
class RockSpec:
    phi_star: float
    k_star: float
    regions: tuple[Region, ...]


@dataclass(frozen=True)
class WellsSpec:
    wells: tuple[Well, ...]
    mollify_radius: float | None = None
    point_source: bool = False

    @property
    def radius(self) -> float | None:
        return None if self.point_source else self.mollify_radius


@dataclass(frozen=True)
class Numerics:
    pressure_tol: float = 1e-10
    transport_tol: float = 1e-10
    cfl_safety: float = 0.5
    pressure_maxiter: int | None = None
    jacobi: bool = False
    cross_dispersion: str = "limited"


@dataclass(frozen=True)
class Output:
    directory: str = "output"
    snapshot_every: int = 0
    pgm: bool = False


@dataclass(frozen=True)
class LadderSpec:
    k_list: tuple[float, ...] = ()
    r_list: tuple[float, ...] = ()
    eps_list: tuple[float, ...] = ()
    q_list: tuple[float, ...] = (1.5, 2.0)
    cutoff_margin: float | None = None


@dataclass(frozen=True)
class Scenario:
    domain: Domain
    rock: RockSpec
    fluid: FluidModel
    wells: WellsSpec
    c0: float | tuple[float, ...] = 0.0
    numerics: Numerics = field(default_factory=Numerics)
    output: Output = field(default_factory=Output)
    ladder: LadderSpec | None = None

    def build_grid(self) -> Grid:
        d = self.domain
        return build_grid(d.nx, d.ny, d.Lx, d.Ly)

    def build_rock(self, g: Grid) -> RockModel:
        return RockModel.from_regions(g, self.rock.regions, self.rock.phi_star, self.rock.k_star)

    def wellset(self) -> WellSet:
        return WellSet(self.wells.wells)

    def build_sources(self, g: Grid, radius: float | None | str = "scenario",
                      n: int | None = None) -> MollifiedSources:
        r = self.wells.radius if radius == "scenario" else radius
        return build_sources(self.wellset(), g, r, n)

    def initial_concentration(self, g: Grid) -> np.ndarray:
        if isinstance(self.c0, tuple):
            owner = self.build_rock(g).region_of_cell
            return np.asarray(self.c0, dtype=float)[owner]
        return np.full(g.ncells, float(self.c0))

    def to_dict(self) -> dict[str, Any]:
        d = self.domain
        out: dict[str, Any] = {
            "domain": {"Lx": d.Lx, "Ly": d.Ly, "nx": d.nx, "ny": d.ny, "T": d.T, "nt": d.nt},
            "rock": {
                "phi_star": self.rock.phi_star,
                "k_star": self.rock.k_star,
                "region": [
                    {"x0": r.x0, "x1": r.x1, "y0": r.y0, "y1": r.y1,
                     "phi": r.phi, "kx": r.kx, "ky": r.ky}
                    for r in self.rock.regions
                ],
            },
            "fluid": {"mu0": self.fluid.mu0, "M": self.fluid.M, "dl": self.fluid.d_l,
                      "dt_disp": self.fluid.d_t, "eps": self.fluid.eps},
            "wells": {},
            "init": {"c0": list(self.c0) if isinstance(self.c0, tuple) else self.c0},
            "numerics": {
                "pressure_tol": self.numerics.pressure_tol,
                "transport_tol": self.numerics.transport_tol,
                "cfl_safety": self.numerics.cfl_safety,
                "jacobi": self.numerics.jacobi,
                "cross_dispersion": self.numerics.cross_dispersion,
            },
            "output": {"directory": self.output.directory,
                       "snapshot_every": self.output.snapshot_every,
                       "pgm": self.output.pgm},
        }
        if self.numerics.pressure_maxiter is not None:
            out["numerics"]["pressure_maxiter"] = self.numerics.pressure_maxiter
        wells = out["wells"]
        if self.wells.point_source:
            wells["point_source"] = True
        if self.wells.mollify_radius is not None:
            wells["mollify_radius"] = self.wells.mollify_radius
        wells["well"] = [
            {"x": w.x, "y": w.y, "kind": w.kind, "rate": w.rate, "chat": w.chat,
             "schedule": [list(s) for s in w.schedule]}
            for w in self.wells.wells
        ]
        if self.ladder is not None:
            lad = self.ladder
            out["ladder"] = {"k_list": list(lad.k_list), "r_list": list(lad.r_list),
                             "eps_list": list(lad.eps_list), "q_list": list(lad.q_list)}
            if lad.cutoff_margin is not None:
                out["ladder"]["cutoff_margin"] = lad.cutoff_margin
        return out

    def serialize(self) -> str:
        """Canonical TOML text; parsing it back gives an equal scenario."""
        return tomli_w.dumps(self.to_dict())

    def config_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# parsing

_SCHEMA: dict[str, dict[str, tuple]] = {
    "domain": {"Lx": (float,), "Ly": (float,), "nx": (int,), "ny": (int,),
               "T": (float,), "nt": (int,)},
    "rock": {"phi_star": (float,), "k_star": (float,), "region": (list,)},
    "rock.region": {"x0": (float,), "x1": (float,), "y0": (float,), "y1": (float,),
                    "phi": (float,), "kx": (float,), "ky": (float,)},
    "fluid": {"mu0": (float,), "M": (float,), "dl": (float,), "dt_disp": (float,),
              "eps": (float,)},
    "wells": {"mollify_radius": (float,), "point_source": (bool,), "well": (list,)},
    "wells.well": {"x": (float,), "y": (float,), "kind": (str,), "rate": (float,),
                   "chat": (float,), "schedule": (list,)},
    "init": {"c0": (float, list)},
    "numerics": {"pressure_tol": (float,), "transport_tol": (float,), "cfl_safety": (float,),
                 "pressure_maxiter": (int,), "jacobi": (bool,), "cross_dispersion": (str,)},
    "output": {"directory": (str,), "snapshot_every": (int,), "pgm": (bool,)},
    "ladder": {"k_list": (list,), "r_list": (list,), "eps_list": (list,), "q_list": (list,),
               "cutoff_margin": (float,)},
}

_REQUIRED = {
    "domain": ("Lx", "Ly", "nx", "ny", "T", "nt"),
    "rock": ("phi_star", "k_star", "region"),
    "rock.region": ("x0", "x1", "y0", "y1", "phi", "kx", "ky"),
    "fluid": ("mu0", "M", "dl", "dt_disp", "eps"),
    "wells": ("well",),
    "wells.well": ("x", "y", "kind", "rate"),
    "init": ("c0",),
}


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*\[*\s*{re.escape(key)}\b")
    for n, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return n
    return None


def _where(text: str, key: str) -> str:
    n = _line_of(text, key)
    return f"line {n}: " if n is not None else ""


def _check_types(section: str, table: dict, text: str, errors: list[str]) -> None:
    schema = _SCHEMA[section]
    for key, value in table.items():
        if key not in schema:
            errors.append(f"parse: {_where(text, key)}unknown key '{key}' in [{section}]")
            continue
        allowed = schema[key]
        ok = False
        for typ in allowed:
            if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
                ok = True
            elif typ is int and isinstance(value, int) and not isinstance(value, bool):
                ok = True
            elif typ in (bool, str, list) and isinstance(value, typ):
                ok = True
        if not ok:
            names = " or ".join(t.__name__ for t in allowed)
            errors.append(f"parse: {_where(text, key)}[{section}] {key} must be {names}, "
                          f"got {type(value).__name__}")
    for key in _REQUIRED.get(section, ()):
        if key not in table:
            errors.append(f"parse: missing key '{key}' in [{section}]")


def parse_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ScenarioError([f"parse: cannot read {path}: {exc}"]) from exc
    return parse_scenario_text(text)


def parse_scenario_text(text: str) -> Scenario:
    """Parse and validate scenario text; raises :class:`ScenarioError`."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError([f"parse: {exc}"]) from exc

    errors: list[str] = []
    for section in raw:
        if section not in ("domain", "rock", "fluid", "wells", "init", "numerics", "output",
                           "ladder"):
            errors.append(f"parse: {_where(text, section)}unknown section [{section}]")
    for section in ("domain", "rock", "fluid", "wells", "init"):
        if section not in raw:
            errors.append(f"parse: missing section [{section}]")
    for section in ("domain", "rock", "fluid", "wells", "init", "numerics", "output", "ladder"):
        if section in raw:
            if not isinstance(raw[section], dict):
                errors.append(f"parse: [{section}] must be a table")
                continue
            _check_types(section, raw[section], text, errors)
    for sub, parent, key in (("rock.region", "rock", "region"), ("wells.well", "wells", "well")):
        items = raw.get(parent, {}).get(key, []) if isinstance(raw.get(parent), dict) else []
        if not isinstance(items, list):
            continue
        for item in items:
            if not isinstance(item, dict):
                errors.append(f"parse: [[{sub}]] entries must be tables")
                continue
            _check_types(sub, item, text, errors)
    if errors:
        raise ScenarioError(errors)

    sc = _build(raw, errors)
    if errors:
        raise ScenarioError(errors)
    problems = validate_scenario(sc)
    if problems:
        raise ScenarioError(problems)
    return sc


def _num_list(values, name: str, errors: list[str]) -> tuple[float, ...]:
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            errors.append(f"parse: {name} entries must be numbers")
            return ()
        out.append(float(v))
    return tuple(out)


def _build(raw: dict, errors: list[str]) -> Scenario | None:
    d = raw["domain"]
    domain = Domain(float(d["Lx"]), float(d["Ly"]), int(d["nx"]), int(d["ny"]),
                    float(d["T"]), int(d["nt"]))
    r = raw["rock"]
    regions = tuple(
        Region(float(g["x0"]), float(g["x1"]), float(g["y0"]), float(g["y1"]),
               float(g["phi"]), float(g["kx"]), float(g["ky"]))
        for g in r["region"]
    )
    rock = RockSpec(float(r["phi_star"]), float(r["k_star"]), regions)

    fl = raw["fluid"]
    # out-of-range values are reported by validate_scenario; keep the model constructible
    fluid = object.__new__(FluidModel)
    for name, key in (("mu0", "mu0"), ("M", "M"), ("d_l", "dl"), ("d_t", "dt_disp"),
                      ("eps", "eps")):
        object.__setattr__(fluid, name, float(fl[key]))

    w = raw["wells"]
    wells = []
    for n, item in enumerate(w["well"]):
        kind = item["kind"]
        if kind not in (INJECTOR, PRODUCER):
            errors.append(f"parse: well {n} kind must be '{INJECTOR}' or '{PRODUCER}'")
            continue
        sched_raw = item.get("schedule", [[0.0, 1.0]])
        schedule = []
        for pair in sched_raw:
            if (not isinstance(pair, list) or len(pair) != 2
                    or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in pair)):
                errors.append(f"parse: well {n} schedule entries must be [start, multiplier]")
                break
            schedule.append((float(pair[0]), float(pair[1])))
        wells.append(Well(float(item["x"]), float(item["y"]), kind, float(item["rate"]),
                          float(item.get("chat", 1.0)), tuple(schedule)))
    radius = w.get("mollify_radius")
    wells_spec = WellsSpec(tuple(wells), None if radius is None else float(radius),
                           bool(w.get("point_source", False)))

    c0_raw = raw["init"]["c0"]
    c0: float | tuple[float, ...]
    if isinstance(c0_raw, list):
        c0 = _num_list(c0_raw, "init.c0", errors)
    else:
        c0 = float(c0_raw)

    nm = raw.get("numerics", {})
    numerics = Numerics(
        float(nm.get("pressure_tol", Numerics.pressure_tol)),
        float(nm.get("transport_tol", Numerics.transport_tol)),
        float(nm.get("cfl_safety", Numerics.cfl_safety)),
        int(nm["pressure_maxiter"]) if "pressure_maxiter" in nm else None,
        bool(nm.get("jacobi", False)),
        str(nm.get("cross_dispersion", "limited")),
    )
    out = raw.get("output", {})
    output = Output(str(out.get("directory", Output.directory)),
                    int(out.get("snapshot_every", 0)), bool(out.get("pgm", False)))
    ladder = None
    if "ladder" in raw:
        lad = raw["ladder"]
        ladder = LadderSpec(
            _num_list(lad.get("k_list", []), "ladder.k_list", errors),
            _num_list(lad.get("r_list", []), "ladder.r_list", errors),
            _num_list(lad.get("eps_list", []), "ladder.eps_list", errors),
            _num_list(lad.get("q_list", [1.5, 2.0]), "ladder.q_list", errors),
            float(lad["cutoff_margin"]) if "cutoff_margin" in lad else None,
        )
    return Scenario(domain, rock, fluid, wells_spec, c0, numerics, output, ladder)


def _overlap(a: Region, b: Region) -> float:
    w = min(a.x1, b.x1) - max(a.x0, b.x0)
    h = min(a.y1, b.y1) - max(a.y0, b.y0)
    return max(w, 0.0) * max(h, 0.0)


def validate_scenario(sc: Scenario) -> list[str]:
    """Every hypothesis violation in ``sc``, each prefixed by its label."""
    errors: list[str] = []
    d = sc.domain
    if not (d.Lx > 0 and d.Ly > 0 and math.isfinite(d.Lx) and math.isfinite(d.Ly)):
        errors.append("hyp:domain: domain lengths must be positive")
    if d.nx < 1 or d.ny < 1:
        errors.append("hyp:domain: nx, ny >= 1 violated")
    if not d.T > 0:
        errors.append("hyp:domain: final time T > 0 violated")
    if d.nt < 1:
        errors.append("hyp:domain: nt >= 1 violated")

    rk = sc.rock
    if not rk.regions:
        errors.append("hyp:domain: at least one rock region is required")
    for n, r in enumerate(rk.regions):
        if not (r.x0 < r.x1 and r.y0 < r.y1):
            errors.append(f"hyp:domain: region {n} is empty or inverted")
        if r.x0 < 0 or r.y0 < 0 or r.x1 > d.Lx or r.y1 > d.Ly:
            errors.append(f"hyp:domain: region {n} extends outside the domain")
    for a in range(len(rk.regions)):
        for b in range(a + 1, len(rk.regions)):
            if _overlap(rk.regions[a], rk.regions[b]) > 1e-12 * d.Lx * d.Ly:
                errors.append(f"hyp:domain: regions {a} and {b} overlap")
    covered = sum(r.area for r in rk.regions)
    if rk.regions and abs(covered - d.Lx * d.Ly) > 1e-9 * d.Lx * d.Ly:
        errors.append(f"hyp:domain: regions cover area {covered:g}, domain area is "
                      f"{d.Lx * d.Ly:g}")

    if not 0 < rk.phi_star <= 1:
        errors.append("hyp:porosity: phi_star must lie in (0, 1]")
    else:
        for n, r in enumerate(rk.regions):
            if not r.phi >= rk.phi_star:
                errors.append(f"hyp:porosity: lower bound phi_* <= phi violated in region {n} "
                              f"(phi={r.phi:g}, phi_*={rk.phi_star:g})")
            if not r.phi <= 1.0 / rk.phi_star:
                errors.append(f"hyp:porosity: upper bound phi <= 1/phi_* violated in region {n}")
    if not 0 < rk.k_star <= 1:
        errors.append("hyp:K: k_star must lie in (0, 1]")
    else:
        for n, r in enumerate(rk.regions):
            for name, k in (("kx", r.kx), ("ky", r.ky)):
                if not (rk.k_star <= k <= 1.0 / rk.k_star):
                    errors.append(f"hyp:K: {name}={k:g} in region {n} outside "
                                  f"[k_*, 1/k_*] = [{rk.k_star:g}, {1 / rk.k_star:g}]")

    f = sc.fluid
    if not (f.mu0 > 0 and f.M >= 1):
        errors.append(f"hyp:viscosity: need mu0 > 0 and M >= 1 (got mu0={f.mu0:g}, M={f.M:g})")
    else:
        report = check_viscosity_hypotheses(f, 10_000)
        if not report.passed:
            tag = "degenerate, " if report.degenerate else ""
            errors.append(f"hyp:viscosity: {tag}mu'' > 0 and (1/mu)'' > 0 violated "
                          f"({'; '.join(report.witnesses)})")
    if not (f.d_l > 0 and f.d_t > 0):
        errors.append("hyp:mdt: dispersivities dl, dt_disp must be positive")
    if not f.eps >= 0:
        errors.append("hyp:mdt: molecular diffusion eps must be nonnegative")

    c0 = sc.c0 if isinstance(sc.c0, tuple) else (sc.c0,)
    if isinstance(sc.c0, tuple) and len(sc.c0) != len(rk.regions):
        errors.append("hyp:initialconc: per-region c0 needs one value per region")
    if any(not 0 <= v <= 1 for v in c0):
        errors.append("hyp:initialconc: 0 <= c_0 <= 1 violated")

    ws = sc.wells
    errors.extend(validate_wells(WellSet(ws.wells), (d.Lx, d.Ly)))
    if ws.point_source and ws.mollify_radius is not None:
        errors.append("hyp:source: give either mollify_radius or point_source, not both")
    if not ws.point_source:
        r = ws.mollify_radius
        if r is None:
            errors.append("hyp:source: wells need mollify_radius or point_source = true")
        elif not r > 0:
            errors.append("hyp:source: mollify_radius must be positive")
        else:
            for n, w in enumerate(ws.wells):
                if w.x - r < 0 or w.x + r > d.Lx or w.y - r < 0 or w.y + r > d.Ly:
                    errors.append(f"hyp:source: mollification ball of well {n} leaves the domain")

    nm = sc.numerics
    if not nm.pressure_tol > 0 or not nm.transport_tol > 0:
        errors.append("numerics: solver tolerances must be positive")
    if not 0 < nm.cfl_safety <= 1:
        errors.append("numerics: cfl_safety must lie in (0, 1]")
    if nm.pressure_maxiter is not None and nm.pressure_maxiter < 1:
        errors.append("numerics: pressure_maxiter must be positive")
    if nm.cross_dispersion not in CROSS_MODES:
        errors.append(f"numerics: cross_dispersion must be one of {', '.join(CROSS_MODES)}")
    if sc.output.snapshot_every < 0:
        errors.append("output: snapshot_every must be nonnegative")

    if sc.ladder is not None:
        errors.extend(validate_ladder(sc.ladder))
    return errors


def validate_ladder(lad: LadderSpec) -> list[str]:
    errors = []
    for name, sign, word in (("k_list", 1, "increasing"), ("r_list", -1, "decreasing"),
                             ("eps_list", -1, "decreasing")):
        values = np.asarray(getattr(lad, name), dtype=float)
        if values.size == 0:
            errors.append(f"ladder: {name} must be nonempty")
        elif np.any(~(values > 0)):
            errors.append(f"ladder: {name} entries must be positive")
        elif not np.all(sign * np.diff(values) > 0):
            errors.append(f"ladder: {name} must be strictly {word}")
    if any(np.isinf(lad.r_list)) or any(np.isinf(lad.eps_list)):
        errors.append("ladder: r_list and eps_list entries must be finite")
    if not lad.q_list or any(not q >= 1 for q in lad.q_list):
        errors.append("ladder: q_list must be nonempty with entries >= 1")
    if lad.cutoff_margin is not None and not lad.cutoff_margin > 0:
        errors.append("ladder: cutoff_margin must be positive")
    return errors


def with_overrides(sc: Scenario, **sections) -> Scenario:
    """Copy of ``sc`` with fields of its sections replaced.

    ``with_overrides(sc, fluid={"eps": 1e-3}, wells={"mollify_radius": 0.02})``
    """
    out = sc
    for name, changes in sections.items():
        current = getattr(out, name)
        valid = {f.name for f in fields(current)}
        unknown = set(changes) - valid
        if unknown:
            raise KeyError(f"unknown {name} fields: {sorted(unknown)}")
        out = replace(out, **{name: replace(current, **changes)})
    return out
