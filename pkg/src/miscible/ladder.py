"""One-axis-at-a-time sweeps over truncation level, mollification radius and
diffusion, with Cauchy increments and estimate monitors."""

from __future__ import annotations

import csv
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analysis import (CutoffField, EstimateRecord, EstimateReport, estimate_record, expectation,
                       lq_gradient_norm, well_cutoff)
from .pressure import PressureSolveError
from .scenario import (LadderSpec, Scenario, ScenarioError, validate_ladder, validate_scenario,
                       with_overrides)
from .transport import SimulationResult, TransportError, run_simulation

logger = logging.getLogger(__name__)

AXES = ("k", "n", "eps")
CONTRACTION_SLACK = 1.1
UNIFORMITY_RATIO = 2.0


@dataclass(frozen=True)
class LadderPlan:
    """Ladder lists ordered from coarse to fine.

    ``k_list`` increases (``inf`` means no truncation), ``r_list`` and
    ``eps_list`` decrease. The last entry of each list is the finest value.
    """

    base: Scenario
    k_list: tuple[float, ...]
    r_list: tuple[float, ...]
    eps_list: tuple[float, ...]
    q_list: tuple[float, ...] = (1.5, 2.0)
    cutoff_margin: float | None = None
    workers: int = 1

    def __post_init__(self):
        for name in ("k_list", "r_list", "eps_list", "q_list"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        problems = validate_ladder(LadderSpec(self.k_list, self.r_list, self.eps_list,
                                               self.q_list, self.cutoff_margin))
        if self.base.wells.point_source:
            problems.append("ladder: the radius axis needs mollified wells, not point sources")
        if problems:
            raise ScenarioError(problems)

    @classmethod
    def from_scenario(cls, sc: Scenario, workers: int = 1) -> "LadderPlan":
        if sc.ladder is None:
            raise ScenarioError(["ladder: scenario has no [ladder] section"])
        lad = sc.ladder
        return cls(sc, lad.k_list, lad.r_list, lad.eps_list, lad.q_list, lad.cutoff_margin,
                   workers)

    @property
    def finest(self) -> tuple[float, float, float]:
        return (self.k_list[-1], self.r_list[-1], self.eps_list[-1])

    def axis_points(self, axis: str) -> list[tuple[float, float, float]]:
        k, r, e = self.finest
        if axis == "k":
            return [(v, r, e) for v in self.k_list]
        if axis == "n":
            return [(k, v, e) for v in self.r_list]
        if axis == "eps":
            return [(k, r, v) for v in self.eps_list]
        raise ValueError(f"unknown axis {axis!r}")

    def scenario_at(self, point: tuple[float, float, float]) -> Scenario:
        _, r, e = point
        return with_overrides(self.base, fluid={"eps": e},
                              wells={"mollify_radius": r, "point_source": False})

    def margin(self) -> float:
        if self.cutoff_margin is not None:
            return self.cutoff_margin
        d = self.base.domain
        diag = math.hypot(d.Lx / d.nx, d.Ly / d.ny)
        return max(1.25 * max(self.r_list), 2.5 * diag)


def run_point(plan: LadderPlan, point: tuple[float, float, float]) -> SimulationResult:
    k = point[0]
    return run_simulation(plan.scenario_at(point), truncation=None if math.isinf(k) else k)


def _run_safe(plan, point):
    try:
        return run_point(plan, point), None
    except (TransportError, PressureSolveError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------------------
# increments


def c_increment(a: SimulationResult, b: SimulationResult) -> float:
    """Space-time L2 distance between concentration histories."""
    vol = a.grid.volumes
    d = a.c[1:] - b.c[1:]
    return float(np.sqrt(a.dt * np.sum(d * d * vol)))


def grad_p_increment(a: SimulationResult, b: SimulationResult, q: float) -> float:
    """Time-L2 of the spatial L^q norm of the pressure-gradient difference."""
    per_step = [lq_gradient_norm(pa - pb, a.grid, q) for pa, pb in zip(a.p, b.p)]
    return float(np.sqrt(a.dt * np.sum(np.square(per_step))))


def u_increment(a: SimulationResult, b: SimulationResult, theta) -> float:
    d = a.u - b.u
    return float(np.sqrt(a.dt * np.sum(np.sum(d * d, axis=2) * theta * a.grid.volumes)))


def weighted_c_increment(a: SimulationResult, ref: SimulationResult) -> float:
    """``int int (c_a - c_ref)^2 |u_ref|``, with the reference run as the limit."""
    speed = np.hypot(ref.u[..., 0], ref.u[..., 1])
    d = a.c[1:] - ref.c[1:]
    return float(a.dt * np.sum(d * d * speed * a.grid.volumes))


def increments(a: SimulationResult, b: SimulationResult, q_list: Sequence[float],
               theta) -> dict[str, float]:
    out = {"c_L2": c_increment(a, b), "u_theta_L2": u_increment(a, b, theta)}
    for q in q_list:
        out[f"grad_p_L{q:g}"] = grad_p_increment(a, b, q)
    return out


@dataclass
class CauchyRate:
    ratios: list[float]
    contracting: bool


def cauchy_rate(values: Sequence[float], slack: float = CONTRACTION_SLACK) -> CauchyRate:
    """Consecutive ratios of increments; contracting iff every ratio <= slack."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two increments")
    ratios = []
    for prev, cur in zip(v[:-1], v[1:]):
        if prev > 0:
            ratios.append(float(cur / prev))
        else:
            ratios.append(1.0 if cur == 0 else math.inf)
    return CauchyRate(ratios, all(r <= slack for r in ratios))


# ---------------------------------------------------------------------------
# report


@dataclass
class AxisResult:
    axis: str
    points: list[tuple[float, float, float]]
    records: list[EstimateRecord] = field(default_factory=list)
    steps: list[dict[str, float]] = field(default_factory=list)
    to_finest: list[dict[str, float]] = field(default_factory=list)
    weighted: list[float] = field(default_factory=list)
    failure: str | None = None

    @property
    def completed(self) -> int:
        return len(self.records)

    def series(self, metric: str) -> list[float]:
        return [s[metric] for s in self.steps]


@dataclass
class ConvergenceReport:
    plan: LadderPlan = field(repr=False)
    axes: dict[str, AxisResult]
    verdicts: dict[str, str]
    provenance: dict[str, str]
    cutoff: CutoffField = field(repr=False)

    @property
    def ok(self) -> bool:
        return all(a.failure is None for a in self.axes.values())


def _axis_value(axis: str, point) -> float:
    return point[AXES.index(axis)]


def _fold_axis(plan: LadderPlan, axis: str, runs: dict, theta, cutoff) -> AxisResult:
    pts = plan.axis_points(axis)
    res = AxisResult(axis, pts)
    finest = runs.get(pts[-1], (None, "not run"))[0]
    prev = None
    for i, pt in enumerate(pts):
        result, err = runs[pt]
        if result is None:
            res.failure = f"point {i} ({axis}={_axis_value(axis, pt):g}): {err}"
            logger.error("ladder axis %s aborted: %s", axis, res.failure)
            break
        res.records.append(estimate_record(f"{axis}={_axis_value(axis, pt):g}", result,
                                           cutoff, plan.q_list))
        if prev is not None:
            res.steps.append(increments(prev, result, plan.q_list, theta))
        if finest is not None:
            res.to_finest.append(increments(result, finest, plan.q_list, theta))
            res.weighted.append(weighted_c_increment(result, finest))
        prev = result
    return res


def _verdicts(axes: dict[str, AxisResult], plan: LadderPlan) -> dict[str, str]:
    out = {}
    for name, ax in axes.items():
        if ax.failure:
            out[f"{name}: status"] = f"aborted ({ax.failure})"
            continue
        c = ax.series("c_L2")
        if len(c) >= 2:
            rate = cauchy_rate(c)
            ratios = ", ".join(f"{r:.3g}" for r in rate.ratios)
            out[f"{name}: c increments"] = (
                ("contracting" if rate.contracting else "not contracting") + f" (ratios {ratios})")
        elif c:
            out[f"{name}: c increments"] = f"single increment {c[0]:.3e}"
    eps_ax = axes.get("eps")
    if eps_ax is not None and eps_ax.records and eps_ax.failure is None:
        rep = EstimateReport(eps_ax.records, plan.q_list)
        names = ["energy", "bv_mu", "bv_inv_mu", "theta_p_h1"]
        names += [f"grad_p_L{q:g}" for q in plan.q_list if q < 2]
        for m in names:
            r = rep.ratio(m)
            word = "uniform" if r <= UNIFORMITY_RATIO else "not uniform"
            out[f"eps: {m}"] = f"{word} (max/min {r:.3g})"
        for q in plan.q_list:
            if q >= 2:
                out[f"eps: grad_p_L{q:g}"] = (f"divergence expected under refinement "
                                              f"(max/min {rep.ratio(f'grad_p_L{q:g}'):.3g})")
        w = eps_ax.weighted[:-1]
        if len(w) >= 2:
            ok = all(b <= CONTRACTION_SLACK * a for a, b in zip(w[:-1], w[1:]))
            out["eps: weighted c increments"] = "nonincreasing" if ok else "increasing"
    return out


def run_ladder(plan: LadderPlan) -> ConvergenceReport:
    """Run every ladder point (shared points once) and fold the results.

    Points are independent; with ``plan.workers > 1`` they run in a process
    pool, but the report is assembled in ladder order.
    """
    problems = validate_scenario(plan.base)
    if problems:
        raise ScenarioError(problems)
    unique: list[tuple[float, float, float]] = []
    for axis in AXES:
        for pt in plan.axis_points(axis):
            if pt not in unique:
                unique.append(pt)
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            futures = [pool.submit(_run_safe, plan, pt) for pt in unique]
            runs = {pt: fut.result() for pt, fut in zip(unique, futures)}
    else:
        runs = {pt: _run_safe(plan, pt) for pt in unique}

    base = plan.base
    g = base.build_grid()
    cutoff = well_cutoff(g, base.build_rock(g), base.wells.wells, plan.margin())
    axes = {axis: _fold_axis(plan, axis, runs, cutoff.theta, cutoff) for axis in AXES}
    provenance = {
        "config_hash": base.config_hash(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cutoff_margin": f"{plan.margin():.6g}",
    }
    return ConvergenceReport(plan, axes, _verdicts(axes, plan), provenance, cutoff)


# ---------------------------------------------------------------------------
# writers


def report_columns(q_list: Sequence[float]) -> list[str]:
    inc = ["c_L2", "u_theta_L2"] + [f"grad_p_L{q:g}" for q in q_list]
    mon = (["energy"] + [f"grad_p_L{q:g}" for q in q_list]
           + ["theta_p_h1", "bv_mu", "bv_inv_mu", "overshoot", "mass_residual"])
    return (["axis", "index", "k", "r", "eps", "status"]
            + [f"inc_prev_{m}" for m in inc] + [f"inc_finest_{m}" for m in inc]
            + ["weighted_c_finest"] + [f"mon_{m}" for m in mon])


def _fmt(v) -> str:
    return "" if v is None else format(v, ".17g")


def write_report_csv(report: ConvergenceReport, path: str | Path) -> None:
    """One row per ladder point and axis; failed or skipped points have empty values."""
    q_list = report.plan.q_list
    cols = report_columns(q_list)
    inc = ["c_L2", "u_theta_L2"] + [f"grad_p_L{q:g}" for q in q_list]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for axis in AXES:
            ax = report.axes[axis]
            for i, pt in enumerate(ax.points):
                done = i < ax.completed
                status = "ok" if done else ("failed" if i == ax.completed and ax.failure
                                            else "skipped")
                row = [axis, i, _fmt(pt[0]), _fmt(pt[1]), _fmt(pt[2]), status]
                prev = ax.steps[i - 1] if done and i > 0 else None
                fin = ax.to_finest[i] if done and i < len(ax.to_finest) else None
                row += [_fmt(prev[m]) if prev else "" for m in inc]
                row += [_fmt(fin[m]) if fin else "" for m in inc]
                row.append(_fmt(ax.weighted[i]) if done and i < len(ax.weighted) else "")
                if done:
                    vals = ax.records[i].values()
                    row += [_fmt(vals[m[4:]]) for m in cols if m.startswith("mon_")]
                else:
                    row += ["" for m in cols if m.startswith("mon_")]
                wr.writerow(row)


def summary_text(report: ConvergenceReport) -> str:
    lines = ["ladder summary", ""]
    for key, val in report.provenance.items():
        lines.append(f"{key}: {val}")
    lines.append("")
    plan = report.plan
    lines.append("k list: " + ", ".join(f"{v:g}" for v in plan.k_list))
    lines.append("r list: " + ", ".join(f"{v:g}" for v in plan.r_list))
    lines.append("eps list: " + ", ".join(f"{v:g}" for v in plan.eps_list))
    for q in plan.q_list:
        lines.append(f"grad p in L^{q:g}: {expectation(q)}")
    lines.append("")
    for key, val in report.verdicts.items():
        lines.append(f"{key}: {val}")
    return "\n".join(lines) + "\n"


def write_summary(report: ConvergenceReport, path: str | Path) -> None:
    Path(path).write_text(summary_text(report))
