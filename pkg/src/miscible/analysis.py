"""Diagnostics: norms, estimate monitors, cutoffs, masked gradients and
weak-convergence product testers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coefficients import FluidModel, RockModel, dispersion_tensor, koval_viscosity, truncate_velocity
from .grid import Grid, cell_gradient

# ---------------------------------------------------------------------------
# cutoff


def smoothstep5(s):
    """Quintic ramp: 0 for s <= 0, 1 for s >= 1, C2 in between."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def _box_distance(g: Grid, box) -> np.ndarray:
    """Distance from each closed cell rectangle to an axis-aligned box."""
    bx0, by0, bx1, by1 = box
    cx, cy = g.centers[:, 0], g.centers[:, 1]
    x0, x1 = cx - 0.5 * g.dx, cx + 0.5 * g.dx
    y0, y1 = cy - 0.5 * g.dy, cy + 0.5 * g.dy
    gx = np.maximum(0.0, np.maximum(bx0 - x1, x0 - bx1))
    gy = np.maximum(0.0, np.maximum(by0 - y1, y0 - by1))
    return np.hypot(gx, gy)


def _as_box(item) -> tuple[float, float, float, float]:
    if len(item) == 2:
        x, y = map(float, item)
        return (x, y, x, y)
    if len(item) == 4:
        xa, ya, xb, yb = map(float, item)
        if xa != xb and ya != yb:
            raise ValueError(f"excluded segment {item} is not axis-aligned")
        return (min(xa, xb), min(ya, yb), max(xa, xb), max(ya, yb))
    raise ValueError(f"excluded item must be a point (x, y) or a segment (xa, ya, xb, yb): {item}")


@dataclass(frozen=True)
class CutoffField:
    """Smooth cutoff vanishing near wells, rock-region edges and the boundary.

    Distances are measured from the closed cell rectangle, so ``theta`` is zero
    on every cell that comes within ``margin`` of the excluded set and one on
    cells at least ``2 * margin`` away.
    """

    grid: Grid = field(repr=False)
    theta: np.ndarray = field(repr=False)
    excluded: tuple = ()
    margin: float = 0.0

    def gradient(self) -> np.ndarray:
        return cell_gradient(self.grid, self.theta)

    def max_gradient(self) -> float:
        gr = self.gradient()
        return float(np.max(np.hypot(gr[:, 0], gr[:, 1])))


def build_cutoff(g: Grid, excluded: Sequence, margin: float) -> CutoffField:
    """Cutoff built as a product of quintic ramps, one per excluded item.

    ``excluded`` holds points ``(x, y)`` and axis-aligned segments
    ``(xa, ya, xb, yb)``; the four domain edges are always added.
    """
    diag = math.hypot(g.dx, g.dy)
    if not margin > 2.0 * diag:
        raise ValueError(f"cutoff margin {margin:g} must exceed two cell diagonals ({2 * diag:g})")
    items = [_as_box(e) for e in excluded]
    edges = [(0.0, 0.0, g.Lx, 0.0), (0.0, g.Ly, g.Lx, g.Ly),
             (0.0, 0.0, 0.0, g.Ly), (g.Lx, 0.0, g.Lx, g.Ly)]
    theta = np.ones(g.ncells)
    for box in items + [_as_box(e) for e in edges]:
        d = _box_distance(g, box)
        theta *= smoothstep5((d - margin) / margin)
    theta.setflags(write=False)
    return CutoffField(g, theta, tuple(tuple(e) for e in excluded), margin)


def well_cutoff(g: Grid, rock: RockModel, wells, margin: float) -> CutoffField:
    """Cutoff excluding every well location and every interior region edge."""
    pts = [(w.x, w.y) for w in wells]
    return build_cutoff(g, pts + list(rock.discontinuity_segments()), margin)


# ---------------------------------------------------------------------------
# norms and monitors


def _weights(weight, n):
    if weight is None:
        return np.ones(n)
    if isinstance(weight, CutoffField):
        return weight.theta
    return np.asarray(weight, dtype=float)


def lq_gradient_norm(values, g: Grid, q: float, weight=None) -> float:
    """``(sum |grad f|^q w vol)^(1/q)`` with least-squares cell gradients."""
    if not q >= 1:
        raise ValueError(f"exponent q must be >= 1, got {q}")
    gr = cell_gradient(g, values)
    mag = np.hypot(gr[:, 0], gr[:, 1])
    w = _weights(weight, g.ncells)
    return float(np.sum(mag ** q * w * g.volumes) ** (1.0 / q))


def h1_norm(values, g: Grid) -> float:
    v = np.asarray(values, dtype=float)
    gr = cell_gradient(g, v)
    return float(np.sqrt(np.sum((v * v + gr[:, 0] ** 2 + gr[:, 1] ** 2) * g.volumes)))


def localized_h1_norm(p_hist, g: Grid, cutoff: CutoffField) -> float:
    """``max_t ||theta p(t)||_H1``."""
    return max(h1_norm(cutoff.theta * p, g) for p in np.atleast_2d(p_hist))


def energy_functional(c_hist, u_hist, g: Grid, rock: RockModel, f: FluidModel, dt: float,
                      truncation: float | None = None) -> float:
    """``sum_m dt sum_cells D(u^m) grad c^{m+1} . grad c^{m+1} vol``.

    ``c_hist`` has one more entry than ``u_hist`` (the initial state); a
    history of equal length is taken as already aligned.
    """
    c_hist = np.atleast_2d(c_hist)
    u_hist = np.asarray(u_hist, dtype=float)
    if u_hist.ndim == 2:
        u_hist = u_hist[None]
    if len(c_hist) == len(u_hist) + 1:
        c_hist = c_hist[1:]
    if len(c_hist) != len(u_hist):
        raise ValueError("concentration and velocity histories are not aligned")
    total = 0.0
    for c, u in zip(c_hist, u_hist):
        if truncation is not None:
            u = truncate_velocity(u, truncation)
        D = dispersion_tensor(rock.phi, u, f)
        total += dt * float(np.sum(D.quad(cell_gradient(g, c)) * g.volumes))
    return total


def bv_time_seminorm(series) -> float:
    """Total variation ``sum |F(t_{m+1}) - F(t_m)|``."""
    s = np.asarray(series, dtype=float)
    if s.size < 2:
        raise ValueError("total variation needs at least two samples")
    return float(np.sum(np.abs(np.diff(s))))


def viscosity_average_series(c_hist, g: Grid, rock: RockModel, f: FluidModel, psi
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Series ``sum phi mu(c) psi vol`` and ``sum (phi / mu(c)) psi vol``."""
    c_hist = np.atleast_2d(c_hist)
    w = rock.phi * np.asarray(psi, dtype=float) * g.volumes
    mu = koval_viscosity(c_hist, f)
    return (mu * w).sum(axis=1), (w / mu).sum(axis=1)


# ---------------------------------------------------------------------------
# thresholds and masked gradients


def select_thresholds(speed, count: int) -> list[float]:
    """Halving thresholds starting at the median speed, moved off attained values.

    A candidate equal to some discrete speed is nudged upward by one ulp of the
    maximum speed until it no longer is, so every level set ``{|u| = eta}`` is
    empty on the grid.
    """
    if count < 1:
        raise ValueError("need at least one threshold")
    s = np.abs(np.asarray(speed, dtype=float)).ravel()
    smax = float(s.max()) if s.size else 0.0
    if not smax > 0:
        raise ValueError("stagnant field, no thresholds")
    eta0 = float(np.median(s))
    if eta0 == 0.0:
        eta0 = float(np.median(s[s > 0]))
    attained = np.unique(s)
    step = float(np.spacing(smax))
    out = []
    for i in range(count):
        eta = eta0 * 2.0 ** (-i)
        k = np.searchsorted(attained, eta)
        while k < attained.size and attained[k] == eta:
            eta += step
            k = np.searchsorted(attained, eta)
        out.append(eta)
    return out


def masked_gradient(c, speed, eta: float, g: Grid) -> np.ndarray:
    """Cell gradient of ``c`` where ``speed > eta``, exactly zero elsewhere."""
    gr = cell_gradient(g, c)
    mask = np.asarray(speed) > eta
    gr[~mask] = 0.0
    return gr


# ---------------------------------------------------------------------------
# weak-convergence product testers


@dataclass(frozen=True)
class SpaceTimeSequence:
    """Space-time fields indexed by a parameter, on one grid and time axis.

    ``fields[i]`` has shape ``(len(times), ncells)``.
    """

    grid: Grid = field(repr=False)
    times: np.ndarray = field(repr=False)
    labels: tuple[float, ...]
    fields: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "labels", tuple(self.labels))
        arrays = tuple(np.asarray(a, dtype=float) for a in self.fields)
        object.__setattr__(self, "fields", arrays)
        if len(arrays) != len(self.labels):
            raise ValueError("one field per label is required")
        shape = (times.size, self.grid.ncells)
        for lab, a in zip(self.labels, arrays):
            if a.shape != shape:
                raise ValueError(f"member {lab} has shape {a.shape}, expected {shape}")

    def __len__(self) -> int:
        return len(self.labels)

    def aligned_with(self, other: "SpaceTimeSequence") -> bool:
        return (self.grid.ncells == other.grid.ncells
                and self.grid.nx == other.grid.nx and self.grid.ny == other.grid.ny
                and self.times.shape == other.times.shape
                and bool(np.all(self.times == other.times))
                and self.labels == other.labels)


def _time_weights(times: np.ndarray) -> np.ndarray:
    if times.size < 2:
        return np.ones_like(times)
    w = np.zeros_like(times)
    h = np.diff(times)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def space_time_integral(values, times, g: Grid) -> float:
    """Trapezoid rule in time, midpoint rule in space."""
    return float(_time_weights(np.asarray(times)) @ (np.asarray(values) @ g.volumes))


def cesaro_limit(values, times) -> np.ndarray:
    """Time average of a space-time field, repeated at every time."""
    w = _time_weights(np.asarray(times))
    mean = (w @ values) / w.sum()
    return np.broadcast_to(mean, np.shape(values))


def default_test_bank(g: Grid) -> list[np.ndarray]:
    x = g.centers[:, 0] / g.Lx
    y = g.centers[:, 1] / g.Ly
    return [np.ones(g.ncells),
            np.sin(np.pi * x) * np.sin(np.pi * y),
            np.cos(np.pi * x),
            np.cos(np.pi * y)]


def _limits(seq: SpaceTimeSequence, limit):
    if limit is None:
        return [cesaro_limit(a, seq.times) for a in seq.fields]
    limit = np.asarray(limit, dtype=float)
    if limit.shape != seq.fields[0].shape:
        raise ValueError(f"limit has shape {limit.shape}, expected {seq.fields[0].shape}")
    return [limit] * len(seq)


@dataclass
class ProductReport:
    labels: tuple[float, ...]
    gaps: np.ndarray
    bv: np.ndarray
    bv_bounded: bool
    gap_vanishing: bool
    gap_stagnant: bool
    verdict: str

    def lines(self) -> list[str]:
        out = [f"label={lab:<10.4g} gap={g:.6e} bv={b:.6e}"
               for lab, g, b in zip(self.labels, self.gaps, self.bv)]
        out.append(f"verdict: {self.verdict}")
        return out


def _decreasing(x: np.ndarray) -> bool:
    return bool(np.all(np.diff(x) <= 0))


def cc_product_test(alpha: SpaceTimeSequence, beta: SpaceTimeSequence, phi,
                    alpha_limit=None, beta_limit=None,
                    bank: Sequence[np.ndarray] | None = None) -> ProductReport:
    """Check whether ``alpha_eps beta_eps`` tends weakly to ``alpha beta``.

    ``phi`` is a space-time test field; members are ordered from the largest
    to the smallest parameter. Missing limits are estimated by time averages.
    ``B(eps)`` is the largest total variation in time of ``int beta_eps psi``
    over the test bank.

    Verdicts: ``theorem-consistent`` (B bounded, gap decreasing to at most a
    tenth of its first value), ``counterexample-behavior`` (B grows and the gap
    stays above half its first value), ``hypothesis-violated`` (B grows
    otherwise) and ``inconclusive``.
    """
    if not alpha.aligned_with(beta):
        raise ValueError("sequences are not aligned (grid, times and labels must match)")
    g, times = alpha.grid, alpha.times
    phi = np.broadcast_to(np.asarray(phi, dtype=float), alpha.fields[0].shape)
    bank = default_test_bank(g) if bank is None else [np.asarray(b, dtype=float) for b in bank]
    a_lim = _limits(alpha, alpha_limit)
    b_lim = _limits(beta, beta_limit)
    gaps, bvs = [], []
    for a, b, al, bl in zip(alpha.fields, beta.fields, a_lim, b_lim):
        gaps.append(abs(space_time_integral(a * b * phi, times, g)
                        - space_time_integral(al * bl * phi, times, g)))
        bvs.append(max(bv_time_seminorm(b @ (psi * g.volumes)) for psi in bank))
    gaps, bvs = np.array(gaps), np.array(bvs)
    grows = bool(bvs[-1] > 2.0 * bvs[0] + 1e-9 * bvs.max())
    vanishing = _decreasing(gaps) and gaps[-1] <= 0.1 * gaps[0]
    stagnant = bool(gaps[-1] >= 0.5 * gaps[0] and gaps[-1] > 0)
    if not grows and vanishing:
        verdict = "theorem-consistent"
    elif grows and stagnant:
        verdict = "counterexample-behavior"
    elif grows:
        verdict = "hypothesis-violated"
    else:
        verdict = "inconclusive"
    return ProductReport(alpha.labels, gaps, bvs, not grows, vanishing, stagnant, verdict)


def weak_strong_product_check(w: SpaceTimeSequence, v: SpaceTimeSequence, w_limit, v_limit,
                              phi, bank: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Largest ``|int int (w_eps v_eps - w v) phi psi|`` over the bank, per label.

    The bank defaults to the single function one.
    """
    if not w.aligned_with(v):
        raise ValueError("sequences are not aligned (grid, times and labels must match)")
    g, times = w.grid, w.times
    phi = np.broadcast_to(np.asarray(phi, dtype=float), w.fields[0].shape)
    bank = [np.ones(g.ncells)] if bank is None else [np.asarray(b, dtype=float) for b in bank]
    wl = _limits(w, w_limit)
    vl = _limits(v, v_limit)
    out = []
    for a, b, al, bl in zip(w.fields, v.fields, wl, vl):
        diff = (a * b - al * bl) * phi
        out.append(max(abs(space_time_integral(diff * psi, times, g)) for psi in bank))
    return np.array(out)


# ---------------------------------------------------------------------------
# estimate report


def expectation(q: float, dim: int = 2) -> str:
    """Behaviour expected of the pressure-gradient L^q norm under refinement."""
    return "uniform expected" if q < dim / (dim - 1) else "divergence expected"


@dataclass(frozen=True)
class EstimateRecord:
    label: str
    energy: float
    grad_p: dict[float, float]
    theta_p_h1: float
    bv_mu: float
    bv_inv_mu: float
    overshoot: float
    mass_residual: float

    def values(self) -> dict[str, float]:
        out = {"energy": self.energy, "theta_p_h1": self.theta_p_h1, "bv_mu": self.bv_mu,
               "bv_inv_mu": self.bv_inv_mu, "overshoot": self.overshoot,
               "mass_residual": self.mass_residual}
        for q, v in self.grad_p.items():
            out[f"grad_p_L{q:g}"] = v
        return out


@dataclass
class EstimateReport:
    records: list[EstimateRecord]
    q_list: tuple[float, ...]

    def __post_init__(self):
        for r in self.records:
            bad = [k for k, v in r.values().items() if not math.isfinite(v)]
            if bad:
                raise ValueError(f"non-finite monitors {bad} at {r.label}")

    def flags(self) -> dict[float, str]:
        return {q: expectation(q) for q in self.q_list}

    def series(self, name: str) -> np.ndarray:
        return np.array([r.values()[name] for r in self.records])

    def ratio(self, name: str) -> float:
        """max / min of a monitor across records (inf if the min is zero)."""
        s = self.series(name)
        lo = float(s.min())
        return float(s.max()) / lo if lo > 0 else math.inf


def estimate_record(label: str, result, cutoff: CutoffField, q_list: Sequence[float]
                    ) -> EstimateRecord:
    """All monitors for one simulation result."""
    g, rock, f = result.grid, result.rock, result.fluid
    energy = float(np.sum(result.series["energy_increment"]))
    grad_p = {float(q): max(lq_gradient_norm(p, g, q) for p in result.p) for q in q_list}
    mu_s, inv_s = viscosity_average_series(result.c, g, rock, f, cutoff.theta)
    return EstimateRecord(
        label=label,
        energy=energy,
        grad_p=grad_p,
        theta_p_h1=localized_h1_norm(result.p, g, cutoff),
        bv_mu=bv_time_seminorm(mu_s),
        bv_inv_mu=bv_time_seminorm(inv_s),
        overshoot=float(np.max(result.series["overshoot"])),
        mass_residual=float(np.max(result.series["balance_residual"])),
    )
