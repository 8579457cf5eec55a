"""Point wells and their mollification into cell densities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, locate_cell

INJECTOR = "injector"
PRODUCER = "producer"

# 4-point Gauss-Legendre rule on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


@dataclass(frozen=True)
class Well:
    x: float
    y: float
    kind: str
    rate: float
    chat: float = 1.0
    # (start_time, multiplier) pairs; the multiplier holds until the next start
    schedule: tuple[tuple[float, float], ...] = ((0.0, 1.0),)

    def __post_init__(self):
        if self.kind not in (INJECTOR, PRODUCER):
            raise ValueError(f"well kind must be {INJECTOR!r} or {PRODUCER!r}, got {self.kind!r}")

    @property
    def location(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def multiplier(self, t: float) -> float:
        value = 0.0
        for start, mult in sorted(self.schedule):
            if t >= start:
                value = mult
        return value

    def rate_at(self, t: float) -> float:
        return self.rate * self.multiplier(t)


@dataclass(frozen=True)
class WellSet:
    wells: tuple[Well, ...]

    def __post_init__(self):
        object.__setattr__(self, "wells", tuple(self.wells))

    @property
    def injectors(self) -> list[Well]:
        return [w for w in self.wells if w.kind == INJECTOR]

    @property
    def producers(self) -> list[Well]:
        return [w for w in self.wells if w.kind == PRODUCER]

    def breakpoints(self) -> list[float]:
        times = {0.0}
        for w in self.wells:
            times.update(float(s) for s, _ in w.schedule)
        return sorted(times)

    def imbalance(self, t: float) -> float:
        inj = sum(w.rate_at(t) for w in self.injectors)
        prod = sum(w.rate_at(t) for w in self.producers)
        return inj - prod


def validate_wells(w: WellSet, domain: tuple[float, float] | None = None,
                   rtol: float = 1e-12) -> list[str]:
    """Return violations of sign, placement and rate-balance requirements.

    ``domain`` is ``(Lx, Ly)``; without it the in-domain check is skipped.
    An empty list means the well set is admissible.
    """
    problems = []
    for n, well in enumerate(w.wells):
        if not (np.isfinite(well.rate) and well.rate >= 0):
            problems.append(f"hyp:source: well {n} has negative or non-finite rate {well.rate}")
        if any(not (np.isfinite(m) and m >= 0) for _, m in well.schedule):
            problems.append(f"hyp:source: well {n} has a negative schedule multiplier")
        if well.kind == INJECTOR and not 0 <= well.chat <= 1:
            problems.append(f"hyp:injectedconc: well {n} injects chat={well.chat} outside [0, 1]")
        if domain is not None:
            Lx, Ly = domain
            if not (0 < well.x < Lx and 0 < well.y < Ly):
                problems.append(
                    f"hyp:source: well {n} at ({well.x}, {well.y}) is not inside the open domain")
    locs = [(well.x, well.y) for well in w.wells]
    if len(set(locs)) != len(locs):
        problems.append("hyp:source: well locations are not pairwise distinct")
    for start in w.breakpoints():
        inj = sum(x.rate_at(start) for x in w.injectors)
        prod = sum(x.rate_at(start) for x in w.producers)
        gap = abs(inj - prod)
        if gap > rtol * max(inj, prod, 1e-300):
            problems.append(f"hyp:compatibility: imbalance {gap:.6g} from t={start:g}")
    return problems


def hat_bump(r: float):
    """Normalised radial tent ``3 / (pi r^2) * max(0, 1 - |x| / r)``."""
    c = 3.0 / (np.pi * r * r)

    def psi(dx, dy):
        return c * np.maximum(0.0, 1.0 - np.hypot(dx, dy) / r)

    return psi


def _gauss_rect_many(f, x0, x1, y0, y1) -> np.ndarray:
    """:func:`_gauss_rect` over many rectangles at once."""
    wx, wy = x1 - x0, y1 - y0
    X = x0[:, None, None] + wx[:, None, None] * _GL_X[None, :, None]
    Y = y0[:, None, None] + wy[:, None, None] * _GL_X[None, None, :]
    W = np.outer(_GL_W, _GL_W)[None] * (wx * wy)[:, None, None]
    return np.sum(W * f(X, Y), axis=(1, 2))


_MAX_DEPTH = 6


def _split_at_zero(lo, hi, owner, other_lo, other_hi):
    """Cut intervals containing 0 in their interior into two pieces."""
    cut = (lo < 0) & (hi > 0)
    lo2 = np.concatenate([lo, np.zeros(np.count_nonzero(cut))])
    hi2 = np.concatenate([np.where(cut, 0.0, hi), hi[cut]])
    return (lo2, hi2, np.concatenate([owner, owner[cut]]),
            np.concatenate([other_lo, other_lo[cut]]), np.concatenate([other_hi, other_hi[cut]]))


def bump_cell_masses(psi, r, xa, xb, ya, yb) -> np.ndarray:
    """Integrals of the bump (centred at the origin) over many rectangles.

    Rectangles are cut along the axes through the bump centre so the cone tip
    sits on piece corners. Pieces that straddle the support circle or touch the
    tip are bisected level by level; the rest get 4x4 Gauss-Legendre.
    """
    xa, xb, ya, yb = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (xa, xb, ya, yb))
    out = np.zeros(xa.size)
    owner = np.arange(xa.size)
    xa, xb, owner, ya, yb = _split_at_zero(xa, xb, owner, ya, yb)
    ya, yb, owner, xa, xb = _split_at_zero(ya, yb, owner, xa, xb)
    for depth in range(_MAX_DEPTH + 1):
        if owner.size == 0:
            break
        near = np.hypot(np.maximum(0.0, np.maximum(xa, -xb)), np.maximum(0.0, np.maximum(ya, -yb)))
        live = near < r
        xa, xb, ya, yb, owner = xa[live], xb[live], ya[live], yb[live], owner[live]
        far = np.hypot(np.maximum(np.abs(xa), np.abs(xb)), np.maximum(np.abs(ya), np.abs(yb)))
        tip = (xa <= 0) & (xb >= 0) & (ya <= 0) & (yb >= 0)
        split = (far > r) | tip
        if depth == _MAX_DEPTH:
            split[:] = False
        done = ~split
        np.add.at(out, owner[done],
                  _gauss_rect_many(psi, xa[done], xb[done], ya[done], yb[done]))
        xa, xb, ya, yb, owner = xa[split], xb[split], ya[split], yb[split], owner[split]
        xm, ym = 0.5 * (xa + xb), 0.5 * (ya + yb)
        xa, xb, ya, yb = (np.concatenate([xa, xm, xa, xm]), np.concatenate([xm, xb, xm, xb]),
                          np.concatenate([ya, ya, ym, ym]), np.concatenate([ym, ym, yb, yb]))
        owner = np.tile(owner, 4)
    return out


def _bump_on_rect(psi, r, x0, x1, y0, y1) -> float:
    return float(bump_cell_masses(psi, r, x0, x1, y0, y1)[0])


@dataclass(frozen=True)
class MollifiedSources:
    """Cell densities of the injection and production measures.

    ``basis[w]`` is the unit-mass density (1/m^2) of well ``w``; the source
    fields at a time ``t`` combine it with the well rates, after which producer
    densities are rescaled by one factor so the discrete masses balance.
    """

    grid: Grid = field(repr=False)
    wells: WellSet
    basis: np.ndarray = field(repr=False)
    radius: float | None = None
    n: int | None = None
    t: float = 0.0
    qI: np.ndarray = field(default=None, repr=False)
    qP: np.ndarray = field(default=None, repr=False)
    qI_chat: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.qI is None:
            qI, qP, qIc = _combine(self.grid, self.wells, self.basis, self.t)
            object.__setattr__(self, "qI", qI)
            object.__setattr__(self, "qP", qP)
            object.__setattr__(self, "qI_chat", qIc)

    def at(self, t: float) -> "MollifiedSources":
        return MollifiedSources(self.grid, self.wells, self.basis, self.radius, self.n, t)

    def support(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.basis > 0, axis=0))

    def injected_mass(self) -> float:
        return float(np.sum(self.qI * self.grid.volumes))

    def produced_mass(self) -> float:
        return float(np.sum(self.qP * self.grid.volumes))

    def scaled(self, factor: float) -> "MollifiedSources":
        """Same sources with every well rate multiplied by ``factor``."""
        wells = WellSet(tuple(
            Well(w.x, w.y, w.kind, w.rate * factor, w.chat, w.schedule) for w in self.wells.wells))
        return MollifiedSources(self.grid, wells, self.basis, self.radius, self.n, self.t)


def _combine(g: Grid, wells: WellSet, basis: np.ndarray, t: float):
    qI = np.zeros(g.ncells)
    qP = np.zeros(g.ncells)
    qIc = np.zeros(g.ncells)
    for w, well in enumerate(wells.wells):
        rate = well.rate_at(t)
        if well.kind == INJECTOR:
            qI += rate * basis[w]
            qIc += rate * well.chat * basis[w]
        else:
            qP += rate * basis[w]
    vol = g.volumes
    inj, prod = np.sum(qI * vol), np.sum(qP * vol)
    if prod > 0 and inj > 0:
        qP *= inj / prod
    return qI, qP, qIc


def mollify(w: WellSet, g: Grid, r_n: float, n: int | None = None) -> MollifiedSources:
    """Replace each Dirac mass by a tent bump of radius ``r_n`` integrated over cells."""
    if not r_n > 0:
        raise ValueError(f"mollification radius must be positive, got {r_n}")
    psi = hat_bump(r_n)
    xe, ye = g.x_edges, g.y_edges
    basis = np.zeros((len(w.wells), g.ncells))
    for k, well in enumerate(w.wells):
        if (well.x - r_n < 0 or well.x + r_n > g.Lx
                or well.y - r_n < 0 or well.y + r_n > g.Ly):
            raise ValueError(
                f"mollification ball of radius {r_n} around ({well.x}, {well.y}) leaves the domain")
        i0 = max(int(np.searchsorted(xe, well.x - r_n, side="right")) - 1, 0)
        i1 = min(int(np.searchsorted(xe, well.x + r_n, side="left")), g.nx)
        j0 = max(int(np.searchsorted(ye, well.y - r_n, side="right")) - 1, 0)
        j1 = min(int(np.searchsorted(ye, well.y + r_n, side="left")), g.ny)
        ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1))
        ii, jj = ii.ravel(), jj.ravel()
        xa, xb = xe[ii] - well.x, xe[ii + 1] - well.x
        ya, yb = ye[jj] - well.y, ye[jj + 1] - well.y
        mass = bump_cell_masses(psi, r_n, xa, xb, ya, yb)
        keep = mass > 0
        basis[k, jj[keep] * g.nx + ii[keep]] = mass[keep]
        total = basis[k].sum()
        # quadrature of the kinked tent is not exact; fix each well's mass to one
        basis[k] /= total
        basis[k] /= g.volumes
    return MollifiedSources(g, w, basis, radius=r_n, n=n)


def point_source_mode(w: WellSet, g: Grid) -> MollifiedSources:
    """Put each well's full rate in the cell containing it."""
    basis = np.zeros((len(w.wells), g.ncells))
    for k, well in enumerate(w.wells):
        cell = locate_cell(g, (well.x, well.y))
        basis[k, cell] = 1.0 / g.volumes[cell]
    return MollifiedSources(g, w, basis, radius=None, n=None)


def build_sources(w: WellSet, g: Grid, radius: float | None, n: int | None = None
                  ) -> MollifiedSources:
    if radius is None:
        return point_source_mode(w, g)
    return mollify(w, g, radius, n)

