"""Constitutive laws: Koval viscosity, rock fields, dispersion tensors.

Tensor routines are vectorised: a :class:`SymTensor2` may hold scalars or
arrays of equal shape (one entry per cell), and velocity arguments are arrays
of shape ``(..., 2)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import Grid

logger = logging.getLogger(__name__)

PSD_TOL = 1e-12


@dataclass(frozen=True)
class FluidModel:
    """Fluid parameters; ``eps`` is the molecular diffusion being sent to zero."""

    mu0: float = 1.0
    M: float = 2.0
    d_l: float = 0.01
    d_t: float = 0.001
    eps: float = 0.0

    def __post_init__(self):
        if not self.mu0 > 0:
            raise ValueError(f"mu0 must be positive, got {self.mu0}")
        if not self.M >= 1:
            raise ValueError(f"mobility ratio M must be >= 1, got {self.M}")
        if not (self.d_l > 0 and self.d_t > 0):
            raise ValueError(f"dispersivities must be positive, got {self.d_l}, {self.d_t}")
        if not self.eps >= 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")

    @property
    def mu_min(self) -> float:
        return self.mu0 / self.M

    @property
    def mu_max(self) -> float:
        return self.mu0


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]`` with constant rock data."""

    x0: float
    x1: float
    y0: float
    y1: float
    phi: float
    kx: float
    ky: float

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return ((pts[:, 0] >= self.x0) & (pts[:, 0] <= self.x1)
                & (pts[:, 1] >= self.y0) & (pts[:, 1] <= self.y1))


@dataclass(frozen=True)
class RockModel:
    """Per-cell porosity and diagonal permeability built from a region map."""

    phi: np.ndarray = field(repr=False)
    kx: np.ndarray = field(repr=False)
    ky: np.ndarray = field(repr=False)
    regions: tuple[Region, ...] = ()
    region_of_cell: np.ndarray = field(default=None, repr=False)
    phi_star: float = 0.1
    k_star: float = 1e-3

    @classmethod
    def from_regions(cls, g: Grid, regions: Sequence[Region],
                     phi_star: float, k_star: float) -> "RockModel":
        """Assign each cell the data of the first region containing its centre."""
        owner = np.full(g.ncells, -1, dtype=np.int64)
        for r, region in enumerate(regions):
            hit = (owner < 0) & region.contains(g.centers)
            owner[hit] = r
        if np.any(owner < 0):
            bad = int(np.flatnonzero(owner < 0)[0])
            raise ValueError(f"cell {bad} at {tuple(g.centers[bad])} is not covered by any region")
        phi = np.array([regions[r].phi for r in owner])
        kx = np.array([regions[r].kx for r in owner])
        ky = np.array([regions[r].ky for r in owner])
        return cls(phi, kx, ky, tuple(regions), owner, phi_star, k_star)

    @classmethod
    def uniform(cls, g: Grid, phi: float = 0.2, k: float = 1.0,
                phi_star: float | None = None, k_star: float | None = None) -> "RockModel":
        region = Region(0.0, g.Lx, 0.0, g.Ly, phi, k, k)
        return cls.from_regions(
            g, [region],
            phi_star=min(phi, 1 / phi) if phi_star is None else phi_star,
            k_star=min(k, 1 / k) if k_star is None else k_star,
        )

    def discontinuity_segments(self) -> list[tuple[float, float, float, float]]:
        """Region edges interior to the domain, as ``(xa, ya, xb, yb)`` segments.

        This is a superset of the closure of the discontinuity set of K (edges
        between regions with equal data are kept).
        """
        if not self.regions:
            return []
        xmax = max(r.x1 for r in self.regions)
        ymax = max(r.y1 for r in self.regions)
        xmin = min(r.x0 for r in self.regions)
        ymin = min(r.y0 for r in self.regions)
        segs = []
        for r in self.regions:
            for x in (r.x0, r.x1):
                if xmin < x < xmax:
                    segs.append((x, r.y0, x, r.y1))
            for y in (r.y0, r.y1):
                if ymin < y < ymax:
                    segs.append((r.x0, y, r.x1, y))
        return sorted(set(segs))


@dataclass(frozen=True)
class SymTensor2:
    """Symmetric 2x2 tensor ``[[a11, a12], [a12, a22]]``; entries may be arrays."""

    a11: np.ndarray | float
    a12: np.ndarray | float
    a22: np.ndarray | float

    @classmethod
    def identity(cls, scale=1.0) -> "SymTensor2":
        scale = np.asarray(scale, dtype=float)
        return cls(scale, np.zeros_like(scale), scale.copy())

    @classmethod
    def from_matrix(cls, m) -> "SymTensor2":
        m = np.asarray(m, dtype=float)
        return cls(m[..., 0, 0], 0.5 * (m[..., 0, 1] + m[..., 1, 0]), m[..., 1, 1])

    def as_matrix(self) -> np.ndarray:
        a11, a12, a22 = np.broadcast_arrays(
            np.asarray(self.a11, float), np.asarray(self.a12, float), np.asarray(self.a22, float))
        return np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)

    def trace(self):
        return self.a11 + self.a22

    def det(self):
        return self.a11 * self.a22 - self.a12 * self.a12

    def eigvalsh(self):
        """Eigenvalues ``(lower, upper)`` in closed form."""
        half_tr = 0.5 * (self.a11 + self.a22)
        rad = np.hypot(0.5 * (self.a11 - self.a22), self.a12)
        return half_tr - rad, half_tr + rad

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.stack([self.a11 * v[..., 0] + self.a12 * v[..., 1],
                         self.a12 * v[..., 0] + self.a22 * v[..., 1]], -1)

    def quad(self, v, w=None):
        """Bilinear form ``T v . w`` (``w`` defaults to ``v``)."""
        v = np.asarray(v, dtype=float)
        w = v if w is None else np.asarray(w, dtype=float)
        return (self.a11 * v[..., 0] * w[..., 0]
                + self.a12 * (v[..., 0] * w[..., 1] + v[..., 1] * w[..., 0])
                + self.a22 * v[..., 1] * w[..., 1])

    def matmul(self, other: "SymTensor2") -> np.ndarray:
        return self.as_matrix() @ other.as_matrix()

    def opnorm(self):
        lo, hi = self.eigvalsh()
        return np.maximum(np.abs(lo), np.abs(hi))

    def __add__(self, other: "SymTensor2") -> "SymTensor2":
        return SymTensor2(self.a11 + other.a11, self.a12 + other.a12, self.a22 + other.a22)

    def scaled(self, s) -> "SymTensor2":
        return SymTensor2(s * self.a11, s * self.a12, s * self.a22)


def koval_viscosity(c, f: FluidModel):
    """Koval mixture viscosity; concentrations outside [0, 1] are clamped."""
    c = np.asarray(c, dtype=float)
    return f.mu0 * relative_viscosity(c, f.M)


def relative_viscosity(c, M: float):
    """``mu(c) / mu(0)`` for the Koval law. Independent of ``mu0``."""
    c = np.asarray(c, dtype=float)
    clamped = np.clip(c, 0.0, 1.0)
    if np.any(clamped != c):
        logger.debug("clamped %d concentration values into [0, 1] (range %g..%g)",
                     int(np.count_nonzero(clamped != c)), float(np.min(c)), float(np.max(c)))
    return (1.0 + (M ** 0.25 - 1.0) * clamped) ** -4


@dataclass
class ViscosityReport:
    passed: bool
    degenerate: bool
    margin: float
    margin_mu: float
    margin_inv_mu: float
    witnesses: list[str]


def check_viscosity_hypotheses(f: FluidModel | Callable | Sequence[float],
                               samples: int = 10_000) -> ViscosityReport:
    """Strict convexity of mu and 1/mu via second differences on [0, 1].

    ``f`` may be a :class:`FluidModel` (Koval law), a callable ``mu(c)`` or a
    table of viscosities on a uniform grid of [0, 1] (``samples`` is then the
    table length). Differences whose magnitude is at rounding level are treated
    as zero, so affine or constant laws fail and are flagged degenerate.
    """
    if isinstance(f, FluidModel):
        c = np.linspace(0.0, 1.0, samples)
        mu = koval_viscosity(c, f)
    elif callable(f):
        c = np.linspace(0.0, 1.0, samples)
        mu = np.asarray(f(c), dtype=float) * np.ones_like(c)
    else:
        mu = np.asarray(f, dtype=float)
        samples = mu.size
    if samples < 3:
        raise ValueError(f"need at least 3 samples, got {samples}")
    witnesses = []
    if np.any(~np.isfinite(mu)) or np.any(mu <= 0):
        witnesses.append("mu must be finite and positive on [0, 1]")
        return ViscosityReport(False, False, -np.inf, -np.inf, -np.inf, witnesses)

    margins = []
    degenerate = False
    for name, vals in (("mu", mu), ("1/mu", 1.0 / mu)):
        d2 = vals[:-2] - 2.0 * vals[1:-1] + vals[2:]
        noise = 16.0 * np.finfo(float).eps * np.max(np.abs(vals))
        margin = float(np.min(d2))
        if np.all(np.abs(d2) <= noise):
            degenerate = True
            witnesses.append(f"{name} has vanishing second differences (affine or constant)")
        elif margin <= noise:
            k = int(np.argmin(d2))
            witnesses.append(f"{name} second difference {margin:.3e} at sample {k + 1}")
        margins.append(margin)
    passed = not witnesses
    return ViscosityReport(passed, degenerate, min(margins), margins[0], margins[1], witnesses)


def flow_projection(u) -> SymTensor2:
    """Projection ``u u^T / |u|^2`` onto the flow direction."""
    u = np.asarray(u, dtype=float)
    n2 = u[..., 0] ** 2 + u[..., 1] ** 2
    if np.any(n2 == 0):
        raise ValueError("zero-velocity projection undefined")
    return SymTensor2(u[..., 0] ** 2 / n2, u[..., 0] * u[..., 1] / n2, u[..., 1] ** 2 / n2)


def dispersion_tensor(phi, u, f: FluidModel, eps: float | None = None) -> SymTensor2:
    """Diffusion-dispersion tensor ``phi (eps I + |u| (d_l E + d_t (I - E)))``.

    ``phi`` is the porosity of the cell(s) carrying velocity ``u``; ``eps``
    overrides ``f.eps``. At ``u = 0`` the tensor is ``phi eps I``.
    """
    eps = f.eps if eps is None else eps
    u = np.asarray(u, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ux, uy = u[..., 0], u[..., 1]
    speed = np.hypot(ux, uy)
    # |u| E = u u^T / |u|, written to stay finite at u = 0
    safe = np.where(speed > 0, speed, 1.0)
    ue11 = np.where(speed > 0, ux * ux / safe, 0.0)
    ue12 = np.where(speed > 0, ux * uy / safe, 0.0)
    ue22 = np.where(speed > 0, uy * uy / safe, 0.0)
    a11 = phi * (eps + f.d_l * ue11 + f.d_t * (speed - ue11))
    a12 = phi * ((f.d_l - f.d_t) * ue12)
    a22 = phi * (eps + f.d_l * ue22 + f.d_t * (speed - ue22))
    return SymTensor2(a11, a12, a22)


def mechanical_dispersion(phi, u, f: FluidModel) -> SymTensor2:
    return dispersion_tensor(phi, u, f, eps=0.0)


def truncate_velocity(u, k: float) -> np.ndarray:
    """Rescale ``u`` to length ``min(|u|, k)``; vectors already inside are returned as is."""
    if not k > 0:
        raise ValueError(f"truncation level must be positive, got {k}")
    u = np.asarray(u, dtype=float)
    speed = np.hypot(u[..., 0], u[..., 1])
    over = speed > k
    scale = np.where(over, k / np.where(over, speed, 1.0), 1.0)
    return np.where(over[..., None], u * scale[..., None], u)


def tensor_sqrt(T: SymTensor2, tol: float = PSD_TOL) -> SymTensor2:
    """Principal square root of a PSD 2x2 tensor.

    Uses ``sqrt(T) = (T + s I) / sqrt(tr T + 2 s)`` with ``s = sqrt(det T)``,
    which follows from Cayley-Hamilton and equals ``V diag(sqrt(lambda)) V^T``.
    Eigenvalues below ``-tol * max(1, |T|)`` are rejected.
    """
    lo, hi = T.eigvalsh()
    scale = np.maximum(1.0, np.abs(hi))
    if np.any(lo < -tol * scale):
        raise ValueError(f"tensor is not positive semidefinite (min eigenvalue {np.min(lo):.3e})")
    s = np.sqrt(np.clip(T.det(), 0.0, None))
    t = np.sqrt(np.clip(T.trace() + 2.0 * s, 0.0, None))
    safe = np.where(t > 0, t, 1.0)
    zero = t == 0
    a11 = np.where(zero, 0.0, (T.a11 + s) / safe)
    a12 = np.where(zero, 0.0, T.a12 / safe)
    a22 = np.where(zero, 0.0, (T.a22 + s) / safe)
    return SymTensor2(a11, a12, a22)


def surrogate_permeability(rock: RockModel, rho) -> SymTensor2:
    """Blend ``rho K + (1 - rho) I`` used to localise the pressure equation."""
    rho = np.asarray(rho, dtype=float)
    return SymTensor2(rho * rock.kx + (1 - rho), np.zeros_like(rho), rho * rock.ky + (1 - rho))
