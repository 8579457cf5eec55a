"""Neumann pressure equation: TPFA assembly, projected CG, Darcy fluxes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .coefficients import FluidModel, RockModel, relative_viscosity
from .grid import Grid
from .wells import MollifiedSources

logger = logging.getLogger(__name__)


class PressureSolveError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class PressureSystem:
    """Singular SPD system ``A p = b`` with constant nullspace.

    The matrix is assembled from mobilities ``K mu0 / mu(c)`` so that it does
    not depend on the reference viscosity; the physical pressure is
    ``mu_ref`` times the solution of the stored system.
    """

    matrix: sp.csr_matrix = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    trans: np.ndarray = field(repr=False)
    volumes: np.ndarray = field(repr=False)
    mu_ref: float = 1.0
    tol: float = 1e-10
    maxiter: int | None = None
    jacobi: bool = False


@dataclass(frozen=True)
class FlowState:
    p: np.ndarray = field(repr=False)
    flux: np.ndarray = field(repr=False)
    u_cell: np.ndarray = field(repr=False)
    iterations: int = 0
    residual: float = 0.0

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.u_cell[:, 0], self.u_cell[:, 1])


def _harmonic(a, b):
    s = a + b
    return np.where(s > 0, 2.0 * a * b / np.where(s > 0, s, 1.0), 0.0)


def reduced_transmissibility(g: Grid, rock: RockModel, c, f: FluidModel) -> np.ndarray:
    """Face transmissibilities in units of ``1 / mu0``.

    The directional mobility ``K_dir mu0 / mu(c)`` is averaged harmonically
    across each face and multiplied by face area over centre distance.
    """
    mu_rel = relative_viscosity(c, f.M)
    lam_x = rock.kx / mu_rel
    lam_y = rock.ky / mu_rel
    L, R = g.face_left, g.face_right
    lam = np.where(g.face_axis == 0,
                   _harmonic(lam_x[L], lam_x[R]),
                   _harmonic(lam_y[L], lam_y[R]))
    return lam * g.face_area / g.face_distance


def transmissibility(g: Grid, rock: RockModel, c, f: FluidModel) -> np.ndarray:
    return reduced_transmissibility(g, rock, c, f) / f.mu0


def laplacian(g: Grid, trans: np.ndarray) -> sp.csr_matrix:
    """Symmetric TPFA matrix; boundary faces are omitted (no-flow)."""
    L, R = g.face_left, g.face_right
    n = g.ncells
    rows = np.concatenate([L, R, L, R])
    cols = np.concatenate([R, L, L, R])
    vals = np.concatenate([-trans, -trans, trans, trans])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble_pressure(g: Grid, rock: RockModel, c, f: FluidModel, src: MollifiedSources,
                      tol: float = 1e-10, maxiter: int | None = None,
                      jacobi: bool = False) -> PressureSystem:
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise ValueError("concentration contains non-finite values")
    trans = reduced_transmissibility(g, rock, c, f)
    if np.any(trans <= 0):
        raise ValueError("nonpositive face mobility")
    A = laplacian(g, trans)
    b = (src.qI - src.qP) * g.volumes
    return PressureSystem(A, b, trans, g.volumes, f.mu0, tol, maxiter, jacobi)


def _zero_mean(x, vol):
    return x - np.dot(x, vol) / vol.sum()


def projected_cg(A, b, vol, tol=1e-10, maxiter=None, jacobi=False):
    """CG for a singular SPD matrix with constant nullspace.

    ``b`` is projected onto the zero-sum subspace; iterates are shifted to zero
    volume-weighted mean each iteration. Returns ``(x, iterations, history)``
    where ``history`` holds relative residuals.
    """
    n = b.size
    maxiter = 20 * n if maxiter is None else maxiter
    b = b - b.sum() / n
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0.0:
        return x, 0, [0.0]
    minv = None
    if jacobi:
        diag = A.diagonal()
        minv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)
    history = []
    it = 0
    r = b.copy()
    while it < maxiter:
        z = r if minv is None else minv * r
        d = z.copy()
        rz = np.dot(r, z)
        while it < maxiter:
            Ad = A @ d
            alpha = rz / np.dot(d, Ad)
            x += alpha * d
            x = _zero_mean(x, vol)
            r -= alpha * Ad
            it += 1
            res = np.linalg.norm(r) / bnorm
            history.append(res)
            if res <= tol:
                break
            z = r if minv is None else minv * r
            rz_new = np.dot(r, z)
            d = z + (rz_new / rz) * d
            rz = rz_new
        # guard against drift of the recursive residual
        r = b - A @ x
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            history.append(res)
            return _zero_mean(x, vol), it, history
        logger.debug("CG restart at iteration %d, true residual %.3e", it, res)
    raise PressureSolveError(
        f"pressure CG did not reach tol {tol:g} in {maxiter} iterations "
        f"(last relative residual {history[-1]:.3e})", history)


def solve_pressure(sys: PressureSystem) -> np.ndarray:
    """Zero-mean pressure (Pa) solving the assembled system."""
    x, _, _ = projected_cg(sys.matrix, sys.rhs, sys.volumes, sys.tol, sys.maxiter, sys.jacobi)
    return sys.mu_ref * x


def darcy_flux(g: Grid, rock: RockModel, c, f: FluidModel, p) -> np.ndarray:
    """Integrated flux through each interior face, positive from left to right."""
    trans = transmissibility(g, rock, c, f)
    p = np.asarray(p, dtype=float)
    return trans * (p[g.face_left] - p[g.face_right])


def reconstruct_velocity(g: Grid, flux) -> np.ndarray:
    """Cell velocities from the mean of opposing face fluxes over face area."""
    flux = np.asarray(flux, dtype=float)
    vel = flux / g.face_area
    u = np.zeros((g.ncells, 2))
    for axis in (0, 1):
        sel = g.face_axis == axis
        acc = np.zeros(g.ncells)
        np.add.at(acc, g.face_left[sel], vel[sel])
        np.add.at(acc, g.face_right[sel], vel[sel])
        u[:, axis] = 0.5 * acc
    return u


def solve_flow(g: Grid, rock: RockModel, c, f: FluidModel, src: MollifiedSources,
               tol: float = 1e-10, maxiter: int | None = None, jacobi: bool = False) -> FlowState:
    """Pressure, fluxes and cell velocities for a frozen concentration."""
    sys = assemble_pressure(g, rock, c, f, src, tol, maxiter, jacobi)
    x, iters, history = projected_cg(sys.matrix, sys.rhs, sys.volumes, tol, maxiter, jacobi)
    # flux from the reduced system so it is independent of mu0 to rounding
    flux = sys.trans * (x[g.face_left] - x[g.face_right])
    return FlowState(sys.mu_ref * x, flux, reconstruct_velocity(g, flux), iters, history[-1])
