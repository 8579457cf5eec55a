"""Concentration transport and the sequential pressure-transport driver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .coefficients import FluidModel, RockModel, SymTensor2, dispersion_tensor, truncate_velocity
from .grid import Grid, cell_gradient
from .pressure import FlowState, solve_flow
from .wells import MollifiedSources

if TYPE_CHECKING:
    from .scenario import Scenario

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ("step", "t", "mass_in", "mass_out", "storage", "balance_residual",
                  "overshoot", "min_c", "max_c", "energy_increment")


class TransportError(RuntimeError):
    pass


class CFLError(TransportError):
    pass


@dataclass(frozen=True)
class TimeStepper:
    dt: float
    cfl_safety: float = 0.5
    transport_tol: float = 1e-12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError(f"CFL safety factor must lie in (0, 1], got {self.cfl_safety}")


@dataclass(frozen=True)
class TransportState:
    c: np.ndarray = field(repr=False)
    t: float = 0.0
    step: int = 0
    injected: float = 0.0
    produced: float = 0.0
    stored: float = 0.0
    overshoot: float = 0.0


def overshoot(c) -> float:
    c = np.asarray(c)
    return float(max(0.0, c.max() - 1.0, -c.min()))


def effective_velocity(u, truncation: float | None):
    return u if truncation is None else truncate_velocity(u, truncation)


def cell_dispersion(rock: RockModel, u, f: FluidModel, truncation: float | None = None
                    ) -> SymTensor2:
    return dispersion_tensor(rock.phi, effective_velocity(u, truncation), f)


def cross_flux(g: Grid, D: SymTensor2, c) -> np.ndarray:
    """Off-diagonal part of ``-D grad c . n`` integrated over each face.

    Uses least-squares cell gradients averaged across the face.
    """
    grad = cell_gradient(g, c)
    L, R = g.face_left, g.face_right
    # x faces pick up D12 * dc/dy, y faces D12 * dc/dx
    tang = np.where(g.face_axis == 0, 1, 0)
    prod_l = D.a12[L] * grad[L, tang]
    prod_r = D.a12[R] * grad[R, tang]
    return -0.5 * (prod_l + prod_r) * g.face_area


def cross_cfl_number(g: Grid, D: SymTensor2, phi, dt: float) -> float:
    return float(dt * np.max(np.abs(D.a12) / (g.volumes * phi)))


def transport_matrix(g: Grid, rock: RockModel, flux, D: SymTensor2, qP, dt: float
                     ) -> sp.csr_matrix:
    """Implicit operator: accumulation, upwind advection, normal dispersion, sinks.

    Rows are divided by ``phi vol / dt``, so the accumulation term is the
    identity and a step with every other term absent reproduces ``c^m`` exactly.
    """
    n = g.ncells
    L, R = g.face_left, g.face_right
    fp = np.maximum(flux, 0.0)
    fm = np.maximum(-flux, 0.0)
    dnn = np.where(g.face_axis == 0, 0.5 * (D.a11[L] + D.a11[R]), 0.5 * (D.a22[L] + D.a22[R]))
    td = dnn * g.face_area / g.face_distance
    s = dt / (rock.phi * g.volumes)
    rows = np.concatenate([L, R, L, R])
    cols = np.concatenate([L, R, R, L])
    vals = np.concatenate([fp + td, fm + td, -(fm + td), -(fp + td)]) * s[rows]
    exchange = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return exchange + sp.diags(1.0 + dt * qP / rock.phi)


def limit_cross_fluxes(g: Grid, c_pred, flux, phi, dt: float) -> np.ndarray:
    """Scale face fluxes so the explicit update keeps each cell within the
    range of the predictor over itself and its face neighbours.

    Zalesak-type limiting: the increments a cell may receive are split into
    positive and negative parts and capped by the room left to the local
    maximum and minimum.
    """
    L, R = g.face_left, g.face_right
    n = g.ncells
    lo = c_pred.copy()
    hi = c_pred.copy()
    np.minimum.at(lo, L, c_pred[R])
    np.minimum.at(lo, R, c_pred[L])
    np.maximum.at(hi, L, c_pred[R])
    np.maximum.at(hi, R, c_pred[L])
    scale = dt / (phi * g.volumes)
    inc_l = -flux * scale[L]
    inc_r = flux * scale[R]
    gain = np.zeros(n)
    loss = np.zeros(n)
    np.add.at(gain, L, np.maximum(inc_l, 0.0))
    np.add.at(gain, R, np.maximum(inc_r, 0.0))
    np.add.at(loss, L, np.minimum(inc_l, 0.0))
    np.add.at(loss, R, np.minimum(inc_r, 0.0))
    room_up = np.maximum(hi - c_pred, 0.0)
    room_dn = np.minimum(lo - c_pred, 0.0)
    r_up = np.ones(n)
    r_dn = np.ones(n)
    np.divide(room_up, gain, out=r_up, where=gain > room_up)
    np.divide(room_dn, loss, out=r_dn, where=loss < room_dn)
    alpha = np.where(flux > 0, np.minimum(r_dn[L], r_up[R]), np.minimum(r_up[L], r_dn[R]))
    return alpha * flux


@dataclass
class StepDiagnostics:
    mass_in: float
    mass_out: float
    storage: float
    balance_residual: float
    overshoot: float
    min_c: float
    max_c: float
    energy_increment: float
    cfl: float


CROSS_MODES = ("limited", "explicit", "off")


def step_concentration(state: TransportState, flow: FlowState, g: Grid, rock: RockModel,
                       f: FluidModel, src: MollifiedSources, stepper: TimeStepper,
                       truncation: float | None = None, cross: str = "limited"
                       ) -> tuple[TransportState, StepDiagnostics]:
    """Advance ``c`` by one backward-Euler step with the velocity frozen.

    Upwind advection, the face-normal part of the dispersion, injection and
    the production sink are implicit. The cross-derivative dispersion is
    handled according to ``cross``:

    ``"limited"``
        applied after the implicit solve as explicit face fluxes of the
        predictor, scaled by a local-bounds limiter; conservative and free of
        new extrema. The sink uses the predictor.
    ``"explicit"``
        explicit in ``c^m`` on the right-hand side; affine in ``c`` but not
        bound preserving.
    ``"off"``
        dropped.
    """
    if cross not in CROSS_MODES:
        raise ValueError(f"cross-dispersion mode must be one of {CROSS_MODES}, got {cross!r}")
    dt = stepper.dt
    c_old = state.c
    vol = g.volumes
    D = cell_dispersion(rock, flow.u_cell, f, truncation)
    cfl = cross_cfl_number(g, D, rock.phi, dt) if cross != "off" else 0.0
    if cfl > stepper.cfl_safety:
        raise CFLError(
            f"explicit cross-dispersion number {cfl:.3g} exceeds safety factor "
            f"{stepper.cfl_safety:g}; reduce dt (increase nt)")
    A = transport_matrix(g, rock, flow.flux, D, src.qP, dt)
    scale = dt / (rock.phi * vol)
    rhs = c_old + scale * src.qI_chat * vol
    if cross == "explicit":
        rhs = rhs - scale * g.divergence(cross_flux(g, D, c_old))
    c_pred = spsolve(A.tocsc(), rhs)
    res = np.linalg.norm(A @ c_pred - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not np.all(np.isfinite(c_pred)) or res > stepper.transport_tol:
        raise TransportError(f"transport solve failed (relative residual {res:.3e})")
    c_new = c_pred
    if cross == "limited":
        fx = limit_cross_fluxes(g, c_pred, cross_flux(g, D, c_pred), rock.phi, dt)
        c_new = c_pred - dt * g.divergence(fx) / (rock.phi * vol)

    mass_in = dt * float(np.sum(src.qI_chat * vol))
    mass_out = dt * float(np.sum(src.qP * c_pred * vol))
    storage = float(np.sum(rock.phi * c_new * vol))
    grad = cell_gradient(g, c_new)
    energy = dt * float(np.sum(D.quad(grad) * vol))
    diag = StepDiagnostics(
        mass_in=mass_in,
        mass_out=mass_out,
        storage=storage,
        balance_residual=mass_balance_residual(c_old, c_new, rock.phi, src, dt, c_pred),
        overshoot=overshoot(c_new),
        min_c=float(c_new.min()),
        max_c=float(c_new.max()),
        energy_increment=energy,
        cfl=cfl,
    )
    new = TransportState(c_new, state.t + dt, state.step + 1, state.injected + mass_in,
                         state.produced + mass_out, storage,
                         max(state.overshoot, diag.overshoot))
    return new, diag


def mass_balance_residual(c_old, c_new, phi, src: MollifiedSources, dt: float,
                          c_sink=None) -> float:
    """Relative defect of the discrete mass budget over one step.

    ``|d(sum phi c vol) + dt sum qP c_sink vol - dt sum qI chat vol|`` divided
    by the injected mass plus a floor of 1e-14 pore volumes. ``c_sink`` is the
    concentration the production sink was evaluated at (default ``c_new``).
    """
    vol = src.grid.volumes
    c_sink = c_new if c_sink is None else c_sink
    d_store = float(np.sum(phi * (c_new - c_old) * vol))
    out = dt * float(np.sum(src.qP * c_sink * vol))
    inj = dt * float(np.sum(src.qI_chat * vol))
    tiny = 1e-14 * float(np.sum(phi * vol))
    return abs(d_store + out - inj) / (inj + tiny)


@dataclass
class SimulationResult:
    grid: Grid = field(repr=False)
    rock: RockModel = field(repr=False)
    fluid: FluidModel
    sources: MollifiedSources = field(repr=False)
    dt: float
    times: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    series: dict[str, np.ndarray] = field(repr=False)
    snapshot_steps: list[int]
    truncation: float | None = None
    final: TransportState | None = field(default=None, repr=False)

    @property
    def max_speed(self) -> float:
        return float(np.max(np.hypot(self.u[..., 0], self.u[..., 1])))


def run_simulation(sc: "Scenario", truncation: float | None = None, cross: str | None = None
                   ) -> SimulationResult:
    """Sequential splitting: pressure with ``c^m``, then a transport step.

    ``truncation`` caps the speed fed to the dispersion tensor; ``None`` leaves
    it untruncated. ``cross`` overrides the scenario's cross-dispersion mode.
    """
    g = sc.build_grid()
    rock = sc.build_rock(g)
    fluid = sc.fluid
    base = sc.build_sources(g)
    nt = sc.domain.nt
    dt = sc.domain.T / nt
    stepper = TimeStepper(dt, sc.numerics.cfl_safety, sc.numerics.transport_tol)
    c0 = sc.initial_concentration(g)
    num = sc.numerics
    cross = num.cross_dispersion if cross is None else cross

    times = np.arange(nt + 1) * dt
    c_hist = np.empty((nt + 1, g.ncells))
    p_hist = np.empty((nt, g.ncells))
    u_hist = np.empty((nt, g.ncells, 2))
    series = {name: np.empty(nt) for name in SERIES_COLUMNS}
    c_hist[0] = c0
    state = TransportState(c0.copy(), 0.0, 0, stored=float(np.sum(rock.phi * c0 * g.volumes)),
                           overshoot=overshoot(c0))
    cache: dict[tuple, MollifiedSources] = {}
    for m in range(nt):
        t_mid = (m + 0.5) * dt
        key = tuple(w.multiplier(t_mid) for w in base.wells.wells)
        if key not in cache:
            cache[key] = base.at(t_mid)
        src = cache[key]
        flow = solve_flow(g, rock, state.c, fluid, src, num.pressure_tol,
                          num.pressure_maxiter, num.jacobi)
        state, diag = step_concentration(state, flow, g, rock, fluid, src, stepper,
                                         truncation, cross)
        c_hist[m + 1] = state.c
        p_hist[m] = flow.p
        u_hist[m] = flow.u_cell
        row = dict(step=m + 1, t=state.t, mass_in=diag.mass_in, mass_out=diag.mass_out,
                   storage=diag.storage, balance_residual=diag.balance_residual,
                   overshoot=diag.overshoot, min_c=diag.min_c, max_c=diag.max_c,
                   energy_increment=diag.energy_increment)
        for name in SERIES_COLUMNS:
            series[name][m] = row[name]
    every = sc.output.snapshot_every
    snaps = [s for s in range(nt + 1) if every and s % every == 0]
    if every and nt not in snaps:
        snaps.append(nt)
    return SimulationResult(g, rock, fluid, base, dt, times, c_hist, p_hist, u_hist, series,
                            snaps, truncation, state)

