import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miscible.coefficients import FluidModel, Region, RockModel
from miscible.grid import build_grid
from miscible.pressure import (PressureSolveError, assemble_pressure, darcy_flux, laplacian,
                               projected_cg, reconstruct_velocity, reduced_transmissibility,
                               solve_flow, solve_pressure, transmissibility)
from miscible.wells import INJECTOR, PRODUCER, Well, WellSet, mollify, point_source_mode

F1 = FluidModel(mu0=1.0, M=1.0)


def two_cell():
    g = build_grid(2, 1, 2.0, 1.0)
    return g, RockModel.uniform(g, 0.2, 1.0)


def test_uniform_transmissibility():
    g, rock = two_cell()
    np.testing.assert_allclose(transmissibility(g, rock, np.zeros(2), F1), [1.0])


def test_harmonic_jump():
    g = build_grid(2, 1, 2.0, 1.0)
    rock = RockModel.from_regions(g, [Region(0, 1, 0, 1, 0.2, 1.0, 1.0),
                                      Region(1, 2, 0, 1, 0.2, 4.0, 4.0)], 0.1, 0.2)
    np.testing.assert_allclose(transmissibility(g, rock, np.zeros(2), F1), [1.6])


def test_mobility_uses_viscosity():
    g, rock = two_cell()
    f = FluidModel(mu0=2.0, M=16.0)
    # mu(1) = mu0 / 16 in both cells
    np.testing.assert_allclose(transmissibility(g, rock, np.ones(2), f), [8.0])


def random_rock(g, rng):
    return RockModel(rng.uniform(0.1, 0.3, g.ncells), rng.uniform(0.1, 10, g.ncells),
                     rng.uniform(0.1, 10, g.ncells))


def test_matrix_invariants():
    rng = np.random.default_rng(5)
    g = build_grid(7, 5, 1.0, 1.0)
    rock = random_rock(g, rng)
    w = WellSet((Well(0.3, 0.3, INJECTOR, 1.0), Well(0.7, 0.6, PRODUCER, 1.0)))
    sys = assemble_pressure(g, rock, rng.uniform(0, 1, g.ncells), FluidModel(M=5.0),
                            mollify(w, g, 0.2))
    A = sys.matrix.toarray()
    np.testing.assert_allclose(A, A.T, atol=0)
    np.testing.assert_allclose(A.sum(axis=1), 0.0, atol=1e-12 * np.abs(A).max())
    off = A - np.diag(np.diag(A))
    assert np.all(off <= 0)
    assert abs(sys.rhs.sum()) <= 1e-13 * np.abs(sys.rhs).sum()


def test_zero_rhs():
    g, rock = two_cell()
    A = laplacian(g, np.array([1.0]))
    x, it, _ = projected_cg(A, np.zeros(2), g.volumes)
    np.testing.assert_array_equal(x, 0.0)


def test_two_cell_dipole():
    g, rock = two_cell()
    w = WellSet((Well(0.5, 0.5, INJECTOR, 1.0), Well(1.5, 0.5, PRODUCER, 1.0)))
    src = point_source_mode(w, g)
    flow = solve_flow(g, rock, np.zeros(2), F1, src)
    np.testing.assert_allclose(flow.p, [0.5, -0.5], rtol=1e-12)
    np.testing.assert_allclose(flow.flux, [1.0], rtol=1e-12)
    np.testing.assert_allclose(darcy_flux(g, rock, np.zeros(2), F1, flow.p), [1.0])
    np.testing.assert_allclose(flow.u_cell, [[0.5, 0.0], [0.5, 0.0]], rtol=1e-12)


def test_manufactured_strip_recovers_solution():
    n = 40
    g = build_grid(n, 1, 1.0, 0.1)
    rock = RockModel.uniform(g, 0.2, 1.0)
    A = laplacian(g, reduced_transmissibility(g, rock, np.zeros(n), F1))
    p_star = np.cos(np.pi * g.centers[:, 0])
    p_star -= np.dot(p_star, g.volumes) / g.volumes.sum()
    b = A @ p_star
    x, _, _ = projected_cg(A, b, g.volumes, tol=1e-12)
    np.testing.assert_allclose(x, p_star, atol=1e-10)


def test_nonconvergence_reports_history():
    g = build_grid(10, 10, 1.0, 1.0)
    rock = RockModel.uniform(g)
    A = laplacian(g, reduced_transmissibility(g, rock, np.zeros(g.ncells), F1))
    b = np.zeros(g.ncells)
    b[0], b[-1] = 1.0, -1.0
    with pytest.raises(PressureSolveError) as info:
        projected_cg(A, b, g.volumes, tol=1e-14, maxiter=3)
    assert len(info.value.history) == 3


def test_jacobi_matches_plain():
    rng = np.random.default_rng(2)
    g = build_grid(12, 9, 1.0, 1.0)
    rock = random_rock(g, rng)
    A = laplacian(g, reduced_transmissibility(g, rock, np.zeros(g.ncells), F1))
    b = rng.normal(size=g.ncells)
    x1, _, _ = projected_cg(A, b, g.volumes, tol=1e-12)
    x2, _, _ = projected_cg(A, b, g.volumes, tol=1e-12, jacobi=True)
    np.testing.assert_allclose(x1, x2, atol=1e-9)


@pytest.fixture(scope="module")
def hetero_flow():
    rng = np.random.default_rng(7)
    g = build_grid(24, 20, 1.2, 1.0)
    rock = random_rock(g, rng)
    w = WellSet((Well(0.3, 0.3, INJECTOR, 1.0), Well(0.9, 0.7, PRODUCER, 1.0)))
    src = mollify(w, g, 0.15)
    c = rng.uniform(0, 1, g.ncells)
    f = FluidModel(mu0=1e-3, M=10.0)
    return g, rock, c, f, src, solve_flow(g, rock, c, f, src, tol=1e-12)


def test_conservation_and_zero_mean(hetero_flow):
    g, rock, c, f, src, flow = hetero_flow
    net = g.divergence(flow.flux)
    target = (src.qI - src.qP) * g.volumes
    assert np.abs(net - target).max() <= 1e-10 * np.abs(target).sum()
    assert abs(np.dot(flow.p, g.volumes)) <= 1e-12 * np.abs(flow.p).max()


def test_flux_antisymmetric(hetero_flow):
    g, rock, c, f, src, flow = hetero_flow
    forward = darcy_flux(g, rock, c, f, flow.p)
    np.testing.assert_allclose(forward, flow.flux, rtol=1e-9, atol=1e-12 * np.abs(forward).max())
    # swapping left/right flips the sign
    T = transmissibility(g, rock, c, f)
    flipped = T * (flow.p[g.face_right] - flow.p[g.face_left])
    np.testing.assert_array_equal(flipped, -forward)


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-4, 1e4))
def test_mobility_scaling(lam):
    g = build_grid(12, 12, 1.0, 1.0)
    rock = RockModel.uniform(g)
    w = WellSet((Well(0.2, 0.3, INJECTOR, 1.0), Well(0.8, 0.7, PRODUCER, 1.0)))
    src = mollify(w, g, 0.15)
    c = np.linspace(0, 1, g.ncells)
    f = FluidModel(mu0=1.0, M=3.0)
    a = solve_flow(g, rock, c, f, src, tol=1e-12)
    b = solve_flow(g, rock, c, FluidModel(mu0=lam, M=3.0), src, tol=1e-12)
    np.testing.assert_allclose(b.p, lam * a.p, rtol=1e-12, atol=1e-12 * lam * np.abs(a.p).max())
    np.testing.assert_allclose(b.flux, a.flux, rtol=1e-12, atol=1e-12 * np.abs(a.flux).max())


def test_reflection_symmetry():
    g = build_grid(20, 20, 1.0, 1.0)
    rock = RockModel.uniform(g)
    w = WellSet((Well(0.15, 0.15, INJECTOR, 1.0), Well(0.85, 0.85, PRODUCER, 1.0)))
    flow = solve_flow(g, rock, np.zeros(g.ncells), F1, mollify(w, g, 0.1), tol=1e-13)
    P = g.as_image(flow.p)
    np.testing.assert_allclose(P, P.T, atol=1e-10 * np.abs(P).max())
    S = g.as_image(flow.speed)
    np.testing.assert_allclose(S, S.T, atol=1e-10 * S.max())


def test_velocity_examples():
    g = build_grid(6, 1, 6.0, 1.0)
    np.testing.assert_array_equal(reconstruct_velocity(g, np.zeros(g.nfaces)), 0.0)
    u = reconstruct_velocity(g, np.ones(g.nfaces))
    np.testing.assert_allclose(u[1:-1], [[1.0, 0.0]] * 4)
    np.testing.assert_allclose(u[[0, -1], 0], 0.5)


def test_constant_pressure_zero_flux():
    g, rock = two_cell()
    np.testing.assert_array_equal(darcy_flux(g, rock, np.zeros(2), F1, np.ones(2)), 0.0)


def test_solve_pressure_scales_by_mu0():
    g, rock = two_cell()
    w = WellSet((Well(0.5, 0.5, INJECTOR, 1.0), Well(1.5, 0.5, PRODUCER, 1.0)))
    sys = assemble_pressure(g, rock, np.zeros(2), FluidModel(mu0=3.0, M=1.0),
                            point_source_mode(w, g))
    np.testing.assert_allclose(solve_pressure(sys), [1.5, -1.5])


def test_non_finite_concentration_rejected():
    g, rock = two_cell()
    w = WellSet((Well(0.5, 0.5, INJECTOR, 1.0), Well(1.5, 0.5, PRODUCER, 1.0)))
    with pytest.raises(ValueError):
        assemble_pressure(g, rock, np.array([0.0, np.nan]), F1, point_source_mode(w, g))


def test_manufactured_convergence_order():
    errs = []
    for n in (16, 32, 64):
        g = build_grid(n, n, 1.0, 1.0)
        rock = RockModel.uniform(g)
        A = laplacian(g, reduced_transmissibility(g, rock, np.zeros(g.ncells), F1))
        x, y = g.centers[:, 0], g.centers[:, 1]
        exact = np.cos(np.pi * x) * np.cos(np.pi * y)
        rhs = 2 * np.pi ** 2 * exact * g.volumes
        rhs -= rhs.sum() / g.ncells
        p, _, _ = projected_cg(A, rhs, g.volumes, tol=1e-13)
        errs.append(np.sqrt(np.dot((p - exact) ** 2, g.volumes)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9), orders
