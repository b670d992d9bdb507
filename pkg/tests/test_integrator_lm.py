from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg

from mmvi.modules.constraints import ConstraintSet
from mmvi.modules.initial import InitialProfile, initial_phase, solve_initial_positions
from mmvi.modules.integrator_lm import (
    LmState,
    LobattoStepper,
    TrapezoidalStepper,
    consistent_accel_and_lambda,
    kkt_at,
    lm_integrate,
    lm_step_lobatto,
    make_lm_stepper,
    velocities_from_momenta,
)
from mmvi.modules.semidiscrete import (
    DofState,
    MeshConfig,
    VelocityState,
    assemble_mass_matrix,
    force_f,
    mass_determinant_formula,
)
from mmvi.modules.solver import NewtonOptions, fd_jacobian
from mmvi.modules.tableaus import get_tableau


def _soliton_start(runner_factory, scheme="Lobatto3", N=11):
    runner = runner_factory(strategy="LM", scheme=scheme, N=N)
    return runner, runner.initial_state()


def _vacuum(N=5):
    mesh = MeshConfig(N=N, Xmax=25.0)
    c = ConstraintSet.arclength(mesh, 2.5)
    q = mesh.state(np.zeros(N), mesh.uniform_X()[1:-1])
    zeros = np.zeros(N)
    state = LmState(
        t=0.0, q=q, v=np.zeros(2 * N), p=np.zeros(2 * N), r=zeros, w=zeros, lam=zeros, mu=zeros, pi=zeros
    )
    return c, state


def test_consistent_accelerations_solve_the_index_three_system(random_state, rng, arclength, density):
    q = random_state(arclength.N, min_slope_gap=0.5)
    u = rng.normal(size=2 * arclength.N)
    accel, lam = consistent_accel_and_lambda(q, u, arclength, density)
    M = assemble_mass_matrix(q).todense()
    Dg = arclength.jacobian(q).toarray()
    np.testing.assert_allclose(M @ accel + Dg.T @ lam, force_f(q, u, density), atol=1e-9)
    np.testing.assert_allclose(Dg @ accel, arclength.hessian_contraction(q, u), atol=1e-9)


def test_bordered_matrix_is_regular_where_the_mass_matrix_is_not(random_state, rng, arclength):
    base = random_state(arclength.N)
    q = DofState(y=0.2 * base.X, X=base.X)
    assert mass_determinant_formula(q) == 0.0
    M = assemble_mass_matrix(q).todense()
    singular = scipy.linalg.svdvals(M)
    assert singular.min() < 1e-10 * singular.max()

    n = 2 * arclength.N
    system = kkt_at(q, arclength, rng.normal(size=n), rng.normal(size=arclength.N))
    assert system.smallest_singular_value() > 1e-6
    x, lam = system.solve()
    Dg = arclength.jacobian(q).toarray()
    np.testing.assert_allclose(M @ x + Dg.T @ lam, system.rhs_f, atol=1e-9)
    np.testing.assert_allclose(Dg @ x, system.rhs_h, atol=1e-9)


def test_bordered_matrix_band(random_state, arclength):
    q = random_state(arclength.N)
    system = kkt_at(q, arclength, np.zeros(2 * arclength.N), np.zeros(arclength.N))
    dense = system.bordered().todense()
    rows, cols = np.nonzero(dense)
    assert np.max(np.abs(rows - cols)) <= 5


@pytest.mark.parametrize("scheme", ["Trapezoidal", "Lobatto2", "Lobatto3"])
def test_vacuum_is_stationary(density, scheme):
    c, state = _vacuum()
    traj = lm_integrate(state, 0.1, 5, scheme, c, density, kkt_monitor_every=1)
    assert len(traj) == 6
    for rec in traj.records:
        np.testing.assert_allclose(rec.y, 0.0, atol=1e-12)
        np.testing.assert_allclose(rec.X, c.mesh.uniform_X(), atol=1e-12)
        assert rec.energy == pytest.approx(0.0, abs=1e-12)
    assert traj.metadata["kkt_sigma_min"] > 0.0


@pytest.mark.parametrize("augmented", [True, False])
def test_lobatto_jacobian_matches_finite_differences(runner_factory, rng, augmented):
    runner, state = _soliton_start(runner_factory, N=5)
    stepper = LobattoStepper(get_tableau("Lobatto3"), runner.constraints, runner.density, augmented=augmented)
    dt = 0.05
    x = stepper.initial_guess(state)
    x = x + 1e-3 * rng.normal(size=x.size)
    analytic = stepper.jacobian(state, dt, x).toarray()
    fd = fd_jacobian(lambda z: stepper.residual(state, dt, z), x)
    assert analytic.shape[0] == analytic.shape[1]
    np.testing.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-6)


def test_trapezoidal_jacobian_matches_finite_differences(runner_factory, rng):
    runner, state = _soliton_start(runner_factory, scheme="Trapezoidal", N=5)
    stepper = TrapezoidalStepper(runner.constraints, runner.density)
    dt = 0.05
    z = np.concatenate([state.q.q + dt * state.v, state.lam]) + 1e-3 * rng.normal(size=3 * 5)
    analytic = stepper.jacobian(state, dt, z).toarray()
    fd = fd_jacobian(lambda w: stepper.residual(state, dt, w), z)
    np.testing.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("scheme", ["Trapezoidal", "Lobatto3"])
def test_constraints_hold_along_a_soliton_run(runner_factory, scheme):
    runner, state = _soliton_start(runner_factory, scheme=scheme)
    traj = lm_integrate(state, 0.05, 10, scheme, runner.constraints, runner.density)
    assert traj.termination_reason == "completed"
    assert np.all(traj.g_norms <= 1e-8)
    assert all(rec.r_norm <= 1e-8 for rec in traj.records)
    E = traj.energies
    assert np.max(np.abs(E - E[0])) < 1e-2 * E[0]


def test_initial_momenta_invert_to_the_initial_velocities(runner_factory):
    runner, state = _soliton_start(runner_factory, N=7)
    u, w = velocities_from_momenta(state.q, state.p, state.pi, runner.constraints)
    np.testing.assert_allclose(u, state.v, atol=1e-9)
    np.testing.assert_allclose(w, 0.0, atol=1e-9)


def test_scheme_validation(arclength, density):
    with pytest.raises(ValueError):
        make_lm_stepper("Gauss2", arclength, density)
    with pytest.raises(ValueError):
        LobattoStepper(get_tableau("Gauss2"), arclength, density)
    _, state = _vacuum()
    with pytest.raises(ValueError):
        lm_step_lobatto(state, 0.1, 4, arclength, density)


EXACT = NewtonOptions(tol_residual=1e-13)


PARABOLA = InitialProfile(
    a=lambda X: 4.0 * np.pi * (X / 25.0) ** 2,
    b=lambda X: np.zeros_like(X),
    aprime=lambda X: 8.0 * np.pi * X / 625.0,
)


def _parabola_at_rest(density, kind, N=7):
    """Convex field at rest: consecutive slopes differ, so M_N is regular."""
    mesh = MeshConfig(N=N, Xmax=25.0, yL=0.0, yR=4.0 * np.pi)
    c = ConstraintSet.uniform(mesh) if kind == "uniform" else ConstraintSet.arclength(mesh, 1.0)
    q = solve_initial_positions(PARABOLA, mesh, c, newton=EXACT)
    return c, initial_phase(q, VelocityState.zeros(N), "LM", density, c)


@pytest.mark.parametrize("kind", ["uniform", "arclength"])
@pytest.mark.parametrize("scheme", ["Lobatto2", "Lobatto3"])
def test_slack_variables_only_perturb_the_step_at_high_order(density, scheme, kind):
    c, state = _parabola_at_rest(density, kind)
    tab = get_tableau(scheme)
    gaps = []
    for dt in (0.1, 0.05):
        augmented = LobattoStepper(tab, c, density, EXACT).step(state, dt)
        plain = LobattoStepper(tab, c, density, EXACT, augmented=False).step(state, dt)
        np.testing.assert_allclose(augmented.r, 0.0, atol=1e-10)
        np.testing.assert_allclose(c.residual(plain.q), 0.0, atol=1e-10)
        gaps.append(np.max(np.abs(augmented.q.q - plain.q.q)))
    # both steps carry an O(dt³) local error; the slack terms enter beyond it
    assert gaps[1] <= 1e-11 or np.log2(gaps[0] / gaps[1]) >= 2.5


def test_two_stage_lobatto_and_trapezoidal_rule_differ_at_third_order(runner_factory):
    runner, state = _soliton_start(runner_factory, scheme="Lobatto2", N=11)
    c, density = runner.constraints, runner.density
    gaps = []
    for dt in (0.02, 0.01):
        lobatto = LobattoStepper(get_tableau("Lobatto2"), c, density, EXACT).step(state, dt)
        trapezoidal = TrapezoidalStepper(c, density, EXACT).step(state, dt)
        gaps.append(np.max(np.abs(lobatto.q.q - trapezoidal.q.q)))
    # equal for a constant mass matrix; M_N(q) varies, so the one-step gap is O(dt³)
    assert np.log2(gaps[0] / gaps[1]) >= 2.5
