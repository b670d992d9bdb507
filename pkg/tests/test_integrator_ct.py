from __future__ import annotations

import numpy as np
import pytest

from mmvi.modules.constraints import ConstraintSet
from mmvi.modules.integrator_ct import CtState, CtStepper, ct_integrate, ct_step, velocities_from_momentum
from mmvi.modules.semidiscrete import MeshConfig, assemble_mass_matrix
from mmvi.modules.solver import NewtonOptions, fd_jacobian
from mmvi.modules.tableaus import get_tableau

TIGHT = NewtonOptions(tol_residual=1e-12)
EXACT = NewtonOptions(tol_residual=1e-13)


def _soliton_start(runner_factory, scheme="Gauss2", N=11, **kwargs):
    runner = runner_factory(strategy="CT", scheme=scheme, N=N, **kwargs)
    return runner, runner.initial_state()


def test_vacuum_is_stationary(density):
    mesh = MeshConfig(N=5, Xmax=25.0)
    c = ConstraintSet.arclength(mesh, 2.5)
    q = mesh.state(np.zeros(5), mesh.uniform_X()[1:-1])
    state = CtState(t=0.0, q=q, p=np.zeros(5), u=np.zeros(10))
    traj = ct_integrate(state, 0.1, 5, get_tableau("Gauss2"), c, density)
    assert len(traj) == 6
    for rec in traj.records:
        np.testing.assert_allclose(rec.y, 0.0, atol=1e-12)
        np.testing.assert_allclose(rec.X, mesh.uniform_X(), atol=1e-12)
        assert rec.energy == pytest.approx(0.0, abs=1e-12)
    assert traj.final.t == pytest.approx(0.5)


def test_velocities_recover_the_momentum(runner_factory):
    runner, state = _soliton_start(runner_factory)
    u = velocities_from_momentum(state.q, state.p, runner.constraints)
    np.testing.assert_allclose((assemble_mass_matrix(state.q) @ u)[0::2], state.p, atol=1e-10)
    np.testing.assert_allclose(runner.constraints.jacobian(state.q) @ u, 0.0, atol=1e-10)
    np.testing.assert_allclose(u, state.u, atol=1e-9)


@pytest.mark.parametrize("scheme", ["Gauss2", "Lobatto3"])
def test_stage_jacobian_matches_finite_differences(runner_factory, rng, scheme):
    runner, state = _soliton_start(runner_factory, scheme=scheme, N=7)
    stepper = CtStepper(get_tableau(scheme), runner.constraints, runner.density)
    dt = 0.05
    x = stepper.predictor(state, dt)
    x = x + 1e-3 * rng.normal(size=x.size)
    analytic = stepper.jacobian(state, dt, x).toarray()
    fd = fd_jacobian(lambda z: stepper.residual(state, dt, z), x)
    np.testing.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-6)


def test_frozen_mesh_step_reproduces_the_constrained_step(runner_factory):
    runner, state = _soliton_start(runner_factory, N=15)
    stepper = CtStepper(get_tableau("Gauss2"), runner.constraints, runner.density, EXACT)
    for _ in range(20):
        new_state = stepper.step(state, 0.01)
        Q, Qdot = stepper.last_mesh_stages
        y_frozen, p_frozen = stepper.frozen_mesh_step(state, 0.01, Q, Qdot)
        np.testing.assert_allclose(y_frozen, new_state.q.y[1:-1], atol=1e-12)
        np.testing.assert_allclose(p_frozen, new_state.p, atol=1e-12)
        state = new_state


def test_constraint_and_energy_along_a_soliton_run(runner_factory):
    runner, state = _soliton_start(runner_factory, N=11)
    traj = ct_integrate(state, 0.05, 10, get_tableau("Gauss2"), runner.constraints, runner.density)
    assert traj.termination_reason == "completed"
    assert np.all(traj.g_norms <= 1e-8)
    E = traj.energies
    assert np.max(np.abs(E - E[0])) < 1e-2 * E[0]
    assert all(np.all(np.diff(rec.X) > 0) for rec in traj.records)


def test_stage_mesh_history_is_kept(runner_factory):
    runner, state = _soliton_start(runner_factory, N=7)
    new_state = ct_step(state, 0.02, get_tableau("Gauss2"), runner.constraints, runner.density)
    assert new_state.X_stage_history.shape == (2, 7)
    assert new_state.t == pytest.approx(0.02)


def test_last_mesh_stages_needs_a_step(runner_factory):
    runner, _ = _soliton_start(runner_factory, N=5)
    stepper = CtStepper(get_tableau("Gauss1"), runner.constraints, runner.density)
    with pytest.raises(RuntimeError):
        stepper.last_mesh_stages


def test_step_rejects_non_positive_dt(runner_factory):
    runner, state = _soliton_start(runner_factory, N=5)
    stepper = CtStepper(get_tableau("Gauss1"), runner.constraints, runner.density)
    with pytest.raises(ValueError):
        stepper.step(state, 0.0)


@pytest.mark.parametrize("scheme", ["Gauss1", "Gauss2"])
def test_gauss_steps_are_time_reversible(runner_factory, scheme):
    runner, start = _soliton_start(runner_factory, scheme=scheme, N=11, newton=TIGHT)
    tab = get_tableau(scheme)
    forward = CtStepper(tab, runner.constraints, runner.density, TIGHT).step(start, 0.02)
    flipped = CtState(t=forward.t, q=forward.q, p=-forward.p, u=-forward.u)
    back = CtStepper(tab, runner.constraints, runner.density, TIGHT).step(flipped, 0.02)
    np.testing.assert_allclose(back.q.y, start.q.y, atol=1e-9)
    np.testing.assert_allclose(back.q.X, start.q.X, atol=1e-9)
    np.testing.assert_allclose(back.p, -start.p, atol=1e-9)
