"""Control-theoretic strategy: partitioned Runge-Kutta on the index-1 DAE.

The field values y and their momenta p are advanced by a partitioned
Runge-Kutta pair. The mesh is not a dynamical variable: at every internal
stage its position Q and velocity Q̇ are extra unknowns fixed by the mesh
equation g = 0 and its time derivative, and the endpoint mesh solves
g(y^{n+1}, X^{n+1}) = 0. All stages are coupled and solved in one Newton
iteration with an analytic sparse Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse

from ..base import MmviModule
from .constraints import ConstraintSet, constraint_norm
from .fieldtheory import DensitySpec
from .semidiscrete import (
    DofState,
    LagrangianDerivatives,
    assemble_mass_matrix,
    discrete_energy,
    interleave,
    lagrangian_derivatives,
)
from .solver import BandedMatrix, NewtonOptions, lu_banded_solve, newton_solve
from .tableaus import PartitionedTableau
from .trajectory import StepRecord, StepSink, Trajectory, drive


@dataclass(frozen=True)
class CtState:
    t: float
    q: DofState
    p: np.ndarray
    X_stage_history: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None


def velocities_from_momentum(
    q: DofState, p: np.ndarray, c: ConstraintSet, delta_min: Optional[float] = None
) -> np.ndarray:
    """Solve (M_N u)_y = p together with Dg(q) u = 0.

    The rows are interleaved per node (y-row of M, then row i of Dg), which
    keeps the system inside a (3, 3) band.
    """
    N = q.N
    M = assemble_mass_matrix(q, delta_min).tosparse()
    system = scipy.sparse.vstack([M[0::2], c.jacobian(q)]).tocsr()
    order = interleave(np.arange(N), N + np.arange(N)).astype(int)
    rhs = interleave(np.asarray(p, dtype=float), np.zeros(N))
    return lu_banded_solve(BandedMatrix.from_sparse(system[order], 3, 3), rhs)


@dataclass
class _Stage:
    q: DofState
    u: np.ndarray
    derivs: LagrangianDerivatives
    G: scipy.sparse.csr_matrix


class CtStepper(MmviModule):
    """One monolithic stage solve per step.

    Unknowns are stacked as (Ẏ, Ṗ, Q, Q̇) for all stages followed by the
    endpoint mesh X^{n+1}. The instance remembers the previous step's stage
    values and uses them, shifted by one step, as the next Newton guess.
    """

    def __init__(
        self,
        tab: PartitionedTableau,
        constraints: ConstraintSet,
        density: DensitySpec,
        newton: Optional[NewtonOptions] = None,
    ):
        super().__init__(newton)
        self.tab = tab
        self.constraints = constraints
        self.density = density
        self.mesh = constraints.mesh
        self._previous: Optional[Tuple[np.ndarray, np.ndarray]] = None
        self._cache_key: Optional[bytes] = None
        self._cache: List[_Stage] = []

    @property
    def N(self) -> int:
        return self.mesh.N

    # === Layout ===

    def _split(self, x: np.ndarray):
        s, N = self.tab.s, self.N
        blocks = x[: 4 * s * N].reshape(4, s, N)
        return blocks[0], blocks[1], blocks[2], blocks[3], x[4 * s * N :]

    def _positions(self, state: CtState, dt: float, Ydot: np.ndarray, Pdot: np.ndarray):
        y_n = state.q.y[1:-1]
        Y = y_n + dt * self.tab.a @ Ydot
        P = state.p + dt * self.tab.abar @ Pdot
        return Y, P

    def _stages(self, state: CtState, dt: float, x: np.ndarray) -> List[_Stage]:
        key = np.concatenate([[dt], state.q.y, state.q.X, state.p, x]).tobytes()
        if key == self._cache_key:
            return self._cache
        Ydot, Pdot, Q, Qdot, _ = self._split(x)
        Y, _ = self._positions(state, dt, Ydot, Pdot)
        stages = []
        for i in range(self.tab.s):
            qi = self.mesh.state(Y[i], Q[i])
            ui = interleave(Ydot[i], Qdot[i])
            derivs = lagrangian_derivatives(qi, ui, self.density, self.mesh.delta_min)
            stages.append(_Stage(q=qi, u=ui, derivs=derivs, G=self.constraints.jacobian(qi)))
        self._cache_key, self._cache = key, stages
        return stages

    def _endpoint(self, state: CtState, dt: float, x: np.ndarray) -> DofState:
        Ydot, _, _, _, X_end = self._split(x)
        return self.mesh.state(state.q.y[1:-1] + dt * self.tab.b @ Ydot, X_end)

    # === Residual and Jacobian ===

    def residual(self, state: CtState, dt: float, x: np.ndarray) -> np.ndarray:
        Ydot, Pdot, Q, Qdot, X_end = self._split(x)
        _, P = self._positions(state, dt, Ydot, Pdot)
        stages = self._stages(state, dt, x)
        s, N = self.tab.s, self.N
        out = np.empty((4, s, N))
        for i, st in enumerate(stages):
            out[0, i] = P[i] - st.derivs.du[0::2]
            out[1, i] = Pdot[i] - st.derivs.dq[0::2]
            out[2, i] = self.constraints.residual(st.q)
            out[3, i] = st.G @ st.u
        end = self.constraints.residual(self._endpoint(state, dt, x))
        return np.concatenate([out.ravel(), end])

    def jacobian(self, state: CtState, dt: float, x: np.ndarray) -> scipy.sparse.csc_matrix:
        s, N = self.tab.s, self.N
        a, abar, b = self.tab.a, self.tab.abar, self.tab.b
        stages = self._stages(state, dt, x)
        eye = scipy.sparse.identity(N, format="csr")
        # block rows E1, E2, E3, E4 per stage, then the endpoint; columns Ẏ, Ṗ, Q, Q̇ per stage, then X^{n+1}
        blocks = [[None] * (4 * s + 1) for _ in range(4 * s + 1)]

        def add(row, col, block):
            blocks[row][col] = block if blocks[row][col] is None else blocks[row][col] + block

        Ydot_col = lambda j: j  # noqa: E731
        Pdot_col = lambda j: s + j  # noqa: E731
        Q_col = lambda j: 2 * s + j  # noqa: E731
        Qdot_col = lambda j: 3 * s + j  # noqa: E731

        for i, st in enumerate(stages):
            d = st.derivs
            duq = d.duq
            Kdot = self.constraints.jacobian_dot(st.q, st.u)
            e1, e2, e3, e4 = i, s + i, 2 * s + i, 3 * s + i
            for j in range(s):
                if a[i, j] != 0.0:
                    add(e1, Ydot_col(j), -dt * a[i, j] * duq[0::2, 0::2])
                    add(e2, Ydot_col(j), -dt * a[i, j] * d.dqq[0::2, 0::2])
                    add(e3, Ydot_col(j), dt * a[i, j] * st.G[:, 0::2])
                    add(e4, Ydot_col(j), dt * a[i, j] * Kdot[:, 0::2])
                if abar[i, j] != 0.0:
                    add(e1, Pdot_col(j), dt * abar[i, j] * eye)
            add(e1, Ydot_col(i), -d.duu[0::2, 0::2])
            add(e1, Q_col(i), -duq[0::2, 1::2])
            add(e1, Qdot_col(i), -d.duu[0::2, 1::2])
            add(e2, Ydot_col(i), -d.dqu[0::2, 0::2])
            add(e2, Pdot_col(i), eye)
            add(e2, Q_col(i), -d.dqq[0::2, 1::2])
            add(e2, Qdot_col(i), -d.dqu[0::2, 1::2])
            add(e3, Q_col(i), st.G[:, 1::2])
            add(e4, Ydot_col(i), st.G[:, 0::2])
            add(e4, Q_col(i), Kdot[:, 1::2])
            add(e4, Qdot_col(i), st.G[:, 1::2])

        G_end = self.constraints.jacobian(self._endpoint(state, dt, x))
        for j in range(s):
            if b[j] != 0.0:
                add(4 * s, Ydot_col(j), dt * b[j] * G_end[:, 0::2])
        add(4 * s, 4 * s, G_end[:, 1::2])

        return scipy.sparse.bmat(blocks, format="csc")

    # === Stepping ===

    def predictor(self, state: CtState, dt: float) -> np.ndarray:
        """Guess built from the velocities at t_n: Ẏ = ẏ, Ṗ = ∂L/∂y, Q = X + c·dt·Ẋ."""
        s = self.tab.s
        X_n = state.q.X[1:-1]
        u = state.u
        if u is None:
            u = velocities_from_momentum(state.q, state.p, self.constraints, self.mesh.delta_min)
        derivs = lagrangian_derivatives(state.q, u, self.density, self.mesh.delta_min)
        ydot, Xdot = u[0::2], u[1::2]
        Ydot = np.tile(ydot, (s, 1))
        Pdot = np.tile(derivs.dq[0::2], (s, 1))
        Q = X_n + dt * self.tab.c[:, None] * Xdot
        Qdot = np.tile(Xdot, (s, 1))
        return np.concatenate([Ydot.ravel(), Pdot.ravel(), Q.ravel(), Qdot.ravel(), X_n + dt * Xdot])

    def initial_guess(self, state: CtState, dt: float) -> np.ndarray:
        if self._previous is None:
            return self.predictor(state, dt)
        x_prev, X_prev = self._previous
        Ydot, Pdot, Q, Qdot, X_end = self._split(x_prev)
        shift = state.q.X[1:-1] - X_prev
        return np.concatenate([Ydot.ravel(), Pdot.ravel(), (Q + shift).ravel(), Qdot.ravel(), X_end + shift])

    def admissible(self, x: np.ndarray) -> bool:
        _, _, Q, _, X_end = self._split(x)
        return all(self.constraints.admissible_X(row) for row in Q) and self.constraints.admissible_X(X_end)

    def step(self, state: CtState, dt: float) -> CtState:
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        result = newton_solve(
            lambda x: self.residual(state, dt, x),
            lambda x: self.jacobian(state, dt, x),
            self.initial_guess(state, dt),
            self.newton,
            admissible=self.admissible,
            label=f"ct[{self.tab.name}] t={state.t:.6g}",
        )
        x = result.x
        _, Pdot, Q, _, _ = self._split(x)
        q_new = self._endpoint(state, dt, x)
        p_new = state.p + dt * self.tab.bbar @ Pdot
        u_new = velocities_from_momentum(q_new, p_new, self.constraints, self.mesh.delta_min)
        self._previous = (x.copy(), state.q.X[1:-1].copy())
        self.logger.debug("t=%.6g: %d Newton iterations, residual %.3e", state.t + dt, result.iterations, result.residual)
        return CtState(t=state.t + dt, q=q_new, p=p_new, X_stage_history=Q.copy(), u=u_new)

    @property
    def last_mesh_stages(self) -> Tuple[np.ndarray, np.ndarray]:
        """(Q, Q̇) of the last accepted step."""
        if self._previous is None:
            raise RuntimeError("no step has been taken yet")
        _, _, Q, Qdot, _ = self._split(self._previous[0])
        return Q.copy(), Qdot.copy()

    def frozen_mesh_step(self, state: CtState, dt: float, Q: np.ndarray, Qdot: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Unconstrained partitioned RK step with the mesh stages given as data.

        Only the (Ẏ, Ṗ) stage equations are solved; returns (y^{n+1}, p^{n+1}).
        """
        s, N = self.tab.s, self.N
        mesh_part = np.concatenate([np.asarray(Q, dtype=float).ravel(), np.asarray(Qdot, dtype=float).ravel()])
        X_end = state.q.X[1:-1]
        rows = slice(0, 2 * s * N)

        def expand(z):
            return np.concatenate([z, mesh_part, X_end])

        result = newton_solve(
            lambda z: self.residual(state, dt, expand(z))[rows],
            lambda z: self.jacobian(state, dt, expand(z))[rows, rows].tocsc(),
            self.predictor(state, dt)[rows],
            self.newton,
            label="frozen-mesh prk",
        )
        Ydot, Pdot = result.x.reshape(2, s, N)
        y_new = state.q.y[1:-1] + dt * self.tab.b @ Ydot
        p_new = state.p + dt * self.tab.bbar @ Pdot
        return y_new, p_new


def ct_step(
    state: CtState,
    dt: float,
    tab: PartitionedTableau,
    c: ConstraintSet,
    density: DensitySpec,
    newton: Optional[NewtonOptions] = None,
) -> CtState:
    return CtStepper(tab, c, density, newton).step(state, dt)


def ct_record(state: CtState, c: ConstraintSet, density: DensitySpec) -> StepRecord:
    u = state.u if state.u is not None else velocities_from_momentum(state.q, state.p, c, c.mesh.delta_min)
    return StepRecord(
        t=state.t,
        y=state.q.y.copy(),
        X=state.q.X.copy(),
        energy=discrete_energy(state.q, u, density, c.mesh.delta_min),
        g_norm=constraint_norm(state.q, c),
        p=np.asarray(state.p, dtype=float).copy(),
    )


def ct_integrate(
    state0: CtState,
    dt: float,
    nsteps: int,
    tab: PartitionedTableau,
    c: ConstraintSet,
    density: DensitySpec,
    sink: Optional[StepSink] = None,
    *,
    newton: Optional[NewtonOptions] = None,
    record_every: int = 1,
) -> Trajectory:
    """Advance ``nsteps`` steps, emitting (t, q, p, E_N, ‖g‖∞) records.

    A failing step raises its :class:`MmviError` annotated with the step
    index and the partial trajectory.
    """
    stepper = CtStepper(tab, c, density, newton)
    stepper.logger.info("CT run: %s, N=%d, dt=%g, %d steps", tab.name, c.N, dt, nsteps)
    return drive(
        lambda state: stepper.step(state, dt),
        lambda state: ct_record(state, c, density),
        state0,
        nsteps,
        dt,
        sink=sink,
        record_every=record_every,
        logger=stepper.logger,
    )

