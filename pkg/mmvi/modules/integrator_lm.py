"""Lagrange-multiplier strategy: the mesh as a holonomically constrained DOF.

Two schemes are provided. The trapezoidal scheme is the constrained discrete
Euler-Lagrange map of the trapezoidal discrete Lagrangian (SHAKE-like in
the constant-mass limit). The Lobatto IIIA-IIIB schemes act on the
slack-augmented Lagrangian

    L^A(q, r, u, w) = L_N(q, u) + wᵀ Dg(q) u,    with g(q) = 0 and r = 0,

whose bordered mass matrix stays invertible where M_N alone is singular.
Momenta (p, π) are the stored covariables; velocities are recovered
through the bordered system.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse

from ..base import MmviError, MmviModule, SingularJacobian, SingularKkt, SingularMatrix
from .constraints import ConstraintSet, constraint_norm
from .fieldtheory import DensitySpec
from .semidiscrete import (
    DofState,
    LagrangianDerivatives,
    assemble_mass_matrix,
    discrete_energy,
    force_f,
    lagrangian_derivatives,
)
from .solver import BandedMatrix, NewtonOptions, lu_banded_solve, newton_solve, norm_inf
from .tableaus import PartitionedTableau, get_tableau
from .trajectory import StepRecord, StepSink, Trajectory, drive

LmScheme = Literal["Trapezoidal", "Lobatto2", "Lobatto3"]


@dataclass(frozen=True)
class LmState:
    """Phase state of the constrained system.

    ``p`` is ∂L^A/∂u = M_N u + Dgᵀw and ``pi`` is ∂L^A/∂w = Dg u; on the
    exact solution r = w = μ = π = 0.
    """

    t: float
    q: DofState
    v: np.ndarray
    p: np.ndarray
    r: np.ndarray
    w: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    pi: np.ndarray


# === Bordered (KKT) systems ===


def _node_order(N: int) -> np.ndarray:
    """Permutation (y_i, X_i, λ_i) per node of the stacked [u; λ] vector."""
    order = np.empty(3 * N, dtype=int)
    order[0::3] = 2 * np.arange(N)
    order[1::3] = 2 * np.arange(N) + 1
    order[2::3] = 2 * N + np.arange(N)
    return order


@dataclass
class KktSystem:
    """[[M, Dgᵀ], [Dg, 0]] (x; λ) = (rhs_f; rhs_h)."""

    M: BandedMatrix
    Dg: scipy.sparse.csr_matrix
    rhs_f: np.ndarray
    rhs_h: np.ndarray

    @property
    def N(self) -> int:
        return self.Dg.shape[0]

    def bordered(self) -> BandedMatrix:
        """The bordered matrix with unknowns interleaved per node, band (5, 5)."""
        stacked = scipy.sparse.bmat([[self.M.tosparse(), self.Dg.T], [self.Dg, None]], format="csr")
        order = _node_order(self.N)
        return BandedMatrix.from_sparse(stacked[order][:, order], 5, 5)

    def solve(self) -> Tuple[np.ndarray, np.ndarray]:
        N = self.N
        order = _node_order(N)
        rhs = np.concatenate([self.rhs_f, self.rhs_h])[order]
        try:
            z = lu_banded_solve(self.bordered(), rhs)
        except SingularMatrix as exc:
            raise SingularKkt(f"bordered mass/constraint matrix is singular: {exc}") from exc
        out = np.empty_like(z)
        out[order] = z
        return out[: 2 * N], out[2 * N :]

    def smallest_singular_value(self) -> float:
        return float(scipy.linalg.svdvals(self.bordered().todense()).min())


def kkt_at(q: DofState, c: ConstraintSet, rhs_f: np.ndarray, rhs_h: np.ndarray, delta_min=None) -> KktSystem:
    return KktSystem(M=assemble_mass_matrix(q, delta_min), Dg=c.jacobian(q), rhs_f=rhs_f, rhs_h=rhs_h)


def consistent_accel_and_lambda(
    q: DofState, u: np.ndarray, c: ConstraintSet, density: DensitySpec, delta_min: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Accelerations and multipliers of the index-3 system at (q, u).

    Solves M u̇ + Dgᵀλ = f(q, u) and Dg u̇ = h(q, u).
    """
    f = force_f(q, u, density, delta_min)
    h = c.hessian_contraction(q, u)
    return kkt_at(q, c, f, h, delta_min).solve()


def velocities_from_momenta(
    q: DofState, p: np.ndarray, pi: np.ndarray, c: ConstraintSet, delta_min: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Invert the augmented Legendre transform: (u, w) from (p, π)."""
    return kkt_at(q, c, np.asarray(p, dtype=float), np.asarray(pi, dtype=float), delta_min).solve()


# === Trapezoidal scheme ===


class TrapezoidalStepper(MmviModule):
    """Constrained DEL map of L_d(q0, q1) = dt/2 [L_N(q0, v) + L_N(q1, v)].

    Unknowns (q1, λ):  p0 + D1 L_d(q0, q1) − dt Dg(q0)ᵀλ = 0,  g(q1) = 0.
    """

    def __init__(self, constraints: ConstraintSet, density: DensitySpec, newton: Optional[NewtonOptions] = None):
        super().__init__(newton)
        self.constraints = constraints
        self.density = density
        self.mesh = constraints.mesh

    def _pair(self, state: LmState, dt: float, q1: np.ndarray):
        v = (q1 - state.q.q) / dt
        s1 = self.mesh.state_from_q(q1)
        delta_min = self.mesh.delta_min
        D0 = lagrangian_derivatives(state.q, v, self.density, delta_min)
        D1 = lagrangian_derivatives(s1, v, self.density, delta_min)
        return s1, D0, D1

    def residual(self, state: LmState, dt: float, z: np.ndarray) -> np.ndarray:
        n = 2 * self.mesh.N
        q1, lam = z[:n], z[n:]
        s1, D0, D1 = self._pair(state, dt, q1)
        G0 = self.constraints.jacobian(state.q)
        Ea = state.p + 0.5 * dt * D0.dq - 0.5 * (D0.du + D1.du) - dt * (G0.T @ lam)
        return np.concatenate([Ea, self.constraints.residual(s1)])

    def jacobian(self, state: LmState, dt: float, z: np.ndarray) -> scipy.sparse.csc_matrix:
        n = 2 * self.mesh.N
        s1, D0, D1 = self._pair(state, dt, z[:n])
        G0 = self.constraints.jacobian(state.q)
        G1 = self.constraints.jacobian(s1)
        Jqq = 0.5 * D0.dqu - (D0.duu + D1.duu) / (2.0 * dt) - 0.5 * D1.duq
        return scipy.sparse.bmat([[Jqq, -dt * G0.T], [G1, None]], format="csc")

    def step(self, state: LmState, dt: float) -> LmState:
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        n = 2 * self.mesh.N
        z0 = np.concatenate([state.q.q + dt * state.v, state.lam])
        try:
            result = newton_solve(
                lambda z: self.residual(state, dt, z),
                lambda z: self.jacobian(state, dt, z),
                z0,
                self.newton,
                admissible=lambda z: self.constraints.admissible_X(z[1:n:2]),
                label=f"lm[Trapezoidal] t={state.t:.6g}",
            )
        except SingularJacobian as exc:
            raise SingularKkt(str(exc), iterate=exc.iterate, residual=exc.residual) from exc
        q1, lam = result.x[:n], result.x[n:]
        s1, D0, D1 = self._pair(state, dt, q1)
        p1 = 0.5 * dt * D1.dq + 0.5 * (D0.du + D1.du)
        N = self.mesh.N
        v1, _ = velocities_from_momenta(s1, p1, np.zeros(N), self.constraints, self.mesh.delta_min)
        self.logger.debug("t=%.6g: %d Newton iterations", state.t + dt, result.iterations)
        zeros = np.zeros(N)
        return LmState(t=state.t + dt, q=s1, v=v1, p=p1, r=zeros, w=zeros.copy(), lam=lam, mu=zeros.copy(), pi=zeros.copy())


# === Lobatto IIIA-IIIB on the augmented Lagrangian ===


@dataclass
class _LobattoStage:
    q: DofState
    U: np.ndarray
    W: np.ndarray
    lam: np.ndarray
    derivs: LagrangianDerivatives
    G: scipy.sparse.csr_matrix
    Phi: np.ndarray
    Psi: np.ndarray


class LobattoStepper(MmviModule):
    """Constrained Lobatto IIIA-IIIB step.

    Per stage j the unknowns are the velocities U_j, slack velocities W_j
    and multipliers λ_j, μ_j; the endpoint velocity u_e closes the system.
    Positions use ``a``, momenta ``abar``. The mesh and slack constraints
    hold at stages 2..s (stage 1 is the previous endpoint) and the hidden
    constraint Dg(q_e) u_e = 0 at the endpoint.

    With ``augmented=False`` the slack unknowns are dropped and the plain
    index-3 system is integrated, which needs M_N itself to be invertible.
    """

    def __init__(
        self,
        tab: PartitionedTableau,
        constraints: ConstraintSet,
        density: DensitySpec,
        newton: Optional[NewtonOptions] = None,
        *,
        augmented: bool = True,
    ):
        super().__init__(newton)
        if not tab.explicit_first_stage:
            raise ValueError(f"{tab.name} is not a Lobatto pair")
        self.tab = tab
        self.constraints = constraints
        self.density = density
        self.mesh = constraints.mesh
        self.augmented = augmented
        self._previous: Optional[np.ndarray] = None
        self._cache_key: Optional[bytes] = None
        self._cache = None

    @property
    def N(self) -> int:
        return self.mesh.N

    def _split(self, x: np.ndarray):
        s, N = self.tab.s, self.N
        sizes = [2 * s * N, s * N if self.augmented else 0, s * N, s * N if self.augmented else 0, 2 * N]
        U, W, Lam, Mu, u_e = np.split(x, np.cumsum(sizes)[:-1])
        if not self.augmented:
            W, Mu = np.zeros(s * N), np.zeros(s * N)
        return U.reshape(s, 2 * N), W.reshape(s, N), Lam.reshape(s, N), Mu.reshape(s, N), u_e

    def _evaluate(self, state: LmState, dt: float, x: np.ndarray):
        key = np.concatenate([[dt], state.q.y, state.q.X, state.p, state.r, state.pi, x]).tobytes()
        if key == self._cache_key:
            return self._cache
        c, tab = self.constraints, self.tab
        U, W, Lam, _, u_e = self._split(x)
        Q = state.q.q + dt * tab.a @ U
        stages: List[_LobattoStage] = []
        for i in range(tab.s):
            qi = self.mesh.state_from_q(Q[i])
            derivs = lagrangian_derivatives(qi, U[i], self.density, self.mesh.delta_min)
            G = c.jacobian(qi)
            Phi = derivs.dq - G.T @ Lam[i]
            Psi = derivs.du.copy()
            if self.augmented:
                Phi += c.weighted_hessian(qi, W[i]) @ U[i]
                Psi += G.T @ W[i]
            stages.append(_LobattoStage(q=qi, U=U[i], W=W[i], lam=Lam[i], derivs=derivs, G=G, Phi=Phi, Psi=Psi))
        q_e = self.mesh.state_from_q(state.q.q + dt * tab.b @ U)
        end = (q_e, lagrangian_derivatives(q_e, u_e, self.density, self.mesh.delta_min), c.jacobian(q_e))
        self._cache_key, self._cache = key, (stages, end)
        return stages, end

    def residual(self, state: LmState, dt: float, x: np.ndarray) -> np.ndarray:
        tab, c = self.tab, self.constraints
        _, W, _, Mu, u_e = self._split(x)
        stages, (q_e, D_e, G_e) = self._evaluate(state, dt, x)
        Phi = np.array([st.Phi for st in stages])
        Psi = np.array([st.Psi for st in stages])
        parts = [(state.p + dt * tab.abar @ Phi - Psi).ravel()]
        if self.augmented:
            Theta = np.array([st.G @ st.U for st in stages])
            parts.append((state.pi - dt * tab.abar @ Mu - Theta).ravel())
        parts.append(np.concatenate([c.residual(st.q) for st in stages[1:]]))
        if self.augmented:
            R = state.r + dt * tab.a @ W
            parts.append(R[1:].ravel())
        parts.append(state.p + dt * tab.bbar @ Phi - D_e.du)
        if self.augmented:
            parts.append(state.pi - dt * tab.bbar @ Mu)
        parts.append(G_e @ u_e)
        return np.concatenate(parts)

    def jacobian(self, state: LmState, dt: float, x: np.ndarray) -> scipy.sparse.csc_matrix:
        tab, c, N = self.tab, self.constraints, self.N
        s = tab.s
        _, _, _, _, u_e = self._split(x)
        stages, (q_e, D_e, G_e) = self._evaluate(state, dt, x)
        I2 = scipy.sparse.identity(2 * N, format="csr")
        I1 = scipy.sparse.identity(N, format="csr")
        A2 = dt * scipy.sparse.kron(tab.a, I2, format="csr")
        Abar2 = dt * scipy.sparse.kron(tab.abar, I2, format="csr")
        AN = dt * scipy.sparse.kron(tab.a, I1, format="csr")
        AbarN = dt * scipy.sparse.kron(tab.abar, I1, format="csr")
        b2 = dt * scipy.sparse.kron(tab.b[None, :], I2, format="csr")
        bbar2 = dt * scipy.sparse.kron(tab.bbar[None, :], I2, format="csr")
        bbarN = dt * scipy.sparse.kron(tab.bbar[None, :], I1, format="csr")
        later = scipy.sparse.kron(scipy.sparse.identity(s, format="csr")[1:], I1, format="csr")

        diag = lambda blocks: scipy.sparse.block_diag(blocks, format="csr")  # noqa: E731
        H_lam = [c.weighted_hessian(st.q, st.lam) for st in stages]
        H_w = [c.weighted_hessian(st.q, st.W) for st in stages]
        Kdot = [c.jacobian_dot(st.q, st.U) for st in stages]

        PhiQ = diag([st.derivs.dqq - H for st, H in zip(stages, H_lam)])
        PhiU = diag([st.derivs.dqu + H for st, H in zip(stages, H_w)])
        PhiL = diag([-st.G.T for st in stages])
        PsiQ = diag([st.derivs.duq + H for st, H in zip(stages, H_w)])
        PsiU = diag([st.derivs.duu for st in stages])
        GQ = diag([st.G for st in stages])
        dPhi_dU = PhiQ @ A2 + PhiU

        E1 = [Abar2 @ dPhi_dU - (PsiQ @ A2 + PsiU)]
        E3 = [later @ GQ @ A2]
        E5 = [bbar2 @ dPhi_dU - D_e.duq @ b2]
        E7 = [c.jacobian_dot(q_e, u_e) @ b2]
        if self.augmented:
            PhiW = diag([K.T for K in Kdot])
            PsiW = diag([st.G.T for st in stages])
            ThQ, ThU = diag(Kdot), GQ
            E1 += [Abar2 @ PhiW - PsiW, Abar2 @ PhiL, None, None]
            E2 = [-(ThQ @ A2 + ThU), None, None, -AbarN, None]
            E3 += [None, None, None, None]
            E4 = [None, later @ AN, None, None, None]
            E5 += [bbar2 @ PhiW, bbar2 @ PhiL, None, -D_e.duu]
            E6 = [None, None, None, -bbarN, None]
            E7 += [None, None, None, G_e]
            rows = [E1, E2, E3, E4, E5, E6, E7]
        else:
            E1 += [Abar2 @ PhiL, None]
            E3 += [None, None]
            E5 += [bbar2 @ PhiL, -D_e.duu]
            E7 += [None, G_e]
            rows = [E1, E3, E5, E7]
        return scipy.sparse.bmat(rows, format="csc")

    def initial_guess(self, state: LmState) -> np.ndarray:
        if self._previous is not None:
            return self._previous.copy()
        s, N = self.tab.s, self.N
        parts = [np.tile(state.v, s)]
        if self.augmented:
            parts.append(np.tile(state.w, s))
        parts.append(np.tile(state.lam, s))
        if self.augmented:
            parts.append(np.zeros(s * N))
        parts.append(state.v)
        return np.concatenate(parts)

    def admissible(self, state: LmState, dt: float, x: np.ndarray) -> bool:
        U = self._split(x)[0]
        Q = state.q.q + dt * self.tab.a @ U
        return all(self.constraints.admissible_X(row[1::2]) for row in Q)

    def step(self, state: LmState, dt: float) -> LmState:
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        tab = self.tab
        try:
            result = newton_solve(
                lambda x: self.residual(state, dt, x),
                lambda x: self.jacobian(state, dt, x),
                self.initial_guess(state),
                self.newton,
                admissible=lambda x: self.admissible(state, dt, x),
                label=f"lm[{tab.name}] t={state.t:.6g}",
            )
        except SingularJacobian as exc:
            raise SingularKkt(str(exc), iterate=exc.iterate, residual=exc.residual) from exc
        x = result.x
        U, W, Lam, Mu, u_e = self._split(x)
        stages, (q_e, _, _) = self._evaluate(state, dt, x)
        Phi = np.array([st.Phi for st in stages])
        self._previous = x.copy()
        self.logger.debug("t=%.6g: %d Newton iterations", state.t + dt, result.iterations)
        return LmState(
            t=state.t + dt,
            q=q_e,
            v=u_e.copy(),
            p=state.p + dt * tab.bbar @ Phi,
            r=state.r + dt * tab.b @ W,
            w=np.zeros(self.N),
            lam=tab.b @ Lam,
            mu=tab.b @ Mu,
            pi=state.pi - dt * tab.bbar @ Mu,
        )


# === Entry points ===


def lm_step_trapezoidal(
    state: LmState, dt: float, c: ConstraintSet, density: DensitySpec, newton: Optional[NewtonOptions] = None
) -> LmState:
    return TrapezoidalStepper(c, density, newton).step(state, dt)


def lm_step_lobatto(
    state: LmState,
    dt: float,
    s: int,
    c: ConstraintSet,
    density: DensitySpec,
    newton: Optional[NewtonOptions] = None,
) -> LmState:
    if s not in (2, 3):
        raise ValueError(f"Lobatto stage count must be 2 or 3, got {s}")
    return LobattoStepper(get_tableau(f"Lobatto{s}"), c, density, newton).step(state, dt)


def make_lm_stepper(scheme: str, c: ConstraintSet, density: DensitySpec, newton: Optional[NewtonOptions] = None):
    if scheme == "Trapezoidal":
        return TrapezoidalStepper(c, density, newton)
    if scheme in ("Lobatto2", "Lobatto3"):
        return LobattoStepper(get_tableau(scheme), c, density, newton)
    raise ValueError(f"scheme {scheme!r} is not available for the Lagrange-multiplier strategy")


def lm_record(state: LmState, c: ConstraintSet, density: DensitySpec) -> StepRecord:
    return StepRecord(
        t=state.t,
        y=state.q.y.copy(),
        X=state.q.X.copy(),
        energy=discrete_energy(state.q, state.v, density, c.mesh.delta_min),
        g_norm=constraint_norm(state.q, c),
        p=np.asarray(state.p, dtype=float).copy(),
        lambda_norm=norm_inf(state.lam),
        r_norm=norm_inf(state.r),
        mu_norm=norm_inf(state.mu),
    )


def lm_integrate(
    state0: LmState,
    dt: float,
    nsteps: int,
    scheme: str,
    c: ConstraintSet,
    density: DensitySpec,
    sink: Optional[StepSink] = None,
    *,
    newton: Optional[NewtonOptions] = None,
    record_every: int = 1,
    kkt_monitor_every: int = 0,
) -> Trajectory:
    """Drive an LM stepper; records carry ‖λ‖∞, ‖r‖∞ and ‖μ‖∞ besides E_N and ‖g‖∞.

    With ``kkt_monitor_every > 0`` the smallest singular value of the
    bordered matrix is logged at that cadence; the minimum seen is stored in
    the trajectory metadata as ``kkt_sigma_min``.
    """
    stepper = make_lm_stepper(scheme, c, density, newton)
    stepper.logger.info("LM run: %s, N=%d, dt=%g, %d steps", scheme, c.N, dt, nsteps)
    taken = 0
    sigma_min: Optional[float] = None

    def step(state: LmState) -> LmState:
        nonlocal taken, sigma_min
        new = stepper.step(state, dt)
        taken += 1
        if kkt_monitor_every and taken % kkt_monitor_every == 0:
            sigma = kkt_at(new.q, c, new.p, new.pi, c.mesh.delta_min).smallest_singular_value()
            stepper.logger.info("t=%.6g: smallest bordered singular value %.3e", new.t, sigma)
            sigma_min = sigma if sigma_min is None else min(sigma_min, sigma)
        return new

    try:
        trajectory = drive(
            step,
            lambda state: lm_record(state, c, density),
            state0,
            nsteps,
            dt,
            sink=sink,
            record_every=record_every,
            logger=stepper.logger,
        )
    except MmviError as exc:
        if exc.trajectory is not None:
            exc.trajectory.metadata["kkt_sigma_min"] = sigma_min
        raise
    trajectory.metadata["kkt_sigma_min"] = sigma_min
    return trajectory
