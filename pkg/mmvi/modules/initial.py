"""Consistent initial data: positions by homotopy in alpha, then velocities and momenta."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Literal, Optional, Union

import numpy as np
import scipy.sparse

from ..base import MmviModule, NoConvergence
from .constraints import ConstraintSet
from .fieldtheory import DensitySpec
from .integrator_ct import CtState
from .integrator_lm import LmState, consistent_accel_and_lambda
from .semidiscrete import DofState, MeshConfig, VelocityState, assemble_mass_matrix, interleave
from .solver import BandedMatrix, NewtonOptions, lu_banded_solve, newton_solve

Strategy = Literal["CT", "LM", "UniformMesh"]
Profile = Callable[[np.ndarray], np.ndarray]

FD_STEP = 1e-6


@dataclass(frozen=True)
class InitialProfile:
    """φ(X, 0) = a(X), φ_t(X, 0) = b(X); ``aprime`` falls back to a centered difference."""

    a: Profile
    b: Profile
    aprime: Optional[Profile] = None

    def slope(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.aprime is not None:
            return np.asarray(self.aprime(X), dtype=float)
        return (np.asarray(self.a(X + FD_STEP)) - np.asarray(self.a(X - FD_STEP))) / (2.0 * FD_STEP)


def _interleaved_system(top_diag: np.ndarray, top_X: np.ndarray, Dg: scipy.sparse.csr_matrix) -> BandedMatrix:
    """Rows 2i: top_diag·(y_i) + top_X·(X_i); rows 2i+1: row i of Dg."""
    N = Dg.shape[0]
    r = 2 * np.arange(N)
    top = scipy.sparse.coo_matrix(
        (np.concatenate([top_diag, top_X]), (np.concatenate([r, r]), np.concatenate([r, r + 1]))), shape=(2 * N, 2 * N)
    )
    bottom = scipy.sparse.coo_matrix(Dg)
    rows = np.concatenate([top.row, 2 * bottom.row + 1])
    cols = np.concatenate([top.col, bottom.col])
    vals = np.concatenate([top.data, bottom.data])
    return BandedMatrix.from_sparse(scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(2 * N, 2 * N)), 3, 3)


class InitialConditionBuilder(MmviModule):
    """Solves y_i = a(X_i), g_i = 0 by continuation α_k = (k/d)·α from the uniform mesh."""

    def __init__(self, profile: InitialProfile, constraints: ConstraintSet, newton: Optional[NewtonOptions] = None):
        super().__init__(newton)
        self.profile = profile
        self.constraints = constraints
        self.mesh: MeshConfig = constraints.mesh

    def positions(self, d: int = 10) -> DofState:
        if d < 1:
            raise ValueError(f"homotopy stage count must be at least 1, got {d}")
        mesh = self.mesh
        X = mesh.uniform_X()[1:-1]
        z = interleave(np.asarray(self.profile.a(X), dtype=float), X)
        stages = 1 if self.constraints.kind == "uniform" else d
        for k in range(1, stages + 1):
            alpha_k = self.constraints.alpha * k / stages
            c_k = replace(self.constraints, alpha=alpha_k)
            try:
                result = newton_solve(
                    lambda v: self._residual(v, c_k),
                    lambda v: self._jacobian(v, c_k),
                    z,
                    self.newton,
                    admissible=lambda v: c_k.admissible_X(v[1::2]),
                    label=f"homotopy stage {k}",
                )
            except NoConvergence as exc:
                raise NoConvergence(
                    f"initial positions: stage {k}/{stages} (alpha={alpha_k:.4g}) failed; try a larger homotopy_d",
                    iterate=exc.iterate,
                    residual=exc.residual,
                    residual_history=exc.residual_history,
                    payload={"stage": k, "alpha": alpha_k},
                ) from exc
            z = result.x
            self.logger.info("homotopy stage %d/%d alpha=%.4g: %d iterations", k, stages, alpha_k, result.iterations)
        return mesh.state_from_q(z)

    def _residual(self, z: np.ndarray, c: ConstraintSet) -> np.ndarray:
        y, X = z[0::2], z[1::2]
        return interleave(y - np.asarray(self.profile.a(X), dtype=float), c.residual(self.mesh.state(y, X)))

    def _jacobian(self, z: np.ndarray, c: ConstraintSet) -> BandedMatrix:
        X = z[1::2]
        Dg = c.jacobian(self.mesh.state(z[0::2], X))
        return _interleaved_system(np.ones(X.size), -self.profile.slope(X), Dg)

    def velocities(self, q: DofState) -> VelocityState:
        """ẏ_i − a′(X_i)Ẋ_i = b(X_i) together with Dg(q)u = 0."""
        X = q.X[1:-1]
        system = _interleaved_system(np.ones(X.size), -self.profile.slope(X), self.constraints.jacobian(q))
        rhs = interleave(np.asarray(self.profile.b(X), dtype=float), np.zeros(X.size))
        return VelocityState.from_u(lu_banded_solve(system, rhs))


def solve_initial_positions(
    profile: InitialProfile,
    mesh: MeshConfig,
    c: ConstraintSet,
    d: int = 10,
    newton: Optional[NewtonOptions] = None,
) -> DofState:
    if c.mesh != mesh:
        c = replace(c, mesh=mesh)
    return InitialConditionBuilder(profile, c, newton).positions(d)


def solve_initial_velocities(q: DofState, profile: InitialProfile, c: ConstraintSet) -> VelocityState:
    return InitialConditionBuilder(profile, c).velocities(q)


def initial_phase(
    q: DofState,
    vel: VelocityState,
    strategy: Strategy,
    density: DensitySpec,
    c: ConstraintSet,
) -> Union[CtState, LmState]:
    """Legendre transform of (q, u) into the strategy's phase state.

    CT keeps only the momenta conjugate to y. LM keeps p = M_N(q)u, zero
    slack variables and multipliers seeded from the consistent accelerations.
    """
    u = vel.u
    delta_min = c.mesh.delta_min
    p = assemble_mass_matrix(q, delta_min) @ u
    if strategy in ("CT", "UniformMesh"):
        return CtState(t=0.0, q=q, p=p[0::2].copy(), u=u.copy())
    if strategy == "LM":
        _, lam = consistent_accel_and_lambda(q, u, c, density, delta_min)
        zeros = np.zeros(q.N)
        return LmState(t=0.0, q=q, v=u.copy(), p=p, r=zeros, w=zeros.copy(), lam=lam, mu=zeros.copy(), pi=zeros.copy())
    raise ValueError(f"unknown strategy {strategy!r}")
