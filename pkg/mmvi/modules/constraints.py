"""Mesh equations: arclength equidistribution and the uniform mesh.

Both constraint kinds are local: g_i couples node i to its neighbours, so
Dg is an N×2N matrix with at most six nonzeros per row. It is returned in
CSR form; square sub-blocks are moved to band storage where they are
factorized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
import scipy.sparse

from .semidiscrete import DofState, MeshConfig, _scatter_matrix
from .solver import BandedMatrix, NewtonOptions, newton_solve

ConstraintKind = Literal["arclength", "uniform"]


@dataclass(frozen=True)
class ConstraintSet:
    """One mesh equation per interior node.

    ``arclength``: g_i = α²Δy_i² + δ_i² − α²Δy_{i−1}² − δ_{i−1}², the
    discrete equidistribution of ρ = √(1 + α²φ_X²). ``uniform``:
    g_i = (X_i − X_{i−1})/dx − 1, which pins X_i = i·dx.
    """

    kind: ConstraintKind
    mesh: MeshConfig
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("arclength", "uniform"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")

    @property
    def N(self) -> int:
        return self.mesh.N

    @classmethod
    def arclength(cls, mesh: MeshConfig, alpha: float) -> "ConstraintSet":
        return cls("arclength", mesh, alpha)

    @classmethod
    def uniform(cls, mesh: MeshConfig) -> "ConstraintSet":
        return cls("uniform", mesh)

    # === Residual and derivatives ===

    def residual(self, q: DofState) -> np.ndarray:
        if self.kind == "uniform":
            return np.diff(q.X)[:-1] / self.mesh.dx - 1.0
        w = self.alpha**2 * np.diff(q.y) ** 2 + np.diff(q.X) ** 2
        return np.diff(w)

    def jacobian(self, q: DofState) -> scipy.sparse.csr_matrix:
        if self.kind == "uniform":
            return self._uniform_jacobian()
        return self._difference_rows(np.diff(q.y), np.diff(q.X))

    def jacobian_dot(self, q: DofState, u: np.ndarray) -> scipy.sparse.csr_matrix:
        """d/dt Dg(q(t)) along the velocity u."""
        if self.kind == "uniform":
            return scipy.sparse.csr_matrix((self.N, 2 * self.N))
        ydot, Xdot = _padded(u)
        return self._difference_rows(np.diff(ydot), np.diff(Xdot))

    def weighted_hessian(self, q: DofState, omega: np.ndarray) -> scipy.sparse.csr_matrix:
        """Σ_i ω_i ∇²g_i; constant in q for both kinds."""
        N = self.N
        if self.kind == "uniform":
            return scipy.sparse.csr_matrix((2 * N, 2 * N))
        padded = np.concatenate([[0.0], np.asarray(omega, dtype=float), [0.0]])
        weight = padded[:-1] - padded[1:]
        pair = np.array([[1.0, -1.0], [-1.0, 1.0]])
        local = np.zeros((N + 1, 4, 4))
        local[:, 0::2, 0::2] = 2.0 * self.alpha**2 * pair
        local[:, 1::2, 1::2] = 2.0 * pair
        return _scatter_matrix(N, weight[:, None, None] * local)

    def hessian_contraction(self, q: DofState, u: np.ndarray) -> np.ndarray:
        """h(q, u) = −Σ ∂²g/∂q_i∂q_j u_i u_j."""
        return -(self.jacobian_dot(q, u) @ np.asarray(u, dtype=float))

    def _uniform_jacobian(self) -> scipy.sparse.csr_matrix:
        N, dx = self.N, self.mesh.dx
        rows = np.concatenate([np.arange(N), np.arange(1, N)])
        cols = np.concatenate([2 * np.arange(N) + 1, 2 * np.arange(N - 1) + 1])
        vals = np.concatenate([np.full(N, 1.0 / dx), np.full(N - 1, -1.0 / dx)])
        return scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(N, 2 * N)).tocsr()

    def _difference_rows(self, dy: np.ndarray, dX: np.ndarray) -> scipy.sparse.csr_matrix:
        """Rows of ∂g/∂q written in terms of cell differences (length N+1)."""
        N = self.N
        a2 = self.alpha**2
        i = np.arange(1, N + 1)
        rows, cols, vals = [], [], []
        for component, diffs, scale in ((0, dy, a2), (1, dX, 1.0)):
            left, right = diffs[i - 1], diffs[i]
            stencil = (
                (i - 1, 2.0 * scale * left),
                (i, -2.0 * scale * (left + right)),
                (i + 1, 2.0 * scale * right),
            )
            for node, value in stencil:
                inside = (node >= 1) & (node <= N)
                rows.append(i[inside] - 1)
                cols.append(2 * (node[inside] - 1) + component)
                vals.append(value[inside])
        return scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, 2 * N)
        ).tocsr()

    # === Mesh solve ===

    def solve_for_X(
        self, y: np.ndarray, X_guess: np.ndarray, opts: Optional[NewtonOptions] = None
    ) -> np.ndarray:
        mesh = self.mesh

        def state(X):
            return mesh.state(y, X)

        def F(X):
            return self.residual(state(X))

        def J(X):
            return BandedMatrix.from_sparse(self.jacobian(state(X))[:, 1::2], 1, 1)

        result = newton_solve(F, J, np.asarray(X_guess, dtype=float), opts, admissible=self.admissible_X, label="mesh")
        return result.x

    def admissible_X(self, X: np.ndarray) -> bool:
        full = np.concatenate([[0.0], X, [self.mesh.Xmax]])
        return bool(np.all(np.diff(full) > self.mesh.delta_min))


def _padded(u: np.ndarray):
    u = np.asarray(u, dtype=float)
    return np.concatenate([[0.0], u[0::2], [0.0]]), np.concatenate([[0.0], u[1::2], [0.0]])


def g(q: DofState, c: ConstraintSet) -> np.ndarray:
    return c.residual(q)


def jacobian_Dg(q: DofState, c: ConstraintSet) -> scipy.sparse.csr_matrix:
    return c.jacobian(q)


def hessian_contraction_h(q: DofState, u: np.ndarray, c: ConstraintSet) -> np.ndarray:
    return c.hessian_contraction(q, u)


def solve_constraint_for_X(
    y: np.ndarray, c: ConstraintSet, X_guess: np.ndarray, opts: Optional[NewtonOptions] = None
) -> np.ndarray:
    """Solve g(y, X) = 0 for the interior mesh at fixed interior field values."""
    return c.solve_for_X(y, X_guess, opts)


def constraint_norm(q: DofState, c: ConstraintSet) -> float:
    residual = c.residual(q)
    return float(np.max(np.abs(residual))) if residual.size else 0.0


def min_width(q: DofState) -> float:
    return float(np.min(np.diff(q.X)))
