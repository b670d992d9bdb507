"""Linear finite-element semi-discretization on a moving mesh.

Unknowns are interleaved as ``q = (y_1, X_1, ..., y_N, X_N)``; boundary
nodes 0 and N+1 are fixed and never appear in vectors or matrices.

Everything the steppers need is a sum over cells of a function of the eight
local values (y_k, X_k, y_{k+1}, X_{k+1}) and their velocities. The cell
engine below evaluates that function with its gradient and Hessian, and the
assembly helpers scatter the local blocks into interleaved global arrays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import scipy.sparse
from scipy.special import roots_legendre

from ..base import MeshCrossing
from .fieldtheory import DensitySpec
from .solver import BandedMatrix

logger = logging.getLogger("mmvi.semidiscrete")

DEFAULT_DELTA_MIN_FACTOR = 1e-10
QUADRATURE_POINTS = 5

_gl_nodes, _gl_weights = roots_legendre(QUADRATURE_POINTS)
UNIT_NODES = 0.5 * (_gl_nodes + 1.0)
UNIT_WEIGHTS = 0.5 * _gl_weights


@dataclass(frozen=True)
class MeshConfig:
    N: int
    Xmax: float
    yL: float = 0.0
    yR: float = 0.0
    delta_min_factor: float = DEFAULT_DELTA_MIN_FACTOR

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be at least 1, got {self.N}")
        if self.Xmax <= 0:
            raise ValueError(f"Xmax must be positive, got {self.Xmax}")

    @property
    def dx(self) -> float:
        return self.Xmax / (self.N + 1)

    @property
    def delta_min(self) -> float:
        return self.delta_min_factor * self.dx

    def uniform_X(self) -> np.ndarray:
        return np.arange(self.N + 2) * self.dx

    def state(self, y_interior: np.ndarray, X_interior: np.ndarray) -> "DofState":
        y = np.concatenate([[self.yL], np.asarray(y_interior, dtype=float), [self.yR]])
        X = np.concatenate([[0.0], np.asarray(X_interior, dtype=float), [self.Xmax]])
        return DofState(y=y, X=X)

    def state_from_q(self, q: np.ndarray) -> "DofState":
        y, X = deinterleave(q)
        return self.state(y, X)


@dataclass(frozen=True)
class DofState:
    """Field values and mesh positions, boundary entries included."""

    y: np.ndarray
    X: np.ndarray

    @property
    def N(self) -> int:
        return self.y.size - 2

    @property
    def q(self) -> np.ndarray:
        return interleave(self.y[1:-1], self.X[1:-1])

    def with_q(self, q: np.ndarray) -> "DofState":
        y, X = deinterleave(q)
        return DofState(
            y=np.concatenate([self.y[:1], y, self.y[-1:]]),
            X=np.concatenate([self.X[:1], X, self.X[-1:]]),
        )


@dataclass(frozen=True)
class VelocityState:
    """Nodal velocities; boundary entries are zero."""

    ydot: np.ndarray
    Xdot: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return interleave(self.ydot[1:-1], self.Xdot[1:-1])

    @classmethod
    def from_u(cls, u: np.ndarray) -> "VelocityState":
        ydot, Xdot = deinterleave(u)
        pad = lambda a: np.concatenate([[0.0], a, [0.0]])  # noqa: E731
        return cls(ydot=pad(ydot), Xdot=pad(Xdot))

    @classmethod
    def zeros(cls, N: int) -> "VelocityState":
        return cls(ydot=np.zeros(N + 2), Xdot=np.zeros(N + 2))


Velocity = Union[VelocityState, np.ndarray]


def interleave(y: np.ndarray, X: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(y))
    out[0::2] = y
    out[1::2] = X
    return out


def deinterleave(q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    q = np.asarray(q, dtype=float)
    return q[0::2].copy(), q[1::2].copy()


def _velocity(u: Velocity) -> VelocityState:
    return u if isinstance(u, VelocityState) else VelocityState.from_u(u)


def _u_vector(u: Velocity) -> np.ndarray:
    return u.u if isinstance(u, VelocityState) else np.asarray(u, dtype=float)


# === Geometry ===


def gamma_delta(q: DofState, delta_min: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Cell widths δ_i and slopes γ_i for cells 0..N."""
    delta = np.diff(q.X)
    if delta_min is None:
        delta_min = DEFAULT_DELTA_MIN_FACTOR * (q.X[-1] - q.X[0]) / (q.N + 1)
    bad = np.flatnonzero(delta <= delta_min)
    if bad.size:
        k = int(bad[0])
        raise MeshCrossing(f"cell {k} collapsed (width {delta[k]:.3e})", cell=k, width=float(delta[k]))
    return delta, np.diff(q.y) / delta


def _cell_index(N: int) -> np.ndarray:
    """Global interleaved index of (y_k, X_k, y_{k+1}, X_{k+1}) per cell; −1 on boundaries."""
    left = np.arange(N + 1)
    right = left + 1

    def index(node, component):
        return np.where((node >= 1) & (node <= N), 2 * (node - 1) + component, -1)

    return np.stack([index(left, 0), index(left, 1), index(right, 0), index(right, 1)], axis=1)


def _scatter_vector(N: int, local: np.ndarray) -> np.ndarray:
    idx = _cell_index(N)
    out = np.zeros(2 * N)
    valid = idx >= 0
    np.add.at(out, idx[valid], local[valid])
    return out


def _scatter_matrix(N: int, local: np.ndarray) -> scipy.sparse.csr_matrix:
    idx = _cell_index(N)
    rows = np.broadcast_to(idx[:, :, None], local.shape)
    cols = np.broadcast_to(idx[:, None, :], local.shape)
    valid = (rows >= 0) & (cols >= 0)
    return scipy.sparse.coo_matrix((local[valid], (rows[valid], cols[valid])), shape=(2 * N, 2 * N)).tocsr()


# === Cell engine ===

_POSITION_MAP = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, -1.0, 0.0, 1.0]])


def _quadrature_cells(density: DensitySpec, ya, yb, delta):
    """Gauss-Legendre cell integral of R with gradient/Hessian in (y_a, y_b, δ)."""
    s, w = UNIT_NODES, UNIT_WEIGHTS
    gamma = (yb - ya) / delta
    phi = ya[:, None] * (1.0 - s) + yb[:, None] * s
    g = np.broadcast_to(gamma[:, None], phi.shape)
    R = density.R(g, phi)
    Rg, Rp = density.dR_dphiX(g, phi), density.dR_dphi(g, phi)
    Rgg, Rgp, Rpp = density.d2R_dphiX2(g, phi), density.d2R_dphiX_dphi(g, phi), density.d2R_dphi2(g, phi)

    F = R @ w
    dgam = np.stack([-1.0 / delta, 1.0 / delta, -gamma / delta], axis=-1)
    dphi = np.stack([1.0 - s, s, np.zeros_like(s)], axis=-1)
    grad_F = (Rg @ w)[:, None] * dgam + (Rp * w) @ dphi

    hess_F = np.einsum("n,ni,nj->nij", Rgg @ w, dgam, dgam)
    cross = np.einsum("nm,mj->nj", Rgp * w, dphi)
    hess_F += np.einsum("ni,nj->nij", dgam, cross) + np.einsum("ni,nj->nij", cross, dgam)
    hess_F += np.einsum("nm,mi,mj->nij", Rpp * w, dphi, dphi)
    inv2 = 1.0 / delta**2
    curvature = np.zeros((delta.size, 3, 3))
    curvature[:, 0, 2] = curvature[:, 2, 0] = inv2
    curvature[:, 1, 2] = curvature[:, 2, 1] = -inv2
    curvature[:, 2, 2] = 2.0 * gamma * inv2
    hess_F += (Rg @ w)[:, None, None] * curvature

    value = delta * F
    grad = delta[:, None] * grad_F
    grad[:, 2] += F
    hess = delta[:, None, None] * hess_F
    hess[:, 2, :] += grad_F
    hess[:, :, 2] += grad_F
    return value, grad, hess


def potential_cells(q: DofState, density: DensitySpec, delta_min: Optional[float] = None):
    """Per-cell potential with gradient (n, 4) and Hessian (n, 4, 4) in local positions."""
    delta, _ = gamma_delta(q, delta_min)
    ya, yb = q.y[:-1], q.y[1:]
    if density.cell_potential is not None:
        value, grad3, hess3 = density.cell_potential(ya, yb, delta)
    else:
        value, grad3, hess3 = _quadrature_cells(density, ya, yb, delta)
    P = _POSITION_MAP
    return value, grad3 @ P, np.einsum("ai,nab,bj->nij", P, hess3, P)


def kinetic_cells(q: DofState, u: Velocity, delta_min: Optional[float] = None):
    """Per-cell δ/6 (a² + ab + b²) with gradient (n, 8) and Hessian (n, 8, 8).

    Local ordering is (y_a, X_a, y_b, X_b, ẏ_a, Ẋ_a, ẏ_b, Ẋ_b) with
    a = ẏ_a − γẊ_a and b = ẏ_b − γẊ_b.
    """
    vel = _velocity(u)
    delta, gamma = gamma_delta(q, delta_min)
    n = delta.size
    ya_dot, Xa_dot, yb_dot, Xb_dot = vel.ydot[:-1], vel.Xdot[:-1], vel.ydot[1:], vel.Xdot[1:]
    a = ya_dot - gamma * Xa_dot
    b = yb_dot - gamma * Xb_dot
    Q = a * a + a * b + b * b
    Qa, Qb = 2.0 * a + b, a + 2.0 * b
    value = delta * Q / 6.0

    # intermediate coordinates (γ, δ, ẏ_a, Ẋ_a, ẏ_b, Ẋ_b)
    zero, one = np.zeros(n), np.ones(n)
    da = np.stack([-Xa_dot, zero, one, -gamma, zero, zero], axis=-1)
    db = np.stack([-Xb_dot, zero, zero, zero, one, -gamma], axis=-1)
    dQ = Qa[:, None] * da + Qb[:, None] * db
    grad_v = delta[:, None] * dQ / 6.0
    grad_v[:, 1] += Q / 6.0

    outer = lambda x, y: np.einsum("ni,nj->nij", x, y)  # noqa: E731
    hess_v = (delta / 6.0)[:, None, None] * (2.0 * outer(da, da) + outer(da, db) + outer(db, da) + 2.0 * outer(db, db))
    hess_v[:, 0, 3] -= delta * Qa / 6.0
    hess_v[:, 3, 0] -= delta * Qa / 6.0
    hess_v[:, 0, 5] -= delta * Qb / 6.0
    hess_v[:, 5, 0] -= delta * Qb / 6.0
    hess_v[:, 1, :] += dQ / 6.0
    hess_v[:, :, 1] += dQ / 6.0

    J = np.zeros((n, 6, 8))
    J[:, 0, 0] = -1.0 / delta
    J[:, 0, 1] = gamma / delta
    J[:, 0, 2] = 1.0 / delta
    J[:, 0, 3] = -gamma / delta
    J[:, 1, 1] = -1.0
    J[:, 1, 3] = 1.0
    J[:, 2, 4] = J[:, 3, 5] = J[:, 4, 6] = J[:, 5, 7] = 1.0
    grad = np.einsum("nv,nvz->nz", grad_v, J)
    hess = np.einsum("nvz,nvw,nwy->nzy", J, hess_v, J)

    # γ = Δy/δ is not linear in the positions
    e_dy = np.array([-1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    e_w = np.array([0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    cross = np.outer(e_dy, e_w) + np.outer(e_w, e_dy)
    curvature = -cross[None] / delta[:, None, None] ** 2 + (2.0 * gamma / delta**2)[:, None, None] * np.outer(e_w, e_w)
    hess += grad_v[:, 0, None, None] * curvature
    return value, grad, hess


@dataclass
class LagrangianDerivatives:
    """L_N and its derivatives at (q, u) in interleaved order.

    ``dqu[i, j]`` is ∂²L/∂q_i∂u_j; the transpose is ∂(∂L/∂u)/∂q.
    """

    value: float
    dq: np.ndarray
    du: np.ndarray
    dqq: scipy.sparse.csr_matrix
    dqu: scipy.sparse.csr_matrix
    duu: scipy.sparse.csr_matrix

    @property
    def duq(self) -> scipy.sparse.csr_matrix:
        return self.dqu.T.tocsr()


def lagrangian_derivatives(
    q: DofState, u: Velocity, density: DensitySpec, delta_min: Optional[float] = None
) -> LagrangianDerivatives:
    N = q.N
    t_value, t_grad, t_hess = kinetic_cells(q, u, delta_min)
    r_value, r_grad, r_hess = potential_cells(q, density, delta_min)
    grad = t_grad.copy()
    grad[:, :4] -= r_grad
    hess = t_hess.copy()
    hess[:, :4, :4] -= r_hess
    return LagrangianDerivatives(
        value=float(t_value.sum() - r_value.sum()),
        dq=_scatter_vector(N, grad[:, :4]),
        du=_scatter_vector(N, grad[:, 4:]),
        dqq=_scatter_matrix(N, hess[:, :4, :4]),
        dqu=_scatter_matrix(N, hess[:, :4, 4:]),
        duu=_scatter_matrix(N, hess[:, 4:, 4:]),
    )


# === Mass matrix ===


def assemble_mass_matrix(q: DofState, delta_min: Optional[float] = None) -> BandedMatrix:
    """Block-tridiagonal M_N with 2×2 blocks A_i (diagonal) and B_i (coupling i, i+1)."""
    delta, gamma = gamma_delta(q, delta_min)
    N = q.N
    dl, dr = delta[:-1], delta[1:]
    gl, gr = gamma[:-1], gamma[1:]
    a11 = (dl + dr) / 3.0
    a12 = -(dl * gl + dr * gr) / 3.0
    a22 = (dl * gl**2 + dr * gr**2) / 3.0

    r = 2 * np.arange(N)
    rows = [r, r, r + 1, r + 1]
    cols = [r, r + 1, r, r + 1]
    vals = [a11, a12, a12, a22]

    if N > 1:
        d, g = delta[1:N], gamma[1:N]
        b11, b12, b22 = d / 6.0, -d * g / 6.0, d * g**2 / 6.0
        rb = 2 * np.arange(N - 1)
        for i_off, j_off, v in [(0, 2, b11), (0, 3, b12), (1, 2, b12), (1, 3, b22)]:
            rows += [rb + i_off, rb + j_off]
            cols += [rb + j_off, rb + i_off]
            vals += [v, v]

    matrix = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * N, 2 * N)
    )
    return BandedMatrix.from_sparse(matrix, 3, 3)


def mass_determinant_formula(q: DofState) -> float:
    delta = np.diff(q.X)
    gamma = np.diff(q.y) / delta
    N = q.N
    widths = delta[0] * delta[N] * np.prod(delta[1:N] ** 2)
    return float(widths * np.prod((gamma[:-1] - gamma[1:]) ** 2) / (9.0 * 12.0 ** (N - 1)))


def momentum(q: DofState, u: Velocity, delta_min: Optional[float] = None) -> np.ndarray:
    """Conjugate momenta M_N(q) u in interleaved order."""
    return assemble_mass_matrix(q, delta_min) @ _u_vector(u)


# === Potential, forces, Lagrangian, energy ===


def potential_RN(q: DofState, density: DensitySpec, delta_min: Optional[float] = None) -> float:
    return float(potential_cells(q, density, delta_min)[0].sum())


def grad_RN(q: DofState, density: DensitySpec, delta_min: Optional[float] = None) -> np.ndarray:
    return _scatter_vector(q.N, potential_cells(q, density, delta_min)[1])


def force_f(q: DofState, u: Velocity, density: DensitySpec, delta_min: Optional[float] = None) -> np.ndarray:
    """Euler-Lagrange force f with M_N(q) u̇ = f(q, u)."""
    derivs = lagrangian_derivatives(q, u, density, delta_min)
    return derivs.dq - derivs.duq @ _u_vector(u)


def semidiscrete_lagrangian(
    q: DofState, u: Velocity, density: DensitySpec, delta_min: Optional[float] = None
) -> float:
    """½uᵀM_N(q)u − R_N(q)."""
    uu = _u_vector(u)
    kinetic = 0.5 * uu @ (assemble_mass_matrix(q, delta_min) @ uu)
    return float(kinetic - potential_RN(q, density, delta_min))


def cell_kinetic_energy(q: DofState, u: Velocity, delta_min: Optional[float] = None) -> np.ndarray:
    """Σ-free per-cell kinetic terms δ_k/6 [a² + ab + b²]."""
    vel = _velocity(u)
    delta, gamma = gamma_delta(q, delta_min)
    a = vel.ydot[:-1] - gamma * vel.Xdot[:-1]
    b = vel.ydot[1:] - gamma * vel.Xdot[1:]
    return delta / 6.0 * (a * a + a * b + b * b)


def lagrangian_by_cells(q: DofState, u: Velocity, density: DensitySpec, delta_min: Optional[float] = None) -> float:
    return float(cell_kinetic_energy(q, u, delta_min).sum() - potential_RN(q, density, delta_min))


def discrete_energy(q: DofState, u: Velocity, density: DensitySpec, delta_min: Optional[float] = None) -> float:
    """E_N = ½uᵀM_N(q)u + R_N(q)."""
    uu = _u_vector(u)
    kinetic = 0.5 * uu @ (assemble_mass_matrix(q, delta_min) @ uu)
    return float(kinetic + potential_RN(q, density, delta_min))
