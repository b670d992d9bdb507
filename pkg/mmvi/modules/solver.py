"""Newton iteration and LU kernels shared by every stepper.

Jacobians reach :func:`newton_solve` in one of three storages: a dense
``ndarray``, a :class:`BandedMatrix` (LAPACK band storage), or a
``scipy.sparse`` matrix for the coupled stage systems. Each is factorized
with the matching LAPACK/SuperLU routine and checked for tiny pivots.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import lapack

from ..base import MeshCrossing, NoConvergence, SingularJacobian, SingularMatrix

logger = logging.getLogger("mmvi.solver")

PIVOT_TOLERANCE = 1e-14
SUFFICIENT_DECREASE = 1e-4


class NewtonOptions(BaseModel):
    """Stopping and damping rules for :func:`newton_solve`."""

    model_config = ConfigDict(frozen=True)

    tol_residual: float = Field(1e-10, gt=0)
    tol_step: float = Field(1e-12, gt=0)
    max_iters: int = Field(50, ge=1)
    damping: Literal["none", "halving"] = "halving"
    max_halvings: int = Field(8, ge=0)


@dataclass
class BandedMatrix:
    """Square matrix in LAPACK band storage: ``A[i, j] == ab[upper + i - j, j]``."""

    ab: np.ndarray
    lower: int
    upper: int

    @property
    def n(self) -> int:
        return self.ab.shape[1]

    @property
    def shape(self):
        return (self.n, self.n)

    @classmethod
    def zeros(cls, n: int, lower: int, upper: int) -> "BandedMatrix":
        return cls(np.zeros((lower + upper + 1, n)), lower, upper)

    @classmethod
    def from_sparse(cls, matrix, lower: int, upper: int) -> "BandedMatrix":
        coo = scipy.sparse.coo_matrix(matrix)
        n = coo.shape[0]
        if coo.shape[1] != n:
            raise ValueError(f"banded storage needs a square matrix, got {coo.shape}")
        offsets = coo.col - coo.row
        outside = (offsets > upper) | (offsets < -lower)
        if np.any(outside & (coo.data != 0.0)):
            raise ValueError(f"entries outside the declared band ({lower}, {upper})")
        banded = cls.zeros(n, lower, upper)
        keep = ~outside
        np.add.at(banded.ab, (upper - offsets[keep], coo.col[keep]), coo.data[keep])
        return banded

    @classmethod
    def from_dense(cls, matrix: np.ndarray, lower: int, upper: int) -> "BandedMatrix":
        return cls.from_sparse(scipy.sparse.csr_matrix(np.asarray(matrix, dtype=float)), lower, upper)

    def tosparse(self) -> scipy.sparse.csr_matrix:
        n = self.n
        diagonals, offsets = [], []
        for k in range(-self.lower, self.upper + 1):
            if abs(k) >= n:
                continue
            row = self.ab[self.upper - k]
            diagonals.append(row[k:] if k >= 0 else row[: n + k])
            offsets.append(k)
        return scipy.sparse.diags(diagonals, offsets, shape=(n, n), format="csr")

    def todense(self) -> np.ndarray:
        return self.tosparse().toarray()

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return self.tosparse() @ x

    def norm_inf(self) -> float:
        return float(np.abs(self.tosparse()).sum(axis=1).max()) if self.n else 0.0


Matrix = Union[np.ndarray, BandedMatrix, scipy.sparse.spmatrix]


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_history: List[float] = field(default_factory=list)

    @property
    def residual(self) -> float:
        return self.residual_history[-1]


def norm_inf(x: np.ndarray) -> float:
    return float(np.max(np.abs(x))) if np.size(x) else 0.0


def _banded_factor(A: BandedMatrix, error=SingularMatrix):
    n, kl, ku = A.n, A.lower, A.upper
    work = np.zeros((2 * kl + ku + 1, n))
    work[kl:, :] = A.ab
    scale = float(np.max(np.abs(A.ab))) if A.ab.size else 0.0
    lu, piv, info = lapack.dgbtrf(work, kl, ku)
    if info > 0:
        raise error(f"zero pivot in column {info - 1} of banded factorization")
    pivots = np.abs(lu[kl + ku, :])
    if pivots.size and pivots.min() <= PIVOT_TOLERANCE * scale:
        raise error(f"pivot {pivots.min():.3e} below tolerance (scale {scale:.3e})")

    def solve(b: np.ndarray) -> np.ndarray:
        column = np.asarray(b, dtype=float).reshape(n, -1)
        x, status = lapack.dgbtrs(lu, kl, ku, column, piv)
        if status != 0:
            raise error(f"banded triangular solve failed with info={status}")
        return x.reshape(np.shape(b))

    return solve


def _dense_factor(A: np.ndarray, error=SingularJacobian):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= PIVOT_TOLERANCE * scale:
        raise error(f"pivot {pivots.min():.3e} below tolerance (scale {scale:.3e})")
    return lambda b: scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def _sparse_factor(A, error=SingularJacobian):
    A = scipy.sparse.csc_matrix(A)
    scale = float(np.max(np.abs(A.data))) if A.nnz else 0.0
    try:
        lu = scipy.sparse.linalg.splu(A)
    except RuntimeError as exc:
        raise error(f"sparse factorization failed: {exc}") from exc
    pivots = np.abs(lu.U.diagonal())
    if pivots.min() <= PIVOT_TOLERANCE * scale:
        raise error(f"pivot {pivots.min():.3e} below tolerance (scale {scale:.3e})")
    return lu.solve


def factorize(A: Matrix, error=SingularJacobian) -> Callable[[np.ndarray], np.ndarray]:
    """Return a solve closure for ``A`` or raise ``error`` on a tiny pivot."""
    if isinstance(A, BandedMatrix):
        return _banded_factor(A, error=error)
    if scipy.sparse.issparse(A):
        return _sparse_factor(A, error=error)
    return _dense_factor(A, error=error)


def lu_banded_solve(A: BandedMatrix, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` by banded LU with partial pivoting."""
    x = _banded_factor(A, error=SingularMatrix)(b)
    if not np.all(np.isfinite(x)):
        raise SingularMatrix("banded solve produced non-finite values")
    return x


def fd_jacobian(F: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: Optional[float] = None) -> np.ndarray:
    """Centered-difference Jacobian of ``F`` at ``x``."""
    x = np.asarray(x, dtype=float)
    h = step if step is not None else 1e-6 * (1.0 + norm_inf(x))
    columns = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        columns.append((np.asarray(F(x + e)) - np.asarray(F(x - e))) / (2.0 * h))
    return np.column_stack(columns) if columns else np.zeros((0, 0))


def newton_solve(
    F: Callable[[np.ndarray], np.ndarray],
    J: Callable[[np.ndarray], Matrix],
    x0: np.ndarray,
    opts: Optional[NewtonOptions] = None,
    *,
    admissible: Optional[Callable[[np.ndarray], bool]] = None,
    label: str = "newton",
) -> NewtonResult:
    """Solve ``F(x) = 0`` by Newton's method.

    Args:
        F: residual map.
        J: Jacobian map (dense, banded or sparse).
        x0: initial iterate.
        opts: stopping and damping rules.
        admissible: optional predicate on iterates (mesh ordering); with
            halving damping, inadmissible trial points are halved back, and
            a point that stays inadmissible raises :class:`MeshCrossing`.
        label: name used in log lines and error messages.

    Returns:
        NewtonResult with ``‖F(x)‖∞ <= tol_residual``.
    """
    opts = opts or NewtonOptions()
    x = np.array(x0, dtype=float, copy=True)
    fx = np.asarray(F(x), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise NoConvergence(f"{label}: non-finite residual at the initial iterate", iterate=x)
    rnorm = norm_inf(fx)
    history = [rnorm]
    iterations = 0

    while rnorm > opts.tol_residual:
        if iterations >= opts.max_iters:
            raise NoConvergence(
                f"{label}: no convergence after {iterations} iterations (residual {rnorm:.3e})",
                iterate=x,
                residual=rnorm,
                residual_history=history,
            )
        try:
            solve = factorize(J(x))
        except SingularJacobian as exc:
            exc.iterate, exc.residual = x, rnorm
            raise
        dx = -np.asarray(solve(fx), dtype=float)
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian(f"{label}: non-finite Newton step", iterate=x, residual=rnorm)

        x_new, f_new, step = _damped_update(F, x, dx, rnorm, opts, admissible, label)
        iterations += 1
        step_norm = step * norm_inf(dx)
        x, fx = x_new, f_new
        rnorm = norm_inf(fx)
        history.append(rnorm)
        logger.debug("%s: iteration %d residual %.3e step %.3e", label, iterations, rnorm, step_norm)

        if rnorm > opts.tol_residual and step_norm <= opts.tol_step * (1.0 + norm_inf(x)):
            raise NoConvergence(
                f"{label}: stagnated at residual {rnorm:.3e}",
                iterate=x,
                residual=rnorm,
                residual_history=history,
            )

    return NewtonResult(x=x, iterations=iterations, residual_history=history)


def _damped_update(F, x, dx, rnorm, opts: NewtonOptions, admissible, label):
    if opts.damping == "none":
        x_new = x + dx
        f_new = np.asarray(F(x_new), dtype=float)
        if not np.all(np.isfinite(f_new)):
            raise NoConvergence(f"{label}: non-finite residual", iterate=x_new)
        return x_new, f_new, 1.0

    step = 1.0
    candidate = None
    for _ in range(opts.max_halvings + 1):
        x_new = x + step * dx
        ok = admissible is None or admissible(x_new)
        f_new = None
        if ok:
            try:
                f_new = np.asarray(F(x_new), dtype=float)
            except MeshCrossing:
                ok = False
            else:
                ok = bool(np.all(np.isfinite(f_new)))
        if ok:
            if norm_inf(f_new) <= (1.0 - SUFFICIENT_DECREASE * step) * rnorm:
                return x_new, f_new, step
            if candidate is None:
                candidate = (x_new, f_new, step)
        step *= 0.5

    if candidate is None:
        raise MeshCrossing(f"{label}: backtracking could not keep the iterate admissible", iterate=x)
    return candidate
