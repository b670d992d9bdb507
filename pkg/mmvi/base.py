"""Error hierarchy and shared module base for the moving-mesh integrators."""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Any, Dict, List, Optional

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .modules.solver import NewtonOptions


class MmviError(RuntimeError):
    """Raised when a numerical kernel or stepper cannot produce a valid result."""

    termination_reason = "no_convergence"

    def __init__(
        self,
        message: str,
        *,
        step_index: Optional[int] = None,
        iterate: Optional[np.ndarray] = None,
        residual: Optional[float] = None,
        payload: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.step_index = step_index
        self.iterate = iterate
        self.residual = residual
        self.payload = payload or {}
        self.trajectory = None

    def annotate(self, *, step_index: int, trajectory: Any = None) -> "MmviError":
        """Attach the failing step index and the partial trajectory."""
        self.step_index = step_index
        self.trajectory = trajectory
        return self

    def __str__(self) -> str:
        message = super().__str__()
        if self.step_index is not None:
            return f"{message} (step {self.step_index})"
        return message


class MeshCrossing(MmviError):
    """A cell width fell below the mesh-crossing floor."""

    termination_reason = "mesh_crossing"

    def __init__(self, message: str, *, cell: Optional[int] = None, width: Optional[float] = None, **kwargs: Any):
        super().__init__(message, **kwargs)
        self.cell = cell
        self.width = width


class NoConvergence(MmviError):
    """Newton iteration exhausted its budget or stagnated."""

    termination_reason = "no_convergence"

    def __init__(self, message: str, *, residual_history: Optional[List[float]] = None, **kwargs: Any):
        super().__init__(message, **kwargs)
        self.residual_history = list(residual_history or [])


class SingularJacobian(MmviError):
    termination_reason = "singular"


class SingularMatrix(MmviError):
    termination_reason = "singular"


class SingularKkt(SingularMatrix):
    """The bordered mass/constraint matrix lost rank."""


class DomainError(MmviError, ValueError):
    """An argument lies outside the domain of a closed-form solution."""


class ConfigError(MmviError, ValueError):
    """An experiment configuration is inconsistent."""


class MmviModule:
    """Base class for steppers and builders that run Newton solves."""

    def __init__(self, newton: Optional["NewtonOptions"] = None):
        if newton is None:
            from .modules.solver import NewtonOptions

            newton = NewtonOptions()
        self.newton = newton
        self.logger = logging.getLogger(f"mmvi.{self.__class__.__name__}")


# Failures raised by numpy, scipy or the interpreter inside a numerical kernel.
NUMERICAL_ERRORS = (MmviError, np.linalg.LinAlgError, ArithmeticError, RuntimeError)


def as_mmvi_error(exc: BaseException) -> MmviError:
    """Map a foreign numerical exception onto the hierarchy; ``MmviError`` passes through."""
    if isinstance(exc, MmviError):
        return exc
    singular = isinstance(exc, (np.linalg.LinAlgError, ZeroDivisionError)) or "singular" in str(exc).lower()
    cls = SingularMatrix if singular else NoConvergence
    error = cls(f"{type(exc).__name__}: {exc}")
    error.__cause__ = exc
    return error
