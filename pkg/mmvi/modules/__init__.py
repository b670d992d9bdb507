"""Numerical kernels: field theory, semi-discretization, constraints, solvers and steppers."""

from .constraints import ConstraintSet
from .fieldtheory import DensitySpec, SolitonParams, sine_gordon_density, wave_density
from .initial import InitialConditionBuilder, InitialProfile
from .integrator_ct import CtState, CtStepper
from .integrator_lm import KktSystem, LmState, LobattoStepper, TrapezoidalStepper
from .semidiscrete import DofState, MeshConfig, VelocityState
from .solver import BandedMatrix, NewtonOptions, newton_solve
from .tableaus import TABLEAUS, PartitionedTableau, get_tableau
from .trajectory import CsvSink, StepRecord, Trajectory

__all__ = [
    "ConstraintSet",
    "DensitySpec",
    "SolitonParams",
    "sine_gordon_density",
    "wave_density",
    "InitialConditionBuilder",
    "InitialProfile",
    "CtState",
    "CtStepper",
    "KktSystem",
    "LmState",
    "LobattoStepper",
    "TrapezoidalStepper",
    "DofState",
    "MeshConfig",
    "VelocityState",
    "BandedMatrix",
    "NewtonOptions",
    "newton_solve",
    "TABLEAUS",
    "PartitionedTableau",
    "get_tableau",
    "CsvSink",
    "StepRecord",
    "Trajectory",
]
