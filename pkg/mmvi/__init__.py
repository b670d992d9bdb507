"""Moving-mesh variational integrators package."""

from .base import ConfigError, DomainError, MeshCrossing, MmviError, NoConvergence, SingularKkt, SingularMatrix
from .config import ExperimentConfig, load_config
from .modules.harness import ExperimentRunner, convergence_study, energy_study, linf_error, run_experiment

__all__ = [
    "MmviError",
    "MeshCrossing",
    "NoConvergence",
    "SingularMatrix",
    "SingularKkt",
    "DomainError",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "ExperimentRunner",
    "run_experiment",
    "linf_error",
    "convergence_study",
    "energy_study",
]
