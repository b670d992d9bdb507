from __future__ import annotations

import numpy as np
import pytest

from mmvi.config import ExperimentConfig
from mmvi.modules.constraints import ConstraintSet
from mmvi.modules.fieldtheory import sine_gordon_density
from mmvi.modules.harness import ExperimentRunner
from mmvi.modules.semidiscrete import DofState, MeshConfig

SEED = 20240611
XMAX = 25.0


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture
def density():
    return sine_gordon_density()


@pytest.fixture
def mesh():
    return MeshConfig(N=7, Xmax=XMAX, yL=0.0, yR=2.0 * np.pi)


@pytest.fixture
def arclength(mesh):
    return ConstraintSet.arclength(mesh, 2.5)


def _random_state(rng, N, Xmax=XMAX, min_slope_gap=None):
    """Ordered mesh with widths within a factor 3 of each other and random field values.

    With ``min_slope_gap`` consecutive cell slopes differ by at least that
    much, which keeps the mass matrix well conditioned.
    """
    widths = rng.uniform(0.5, 1.5, N + 1)
    X = np.concatenate([[0.0], Xmax * np.cumsum(widths) / widths.sum()])
    X[-1] = Xmax
    if min_slope_gap is None:
        y = rng.normal(scale=0.3, size=N + 2)
    else:
        steps = rng.uniform(min_slope_gap, 3.0 * min_slope_gap, N + 1) * rng.choice([-1.0, 1.0], N + 1)
        gamma = np.cumsum(steps) - np.mean(np.cumsum(steps))
        y = np.concatenate([[0.0], np.cumsum(gamma * np.diff(X))])
    return DofState(y=y, X=X)


@pytest.fixture
def random_state(rng):
    def make(N, **kwargs):
        return _random_state(rng, N, **kwargs)

    return make


@pytest.fixture
def runner_factory(tmp_path):
    """ExperimentRunner for the single-soliton problem with small defaults."""

    def make(**overrides):
        fields = dict(
            problem="SingleSolitonBounce",
            strategy="LM",
            scheme="Lobatto3",
            N=15,
            dt=0.01,
            t_max=0.1,
            alpha=2.5,
            output_dir=tmp_path / "run",
            kkt_monitor_every=0,
        )
        fields.update(overrides)
        return ExperimentRunner(ExperimentConfig(**fields))

    return make
