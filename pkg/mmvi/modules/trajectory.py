"""Per-step records, in-memory trajectories and CSV sinks."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Protocol

import numpy as np

from ..base import MmviError

SIGNIFICANT_DIGITS = 17
DIAGNOSTIC_COLUMNS = ("t", "E_N", "g_norm", "lambda_norm", "r_norm", "mu_norm", "min_delta")


def format_value(value: Optional[float]) -> str:
    if value is None:
        return ""
    return f"{float(value):.{SIGNIFICANT_DIGITS}g}"


@dataclass
class StepRecord:
    t: float
    y: np.ndarray
    X: np.ndarray
    energy: float
    g_norm: float
    p: Optional[np.ndarray] = None
    lambda_norm: Optional[float] = None
    r_norm: Optional[float] = None
    mu_norm: Optional[float] = None

    @property
    def min_delta(self) -> float:
        return float(np.min(np.diff(self.X)))

    def state_row(self) -> List[str]:
        return [format_value(self.t)] + [format_value(v) for v in self.y] + [format_value(v) for v in self.X]

    def diagnostics_row(self) -> List[str]:
        values = (self.t, self.energy, self.g_norm, self.lambda_norm, self.r_norm, self.mu_norm, self.min_delta)
        return [format_value(v) for v in values]


class StepSink(Protocol):
    def emit(self, record: StepRecord) -> None: ...

    def close(self) -> None: ...


@dataclass
class Trajectory:
    records: List[StepRecord] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    termination_reason: str = "completed"
    failed_step: Optional[int] = None

    def append(self, record: StepRecord) -> None:
        self.records.append(record)

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records])

    @property
    def g_norms(self) -> np.ndarray:
        return np.array([r.g_norm for r in self.records])

    @property
    def final(self) -> StepRecord:
        return self.records[-1]

    def __len__(self) -> int:
        return len(self.records)


class MemorySink:
    """Keeps nothing beyond what the trajectory already holds."""

    def emit(self, record: StepRecord) -> None:
        pass

    def close(self) -> None:
        pass


class CsvSink:
    """Streams state.csv and diagnostics.csv so a failing run leaves its prefix on disk."""

    def __init__(self, output_dir: Path, N: int):
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        self.state_path = output_dir / "state.csv"
        self.diagnostics_path = output_dir / "diagnostics.csv"
        self._state = self.state_path.open("w", newline="", encoding="utf-8")
        self._diagnostics = self.diagnostics_path.open("w", newline="", encoding="utf-8")
        self._state_writer = csv.writer(self._state)
        self._diagnostics_writer = csv.writer(self._diagnostics)
        nodes = range(N + 2)
        self._state_writer.writerow(["t"] + [f"y_{i}" for i in nodes] + [f"X_{i}" for i in nodes])
        self._diagnostics_writer.writerow(DIAGNOSTIC_COLUMNS)

    def emit(self, record: StepRecord) -> None:
        self._state_writer.writerow(record.state_row())
        self._diagnostics_writer.writerow(record.diagnostics_row())

    def close(self) -> None:
        for handle in (self._state, self._diagnostics):
            if not handle.closed:
                handle.flush()
                handle.close()

    def __enter__(self) -> "CsvSink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_state_csv(path: Path):
    """Parse state.csv back into (t, y, X) arrays."""
    with Path(path).open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    if data.size == 0:
        return np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0))
    width = (data.shape[1] - 1) // 2
    return data[:, 0], data[:, 1 : 1 + width], data[:, 1 + width :]


def drive(
    step: Callable[[Any], Any],
    record: Callable[[Any], StepRecord],
    state0: Any,
    nsteps: int,
    dt: float,
    *,
    sink: Optional[StepSink] = None,
    record_every: int = 1,
    logger: Optional[logging.Logger] = None,
) -> Trajectory:
    """Shared driver loop for both strategies.

    The initial record and every ``record_every``-th step (plus the last) are
    appended to the trajectory and emitted to ``sink``. On a numerical
    failure the error is annotated with the step index and the partial
    trajectory before it propagates.
    """
    if nsteps < 0:
        raise ValueError(f"nsteps must be non-negative, got {nsteps}")
    if record_every < 1:
        raise ValueError(f"record_every must be at least 1, got {record_every}")
    logger = logger or logging.getLogger("mmvi.trajectory")
    trajectory = Trajectory()

    def keep(rec: StepRecord) -> None:
        trajectory.append(rec)
        if sink is not None:
            sink.emit(rec)

    state = state0
    keep(record(state))
    for n in range(1, nsteps + 1):
        try:
            state = step(state)
        except MmviError as exc:
            trajectory.termination_reason = exc.termination_reason
            trajectory.failed_step = n
            trajectory.metadata["t_failed"] = float(state.t) + dt
            logger.warning("step %d failed (%s): %s", n, exc.termination_reason, exc)
            raise exc.annotate(step_index=n, trajectory=trajectory)
        if n % record_every == 0 or n == nsteps:
            rec = record(state)
            keep(rec)
            logger.debug("t=%.6g E_N=%.15g |g|=%.3e", rec.t, rec.energy, rec.g_norm)
    return trajectory
