"""Experiment runner: problem setup, single runs, convergence and energy studies."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Union

import numpy as np

from ..base import NUMERICAL_ERRORS, ConfigError, MmviModule, as_mmvi_error
from ..config import ExperimentConfig, derive
from .constraints import ConstraintSet
from .fieldtheory import (
    SolitonParams,
    find_bounce_time,
    nearly_exact_bounce,
    sine_gordon_density,
    soliton,
    soliton_t,
    soliton_X,
    two_soliton,
    two_soliton_t,
    two_soliton_X,
)
from .initial import InitialProfile, initial_phase, solve_initial_positions, solve_initial_velocities
from .integrator_ct import CtState, ct_integrate
from .integrator_lm import LmState, lm_integrate
from .semidiscrete import MeshConfig
from .tableaus import get_tableau
from .trajectory import CsvSink, Trajectory, format_value

Reference = Callable[[np.ndarray, float], np.ndarray]

TWO_SOLITON_START = -5.0
TWO_SOLITON_PERIOD = 27.57
TWO_SOLITON_BOUNCES = (5.0, 18.79, 32.57)
SLOPE_WINDOW = 3
STUDY_COLUMNS = ("N", "N_plus_1", "linf_error", "local_slope", "status")


@dataclass(frozen=True)
class ProblemSetup:
    """Boundary data, initial profile and (when known) the exact solution of one problem."""

    name: str
    mesh: MeshConfig
    profile: InitialProfile
    reference: Optional[Reference] = None
    annotations: Dict[str, Any] = field(default_factory=dict)


def _zeros(X):
    return np.zeros_like(np.asarray(X, dtype=float))


def build_problem(cfg: ExperimentConfig) -> ProblemSetup:
    if cfg.problem == "Vacuum":
        mesh = MeshConfig(N=cfg.N, Xmax=cfg.Xmax, yL=0.0, yR=0.0, delta_min_factor=cfg.delta_min_factor)
        return ProblemSetup(
            name=cfg.problem,
            mesh=mesh,
            profile=InitialProfile(a=_zeros, b=_zeros, aprime=_zeros),
            reference=lambda X, t: _zeros(X),
        )

    if cfg.problem == "SingleSolitonBounce":
        mesh = MeshConfig(N=cfg.N, Xmax=cfg.Xmax, yL=0.0, yR=2.0 * np.pi, delta_min_factor=cfg.delta_min_factor)
        params = SolitonParams(X0=cfg.X0, v=cfg.v, Xmax=cfg.Xmax)
        profile = InitialProfile(
            a=lambda X: soliton(X, 0.0, params),
            b=lambda X: soliton_t(X, 0.0, params),
            aprime=lambda X: soliton_X(X, 0.0, params),
        )
        # the bounce construction assumes the kink starts mid-domain
        if not np.isclose(cfg.X0, 0.5 * cfg.Xmax):
            return ProblemSetup(name=cfg.problem, mesh=mesh, profile=profile)
        T = find_bounce_time(cfg.Xmax, cfg.v)
        return ProblemSetup(
            name=cfg.problem,
            mesh=mesh,
            profile=profile,
            reference=lambda X, t: nearly_exact_bounce(X, t, cfg.Xmax, cfg.v, T),
            annotations={"bounce_time": T},
        )

    if cfg.problem == "TwoSoliton":
        mesh = MeshConfig(
            N=cfg.N, Xmax=cfg.Xmax, yL=-2.0 * np.pi, yR=2.0 * np.pi, delta_min_factor=cfg.delta_min_factor
        )
        shift, v = cfg.X0, cfg.v
        profile = InitialProfile(
            a=lambda X: two_soliton(np.asarray(X) - shift, TWO_SOLITON_START, v),
            b=lambda X: two_soliton_t(np.asarray(X) - shift, TWO_SOLITON_START, v),
            aprime=lambda X: two_soliton_X(np.asarray(X) - shift, TWO_SOLITON_START, v),
        )
        return ProblemSetup(
            name=cfg.problem,
            mesh=mesh,
            profile=profile,
            annotations={
                "period": TWO_SOLITON_PERIOD,
                "bounce_times": list(TWO_SOLITON_BOUNCES),
                "continuum_energy": 16.0 / np.sqrt(1.0 - v * v),
            },
        )

    raise ConfigError(f"unknown problem {cfg.problem!r}")


def build_constraints(cfg: ExperimentConfig, mesh: MeshConfig) -> ConstraintSet:
    if cfg.strategy == "UniformMesh":
        return ConstraintSet.uniform(mesh)
    return ConstraintSet.arclength(mesh, cfg.alpha)


def linf_error(traj: Trajectory, reference: Reference) -> float:
    """Largest |y_i(t_n) − reference(X_i(t_n), t_n)| over recorded steps and all nodes."""
    if not len(traj):
        raise ValueError("cannot measure the error of an empty trajectory")
    worst = 0.0
    for rec in traj.records:
        diff = np.abs(rec.y - np.asarray(reference(rec.X, rec.t), dtype=float))
        worst = max(worst, float(np.max(diff)))
    return worst


def _write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class ExperimentRunner(MmviModule):
    """Builds consistent initial data, integrates one configuration and writes its files.

    Output directory layout: ``state.csv`` and ``diagnostics.csv`` are
    streamed while the run advances, ``meta.json`` is written once the run
    has finished or failed.
    """

    def __init__(self, cfg: ExperimentConfig):
        super().__init__(cfg.newton)
        self.cfg = cfg
        self.setup = build_problem(cfg)
        self.constraints = build_constraints(cfg, self.setup.mesh)
        self.density = sine_gordon_density()

    @property
    def output_dir(self) -> Path:
        return Path(self.cfg.output_dir)

    def initial_state(self) -> Union[CtState, LmState]:
        cfg = self.cfg
        q0 = solve_initial_positions(self.setup.profile, self.setup.mesh, self.constraints, cfg.homotopy_d, self.newton)
        vel0 = solve_initial_velocities(q0, self.setup.profile, self.constraints)
        return initial_phase(q0, vel0, cfg.strategy, self.density, self.constraints)

    def _integrate(self, state0, sink: CsvSink) -> Trajectory:
        cfg = self.cfg
        if cfg.strategy == "LM":
            return lm_integrate(
                state0,
                cfg.dt,
                cfg.nsteps,
                cfg.scheme,
                self.constraints,
                self.density,
                sink,
                newton=self.newton,
                record_every=cfg.record_every,
                kkt_monitor_every=cfg.kkt_monitor_every,
            )
        return ct_integrate(
            state0,
            cfg.dt,
            cfg.nsteps,
            get_tableau(cfg.scheme),
            self.constraints,
            self.density,
            sink,
            newton=self.newton,
            record_every=cfg.record_every,
        )

    def run(self) -> Trajectory:
        cfg = self.cfg
        out = self.output_dir
        out.mkdir(parents=True, exist_ok=True)
        self.logger.info(
            "run %s/%s/%s: N=%d dt=%g t_max=%g -> %s", cfg.problem, cfg.strategy, cfg.scheme, cfg.N, cfg.dt, cfg.t_max, out
        )
        started = time.perf_counter()
        try:
            state0 = self.initial_state()
            with CsvSink(out, cfg.N) as sink:
                trajectory = self._integrate(state0, sink)
        except NUMERICAL_ERRORS as raw:
            exc = as_mmvi_error(raw)
            trajectory = exc.trajectory if exc.trajectory is not None else Trajectory()
            trajectory.termination_reason = exc.termination_reason
            if trajectory.failed_step is None:
                trajectory.failed_step = exc.step_index if exc.step_index is not None else 0
            self._finish(trajectory, time.perf_counter() - started, error=str(exc))
            exc.trajectory = trajectory
            if exc is raw:
                raise
            raise exc from raw
        self._finish(trajectory, time.perf_counter() - started)
        return trajectory

    def _finish(self, trajectory: Trajectory, wall_time: float, error: Optional[str] = None) -> None:
        cfg = self.cfg
        meta = trajectory.metadata
        meta.update(
            {
                "config": cfg.model_dump(mode="json"),
                "wall_time_s": wall_time,
                "termination_reason": trajectory.termination_reason,
                "failed_step": trajectory.failed_step,
                "records": len(trajectory),
                "annotations": self.setup.annotations,
            }
        )
        meta.setdefault("kkt_sigma_min", None)
        if len(trajectory):
            meta["E0"] = trajectory.records[0].energy
        if trajectory.termination_reason == "mesh_crossing":
            meta["t_break"] = meta.get("t_failed")
        if error is not None:
            meta["error"] = error
        _write_json(self.output_dir / "meta.json", meta)
        if error is None:
            self.logger.info("run finished: %d records in %.2fs", len(trajectory), wall_time)
        else:
            self.logger.error("run stopped (%s) at step %s: %s", trajectory.termination_reason, trajectory.failed_step, error)


def run_experiment(cfg: ExperimentConfig) -> Trajectory:
    """Integrate ``cfg`` and write state.csv, diagnostics.csv and meta.json under ``cfg.output_dir``.

    Numerical failures re-raise after the partial trajectory and meta.json
    are on disk; ``exc.trajectory`` holds the partial trajectory.
    """
    return ExperimentRunner(cfg).run()


# === Convergence study ===


@dataclass
class StudyRow:
    N: int
    error: Optional[float]
    status: str
    local_slope: Optional[float] = None

    def csv_row(self) -> List[str]:
        return [str(self.N), str(self.N + 1), format_value(self.error), format_value(self.local_slope), self.status]


@dataclass
class ConvergenceTable:
    rows: List[StudyRow]
    fitted_slope: Optional[float] = None

    def errors(self) -> Dict[int, float]:
        return {row.N: row.error for row in self.rows if row.error is not None}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": [
                {"N": r.N, "N_plus_1": r.N + 1, "linf_error": r.error, "local_slope": r.local_slope, "status": r.status}
                for r in self.rows
            ],
            "fitted_slope": self.fitted_slope,
        }


def _study_worker(config: Dict[str, Any]):
    """Runs in a worker process: one integration and its L∞ error."""
    cfg = ExperimentConfig(**config)
    try:
        runner = ExperimentRunner(cfg)
        trajectory = runner.run()
    except NUMERICAL_ERRORS as exc:
        return cfg.N, None, as_mmvi_error(exc).termination_reason
    return cfg.N, linf_error(trajectory, runner.setup.reference), "completed"


def _slope(Ns: np.ndarray, errors: np.ndarray) -> float:
    return float(-np.polyfit(np.log(Ns + 1.0), np.log(errors), 1)[0])


def convergence_study(
    base: ExperimentConfig, Ns: Iterable[int], workers: Optional[int] = None
) -> ConvergenceTable:
    """L∞ error against the exact solution for each N, with local and fitted slopes.

    Runs are independent and fan out over a process pool; each writes into
    ``<output_dir>/N<N>``. Rows are ordered by N regardless of the order of
    ``Ns``, and failed runs keep their termination reason as status. The
    fitted slope uses the largest ``SLOPE_WINDOW`` successful runs.
    """
    Ns = sorted({int(N) for N in Ns})
    if not Ns:
        raise ConfigError("convergence study needs at least one N")
    if build_problem(derive(base, N=Ns[0])).reference is None:
        raise ConfigError(f"problem {base.problem} has no reference solution for a convergence study")
    study_dir = Path(base.output_dir)
    configs = [derive(base, N=N, output_dir=study_dir / f"N{N}").model_dump(mode="json") for N in Ns]
    workers = workers or base.workers
    logger = logging.getLogger("mmvi.harness")

    if workers <= 1 or len(configs) == 1:
        results = [_study_worker(config) for config in configs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(configs))) as pool:
            results = list(pool.map(_study_worker, configs))

    rows = [StudyRow(N=N, error=error, status=status) for N, error, status in results]
    previous: Optional[StudyRow] = None
    for row in rows:
        if row.error is None:
            logger.warning("convergence run N=%d failed: %s", row.N, row.status)
            continue
        if previous is not None and row.error > 0 and previous.error > 0:
            row.local_slope = _slope(np.array([previous.N, row.N], dtype=float), np.array([previous.error, row.error]))
        previous = row
        logger.info("N=%d: L_inf error %.6e, local slope %s", row.N, row.error, row.local_slope)

    good = [row for row in rows if row.error is not None and row.error > 0][-SLOPE_WINDOW:]
    fitted = None
    if len(good) >= 2:
        fitted = _slope(np.array([r.N for r in good], dtype=float), np.array([r.error for r in good]))
    table = ConvergenceTable(rows=rows, fitted_slope=fitted)

    study_dir.mkdir(parents=True, exist_ok=True)
    with (study_dir / "study.csv").open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(STUDY_COLUMNS)
        writer.writerows(row.csv_row() for row in rows)
    _write_json(study_dir / "study_summary.json", table.to_dict())
    return table


# === Energy study ===


@dataclass
class EnergySummary:
    E0: float
    max_deviation: float
    drift_slope: float
    oscillation_amplitude: float
    termination_reason: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "E0": self.E0,
            "max_deviation": self.max_deviation,
            "drift_slope": self.drift_slope,
            "oscillation_amplitude": self.oscillation_amplitude,
            "termination_reason": self.termination_reason,
        }


def summarize_energy(trajectory: Trajectory) -> EnergySummary:
    t, E = trajectory.times, trajectory.energies
    if E.size == 0:
        raise ValueError("cannot summarize the energy of an empty trajectory")
    drift = float(np.polyfit(t, E, 1)[0]) if E.size > 1 else 0.0
    return EnergySummary(
        E0=float(E[0]),
        max_deviation=float(np.max(np.abs(E - E[0]))),
        drift_slope=drift,
        oscillation_amplitude=float(np.max(E) - np.min(E)),
        termination_reason=trajectory.termination_reason,
    )


def energy_study(cfg: ExperimentConfig) -> EnergySummary:
    """Run ``cfg`` (a TwoSoliton problem) and write energy.csv plus energy_summary.json."""
    if cfg.problem != "TwoSoliton":
        raise ConfigError(f"energy study runs the TwoSoliton problem, got {cfg.problem}")
    trajectory = run_experiment(cfg)
    summary = summarize_energy(trajectory)
    out = Path(cfg.output_dir)
    with (out / "energy.csv").open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(("t", "E_N"))
        writer.writerows((format_value(rec.t), format_value(rec.energy)) for rec in trajectory.records)
    _write_json(out / "energy_summary.json", summary.to_dict())
    return summary
