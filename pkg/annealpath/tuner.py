"""Iterative anneal-offset tuning.

Record ``k`` holds the offsets the k-th run used and the offsets computed for
the next run. The first run is always the linear schedule.
"""

import logging
import math
import time
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Literal

import humanize
import numpy as np
import pandas as pd
from pydantic import Field, model_validator

from annealpath.config import DEFAULT_EVENTS, DEFAULT_GRID_POINTS, DEFAULT_LEVELS, to_ghz
from annealpath.engine import EvolutionConfig
from annealpath.errors import ConfigError
from annealpath.problems import ProblemInstance, analyze
from annealpath.runs import RunRequest, execute
from annealpath.sampler import RunReport, derive_seed, in_landau_zener_regime
from annealpath.schedule import OffsetSchedule, clamp_offsets
from annealpath.spectrum import SpectrumTrace, min_gap, spectrum_along_anneal
from annealpath.utils.parallel import map_ordered
from annealpath.utils.typing import FloppinessSource, LevelMode, Record, TunerMethod

log = logging.getLogger(__name__)

SpectrumHook = Callable[[int, SpectrumTrace], None]

# Per-qubit statistic column prefix in exported trajectories.
STATISTIC_COLUMNS: dict[str, str] = {
    "floppiness": "mu",
    "sigma-average": "sigma_stat",
    "kiefer-wolfowitz": "quotient",
}


class TunerConfig(Record):
    method: TunerMethod = "floppiness"
    iterations: int = Field(default=40, ge=1)
    alpha: float = -0.02
    kw_sign: Literal[-1, 1] = -1
    kw_alpha_exponent: float = -1.0
    kw_c_exponent: float = -1.0 / 3.0
    kw_evaluate: bool = True
    events_per_run: int = Field(default=DEFAULT_EVENTS, ge=1)
    master_seed: int = Field(default=0, ge=0)
    floppiness_source: FloppinessSource = "events"
    level_mode: LevelMode = "exact"
    allow_extreme: bool = False
    evolution: EvolutionConfig = EvolutionConfig()
    spectrum_iterations: tuple[int, ...] = ()
    grid_points: int = Field(default=DEFAULT_GRID_POINTS, ge=2)
    levels: int = Field(default=DEFAULT_LEVELS, ge=2)

    @model_validator(mode="after")
    def _check_iterations(self) -> "TunerConfig":
        for k in self.spectrum_iterations:
            if not 1 <= k <= self.iterations:
                raise ValueError(f"spectrum iteration {k} outside 1..{self.iterations}")
        return self


class TunerRecord(Record):
    k: int
    offsets: tuple[float, ...]
    next_offsets: tuple[float, ...]
    statistic: tuple[float, ...]
    report: RunReport | None = None
    probes: tuple[RunReport, ...] = ()
    clamped: tuple[bool, ...] = ()
    flagged: bool = False
    min_gap_s: float | None = None
    min_gap: float | None = None


class TunerTrajectory(Record):
    label: str
    anneal_time: float
    config: TunerConfig
    records: tuple[TunerRecord, ...]
    probe_runs: int = 0
    evaluation_runs: int = 0

    @property
    def final_offsets(self) -> tuple[float, ...]:
        return self.records[-1].next_offsets

    def offsets_at(self, k: int) -> tuple[float, ...]:
        """Offsets used by run k; k=0 is the all-zero start."""
        if k == 0:
            return self.records[0].offsets
        if not 1 <= k <= len(self.records):
            raise ConfigError(f"iteration {k} outside 0..{len(self.records)}")
        return self.records[k - 1].offsets

    def to_frame(self) -> pd.DataFrame:
        prefix = STATISTIC_COLUMNS[self.config.method]
        rows = []
        for record in self.records:
            report = record.report
            row = {
                "k": record.k,
                "success_probability": report.success_probability if report else math.nan,
                "final_avg_energy_GHz": to_ghz(report.final_avg_energy) if report else math.nan,
                "flagged": int(record.flagged),
            }
            row.update({f"gamma_{i + 1}": g for i, g in enumerate(record.offsets)})
            row.update({f"{prefix}_{i + 1}": v for i, v in enumerate(record.statistic)})
            if record.min_gap is not None:
                row["min_gap_s"] = record.min_gap_s
                row["min_gap_GHz"] = to_ghz(record.min_gap)
            rows.append(row)
        return pd.DataFrame(rows)


# --- Checkpoints ---

class TunerCheckpoint(Record):
    problem: ProblemInstance
    trajectory: TunerTrajectory


def save_checkpoint(path: str | Path, problem: ProblemInstance, trajectory: TunerTrajectory) -> Path:
    path = Path(path)
    staging = path.with_suffix(path.suffix + ".tmp")
    staging.write_text(TunerCheckpoint(problem=problem, trajectory=trajectory).model_dump_json(indent=1))
    staging.replace(path)
    return path


def load_checkpoint(path: str | Path) -> TunerCheckpoint:
    path = Path(path)
    try:
        return TunerCheckpoint.model_validate_json(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc


# --- Loop ---

class _Session:
    """State shared by the three update rules."""

    def __init__(self, problem, anneal_time, config, jobs, on_spectrum):
        self.problem = problem
        self.anneal_time = anneal_time
        self.config = config
        self.jobs = jobs
        self.on_spectrum = on_spectrum
        self.probe_runs = 0
        self.evaluation_runs = 0

    def schedule(self, offsets: Sequence[float]) -> OffsetSchedule:
        return OffsetSchedule(
            gammas=tuple(float(g) for g in offsets),
            anneal_time=self.anneal_time,
            allow_extreme=self.config.allow_extreme,
        )

    def request(self, offsets: Sequence[float], seed: int, keep_events: bool = True) -> RunRequest:
        return RunRequest(
            problem=self.problem,
            schedule=self.schedule(offsets),
            evolution=self.config.evolution,
            n_events=self.config.events_per_run,
            seed=seed,
            level_mode=self.config.level_mode,
            keep_events=keep_events,
        )

    def run(self, offsets: Sequence[float], k: int) -> RunReport:
        self.evaluation_runs += 1
        return execute(self.request(offsets, derive_seed(self.config.master_seed, k))).report

    def clamp(self, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return clamp_offsets(offsets, self.config.allow_extreme)

    def gap(self, k: int, offsets: Sequence[float]) -> tuple[float | None, float | None]:
        if k not in self.config.spectrum_iterations:
            return None, None
        trace = spectrum_along_anneal(
            self.problem, self.schedule(offsets), self.config.grid_points, self.config.levels, jobs=self.jobs
        )
        if self.on_spectrum is not None:
            self.on_spectrum(k, trace)
        found = min_gap(trace, refine=True)
        log.info(f"Iteration {k}: min gap {found.gap_ghz:.4f} GHz at s={found.s:.4f}.")
        return found.s, found.gap

    def check_regime(self, k: int, report: RunReport | None) -> None:
        if k != 1 or report is None:
            return
        analysis = analyze(self.problem)
        if not in_landau_zener_regime(report, analysis):
            log.warning(
                f"Final <E>={to_ghz(report.exact_final_energy):.4f} GHz is outside "
                f"[{to_ghz(analysis.ground_energy):.4f}, {to_ghz(analysis.first_excited_energy):.4f}] GHz; "
                "offset tuning is unlikely to help at this anneal time."
            )


def _statistic_step(session: _Session, k: int, offsets: np.ndarray) -> TunerRecord:
    config = session.config
    report = session.run(offsets, k)
    exact = config.floppiness_source == "exact"
    flagged = False
    if config.method == "floppiness":
        if exact:
            statistic = np.asarray(report.exact_floppiness)
        elif report.floppiness_empty:
            statistic = np.zeros(len(offsets))
            flagged = True
            log.warning(f"Iteration {k}: no events at the first-excited level; offsets unchanged.")
        else:
            statistic = np.asarray(report.floppiness)
    else:
        sigma = report.exact_sigma_z_avg if exact else report.sigma_z_avg
        statistic = 1.0 - np.abs(np.asarray(sigma))

    next_offsets, clamped = session.clamp(offsets + config.alpha * statistic)
    gap_s, gap = session.gap(k, offsets)
    return TunerRecord(
        k=k,
        offsets=tuple(float(g) for g in offsets),
        next_offsets=tuple(float(g) for g in next_offsets),
        statistic=tuple(float(v) for v in statistic),
        report=report,
        clamped=tuple(bool(c) for c in clamped),
        flagged=flagged,
        min_gap_s=gap_s,
        min_gap=gap,
    )


def _kiefer_wolfowitz_step(session: _Session, k: int, offsets: np.ndarray) -> TunerRecord:
    config = session.config
    gain = k ** config.kw_alpha_exponent
    width = k ** config.kw_c_exponent
    n = len(offsets)

    probes, probe_clamped, requests = [], [], []
    for i in range(n):
        for side, sign in enumerate((1.0, -1.0)):
            shifted = offsets.copy()
            shifted[i] += sign * width
            shifted, mask = session.clamp(shifted)
            probes.append(shifted[i])
            probe_clamped.append(bool(mask[i]))
            requests.append(session.request(shifted, derive_seed(config.master_seed, k, i + 1, side), keep_events=False))
    if any(probe_clamped):
        log.debug(f"Iteration {k}: {sum(probe_clamped)} probe(s) evaluated at the offset window boundary.")

    reports = [outcome.report for outcome in map_ordered(execute, requests, jobs=session.jobs)]
    session.probe_runs += len(reports)

    quotient = np.zeros(n)
    for i in range(n):
        plus, minus = reports[2 * i], reports[2 * i + 1]
        distance = probes[2 * i] - probes[2 * i + 1]
        if distance > 0:
            if config.floppiness_source == "exact":
                delta = plus.exact_final_energy - minus.exact_final_energy
            else:
                delta = plus.final_avg_energy - minus.final_avg_energy
            quotient[i] = delta / distance

    next_offsets, _ = session.clamp(offsets + config.kw_sign * gain * quotient)
    report = session.run(offsets, k) if config.kw_evaluate else None
    gap_s, gap = session.gap(k, offsets)
    return TunerRecord(
        k=k,
        offsets=tuple(float(g) for g in offsets),
        next_offsets=tuple(float(g) for g in next_offsets),
        statistic=tuple(float(q) for q in quotient),
        report=report,
        probes=tuple(reports),
        clamped=tuple(probe_clamped),
        min_gap_s=gap_s,
        min_gap=gap,
    )


def tune(
    problem: ProblemInstance,
    anneal_time: float,
    config: TunerConfig,
    jobs: int = 1,
    resume_from: TunerCheckpoint | None = None,
    on_record: Callable[[TunerTrajectory], None] | None = None,
    on_spectrum: SpectrumHook | None = None,
) -> TunerTrajectory:
    """Run ``config.iterations`` tuning iterations, continuing a checkpoint if given."""
    session = _Session(problem, anneal_time, config, jobs, on_spectrum)
    records: list[TunerRecord] = []
    offsets = np.zeros(problem.n_qubits)
    if resume_from is not None:
        previous = resume_from.trajectory
        extendable = previous.config.model_copy(
            update={"iterations": config.iterations, "spectrum_iterations": config.spectrum_iterations}
        )
        if resume_from.problem != problem or previous.anneal_time != anneal_time or extendable != config:
            raise ConfigError("checkpoint was written for a different problem, anneal time or tuner config")
        if len(previous.records) > config.iterations:
            raise ConfigError(f"checkpoint already holds {len(previous.records)} iterations")
        records = list(previous.records)
        session.probe_runs = previous.probe_runs
        session.evaluation_runs = previous.evaluation_runs
        if records:
            offsets = np.asarray(records[-1].next_offsets)
        log.info(f"Resuming '{problem.label}' after iteration {len(records)}.")

    step = _kiefer_wolfowitz_step if config.method == "kiefer-wolfowitz" else _statistic_step
    started = time.perf_counter()
    trajectory = None
    for k in range(len(records) + 1, config.iterations + 1):
        record = step(session, k, offsets)
        session.check_regime(k, record.report)
        records.append(record)
        offsets = np.asarray(record.next_offsets)
        trajectory = _assemble(problem, anneal_time, config, records, session)
        if on_record is not None:
            on_record(trajectory)
        if record.report is not None:
            log.info(f"Iteration {k}/{config.iterations}: P_success={record.report.success_probability:.6f}")

    if trajectory is None:
        trajectory = _assemble(problem, anneal_time, config, records, session)
    log.info(
        f"Tuned '{problem.label}' ({config.method}, t_a={anneal_time} ns) with "
        f"{humanize.intcomma(session.probe_runs + session.evaluation_runs)} anneal runs "
        f"({humanize.intcomma(session.probe_runs)} probes) in {humanize.naturaldelta(time.perf_counter() - started)}."
    )
    return trajectory


def _assemble(problem, anneal_time, config, records, session) -> TunerTrajectory:
    return TunerTrajectory(
        label=problem.label,
        anneal_time=anneal_time,
        config=config,
        records=tuple(records),
        probe_runs=session.probe_runs,
        evaluation_runs=session.evaluation_runs,
    )


def _require(config: TunerConfig, method: TunerMethod) -> None:
    if config.method != method:
        raise ConfigError(f"tuner config has method '{config.method}', expected '{method}'")


def tune_floppiness(problem: ProblemInstance, anneal_time: float, config: TunerConfig, **kwargs) -> TunerTrajectory:
    """gamma_{k+1} = gamma_k + alpha * mu_k, clamped to the offset window."""
    _require(config, "floppiness")
    return tune(problem, anneal_time, config, **kwargs)


def tune_sigma_average(problem: ProblemInstance, anneal_time: float, config: TunerConfig, **kwargs) -> TunerTrajectory:
    """Same loop driven by 1 - |mean spin| per qubit."""
    _require(config, "sigma-average")
    return tune(problem, anneal_time, config, **kwargs)


def tune_kiefer_wolfowitz(problem: ProblemInstance, anneal_time: float, config: TunerConfig, **kwargs) -> TunerTrajectory:
    """Symmetric finite-difference descent on the final average energy, 2N probe runs per iteration."""
    _require(config, "kiefer-wolfowitz")
    return tune(problem, anneal_time, config, **kwargs)
