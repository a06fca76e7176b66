import logging
from dataclasses import dataclass

from pydantic import Field

from annealpath.config import DEFAULT_EVENTS
from annealpath.engine import EvolutionConfig, Trajectory, evolve
from annealpath.problems import ProblemInstance
from annealpath.sampler import RunReport, build_report
from annealpath.schedule import OffsetSchedule
from annealpath.utils.typing import LevelMode, Record

log = logging.getLogger(__name__)


class RunRequest(Record):
    """Everything one anneal run depends on; picklable for worker pools."""

    problem: ProblemInstance
    schedule: OffsetSchedule
    evolution: EvolutionConfig = EvolutionConfig()
    n_events: int = Field(default=DEFAULT_EVENTS, ge=1)
    seed: int = Field(ge=0)
    level_mode: LevelMode = "exact"
    keep_events: bool = True
    keep_trajectory: bool = False


@dataclass
class RunOutcome:
    report: RunReport
    trajectory: Trajectory | None = None


def execute(request: RunRequest) -> RunOutcome:
    """Evolve from the uniform superposition, then sample events and build the report."""
    trajectory = evolve(request.problem, request.schedule, request.evolution)
    report = build_report(
        request.problem,
        request.schedule.gammas,
        request.schedule.anneal_time,
        trajectory.final_state,
        request.n_events,
        request.seed,
        request.evolution.angular_factor,
        request.level_mode,
    )
    if not request.keep_events:
        report = report.without_events()
    log.debug(f"Run '{request.problem.label}' seed={request.seed}: P_success={report.success_probability:.6f}")
    return RunOutcome(report=report, trajectory=trajectory if request.keep_trajectory else None)
