"""Command-line front end.

Every experiment command writes into a fresh output directory holding the
echoed ``config.json``, ``run.log`` and plot-ready CSV files. Exit codes:
0 success, 1 usage or configuration error, 2 runtime failure.
"""

import contextlib
import json
import logging
import time
from collections.abc import Iterator, Sequence
from pathlib import Path

import asyncclick as click
import humanize
import pandas as pd
from pydantic import Field, ValidationError, model_validator

from annealpath.config import (
    DEFAULT_ANGULAR_FACTOR,
    DEFAULT_EVENTS,
    DEFAULT_GRID_POINTS,
    DEFAULT_JOBS,
    DEFAULT_LEVELS,
    ENERGY_SCALE_GHZ,
    LOG_FORMAT,
    OUTPUT_ROOT,
    configure_logging,
    to_ghz,
)
from annealpath.engine import EvolutionConfig, evolve
from annealpath.errors import AnnealPathError, ConfigError, ProblemInputError, StageError
from annealpath.problems import (
    BUILTIN_LABELS,
    ProblemInstance,
    analyze,
    builtin,
    compile_2sat,
    dump_problem,
    load_problem,
    penalty_offset,
    read_dimacs,
)
from annealpath.runs import RunRequest, execute
from annealpath.sampler import derive_seed
from annealpath.schedule import OFFSET_CEILING, OffsetSchedule, in_window, offset_floor
from annealpath.spectrum import min_gap, spectrum_along_anneal
from annealpath.tuner import TunerConfig, TunerTrajectory, load_checkpoint, save_checkpoint, tune
from annealpath.utils.parallel import map_ordered
from annealpath.utils.tables import write_csv
from annealpath.utils.typing import EigenSolver, LevelMode, Propagator, Record, TunerMethod

log = logging.getLogger(__name__)

COMMANDS = ("anneal", "sweep-offset", "spectrum", "tune")


class ExperimentConfig(Record):
    """Everything an experiment command's output depends on; echoed as config.json."""

    command: str
    problem: str | None = None
    problem_file: str | None = None
    scale_c: float | None = Field(default=None, gt=0.0)
    anneal_times: tuple[float, ...] = (5.0,)
    time_step: float | None = Field(default=None, gt=0.0)
    propagator: Propagator = "suzuki-trotter-2"
    angular_factor: float = DEFAULT_ANGULAR_FACTOR
    events: int = Field(default=DEFAULT_EVENTS, ge=1)
    seed: int = Field(default=0, ge=0)
    allow_extreme: bool = False
    estimated_level: bool = False
    offsets_file: str | None = None
    checkpoint: str | None = None
    iteration: int | None = Field(default=None, ge=0)
    record_stride: int = Field(default=100, ge=1)
    record_levels: int = Field(default=0, ge=0)
    # spectrum
    grid_points: int = Field(default=DEFAULT_GRID_POINTS, ge=2)
    levels: int = Field(default=DEFAULT_LEVELS, ge=2)
    solver: EigenSolver = "auto"
    with_energy: bool = False
    # sweep-offset
    qubit: str = "each"
    gamma_min: float = -0.9
    gamma_max: float = 1.0
    gamma_step: float = Field(default=0.05, gt=0.0)
    # tune
    method: TunerMethod = "floppiness"
    iterations: int = Field(default=40, ge=1)
    alpha: float = -0.02
    kw_sign: int = -1
    exact_floppiness: bool = False
    spectrum_at: tuple[int, ...] = ()
    resume: str | None = None

    @model_validator(mode="after")
    def _check_sources(self) -> "ExperimentConfig":
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command '{self.command}'")
        if self.resume is None and (self.problem is None) == (self.problem_file is None):
            raise ValueError("give exactly one of --problem and --problem-file")
        if self.kw_sign not in (-1, 1):
            raise ValueError("--kw-sign must be -1 or +1")
        if not self.anneal_times or min(self.anneal_times) <= 0:
            raise ValueError("anneal times must be positive")
        return self

    def referenced_files(self) -> list[Path]:
        names = (self.problem_file, self.offsets_file, self.checkpoint, self.resume)
        return [Path(name) for name in names if name is not None]

    def check_files(self) -> None:
        missing = [str(path) for path in self.referenced_files() if not path.is_file()]
        if missing:
            raise ConfigError(f"missing input file(s): {', '.join(missing)}")

    def evolution(self) -> EvolutionConfig:
        return EvolutionConfig(
            time_step=self.time_step,
            propagator=self.propagator,
            angular_factor=self.angular_factor,
            record_stride=self.record_stride,
            record_levels=self.record_levels,
        )

    def level_mode(self) -> LevelMode:
        return "estimated" if self.estimated_level else "exact"


# --- Helpers ---

@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    """Re-raise any failure inside the block as a StageError naming the stage."""
    try:
        yield
    except (ConfigError, StageError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def resolve_problem(config: ExperimentConfig) -> ProblemInstance:
    try:
        problem = builtin(config.problem) if config.problem else load_problem(config.problem_file)
    except ProblemInputError as exc:
        raise ConfigError(str(exc)) from exc
    return problem.with_scale(config.scale_c) if config.scale_c is not None else problem


def resolve_offsets(config: ExperimentConfig, problem: ProblemInstance) -> tuple[float, ...]:
    if config.offsets_file:
        try:
            data = json.loads(Path(config.offsets_file).read_text())
            gammas = tuple(float(g) for g in (data["gammas"] if isinstance(data, dict) else data))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot read offsets from {config.offsets_file}: {exc}") from exc
    elif config.checkpoint:
        trajectory = load_checkpoint(config.checkpoint).trajectory
        gammas = trajectory.final_offsets if config.iteration is None else trajectory.offsets_at(config.iteration)
    else:
        gammas = (0.0,) * problem.n_qubits
    if len(gammas) != problem.n_qubits:
        raise ConfigError(f"{len(gammas)} offsets given for {problem.n_qubits} qubits")
    try:
        OffsetSchedule(gammas=gammas, anneal_time=1.0, allow_extreme=config.allow_extreme)
    except ValidationError as exc:
        raise ConfigError(f"offsets outside the valid window: {exc}") from exc
    return gammas


def prepare_output(command: str, out: str | None) -> Path:
    path = Path(out) if out else Path(OUTPUT_ROOT) / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    try:
        path.mkdir(parents=True, exist_ok=False)
    except FileExistsError as exc:
        raise ConfigError(f"output directory {path} already exists") from exc
    return path


@contextlib.contextmanager
def run_log(directory: Path) -> Iterator[None]:
    handler = logging.FileHandler(directory / "run.log")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    root.addHandler(handler)
    try:
        yield
    finally:
        root.removeHandler(handler)
        handler.close()


def ta_tag(anneal_time: float) -> str:
    return f"ta{anneal_time:g}"


def output_meta(config: ExperimentConfig, problem: ProblemInstance, **extra) -> dict:
    meta = {
        "problem": problem.label,
        "scale_c": problem.scale_c,
        "angular_factor": repr(config.angular_factor),
        "energy_unit": "GHz",
        "energy_scale_GHz": repr(ENERGY_SCALE_GHZ),
        "time_unit": "ns",
    }
    meta.update(extra)
    return meta


def write_json(path: Path, record: Record) -> Path:
    path.write_text(record.model_dump_json(indent=2) + "\n")
    return path


# --- Experiment stages ---

def do_anneal(config: ExperimentConfig, out: Path, jobs: int) -> None:
    problem = resolve_problem(config)
    gammas = resolve_offsets(config, problem)
    with stage("anneal"):
        requests = [
            RunRequest(
                problem=problem,
                schedule=OffsetSchedule(gammas=gammas, anneal_time=ta, allow_extreme=config.allow_extreme),
                evolution=config.evolution(),
                n_events=config.events,
                seed=derive_seed(config.seed, index),
                level_mode=config.level_mode(),
                keep_trajectory=True,
            )
            for index, ta in enumerate(config.anneal_times)
        ]
        outcomes = map_ordered(execute, requests, jobs=jobs)
    with stage("write"):
        summary = []
        for ta, outcome in zip(config.anneal_times, outcomes):
            report = outcome.report
            tag = ta_tag(ta)
            write_json(out / f"report_{tag}.json", report)
            meta = output_meta(config, problem, anneal_time_ns=ta, seed=report.seed)
            write_csv(out / f"events_{tag}.csv", report.events_frame(), meta)
            write_csv(out / f"trajectory_{tag}.csv", outcome.trajectory.to_frame(), meta)
            summary.append({
                "anneal_time_ns": ta,
                "success_probability": report.success_probability,
                "empirical_success": report.empirical_success,
                "final_avg_energy_GHz": to_ghz(report.final_avg_energy),
                "exact_final_energy_GHz": to_ghz(report.exact_final_energy),
                "first_excited_population": report.first_excited_population,
            })
            click.echo(f"t_a={ta:g} ns: P_success={report.success_probability:.6f} E_f={to_ghz(report.final_avg_energy):.4f} GHz")
        write_csv(out / "summary.csv", pd.DataFrame(summary), output_meta(config, problem))


def sweep_grid(config: ExperimentConfig) -> list[float]:
    count = int(round((config.gamma_max - config.gamma_min) / config.gamma_step)) + 1
    grid = [round(config.gamma_min + j * config.gamma_step, 10) + 0.0 for j in range(count)]
    outside = [g for g in grid if not in_window(g, config.allow_extreme)]
    if outside:
        floor = offset_floor(config.allow_extreme)
        raise ConfigError(f"sweep offsets {outside} outside ({floor}, {OFFSET_CEILING}]")
    return grid


def sweep_qubits(config: ExperimentConfig, problem: ProblemInstance) -> list[int]:
    if config.qubit == "each":
        return list(range(problem.n_qubits))
    try:
        qubit = int(config.qubit)
    except ValueError as exc:
        raise ConfigError(f"--qubit must be 'each' or a qubit number, got '{config.qubit}'") from exc
    if not 1 <= qubit <= problem.n_qubits:
        raise ConfigError(f"qubit {qubit} outside 1..{problem.n_qubits}")
    return [qubit - 1]


def do_sweep(config: ExperimentConfig, out: Path, jobs: int) -> None:
    problem = resolve_problem(config)
    base = resolve_offsets(config, problem)
    grid = sweep_grid(config)
    qubits = sweep_qubits(config, problem)
    for ta_index, ta in enumerate(config.anneal_times):
        with stage("sweep"):
            requests = []
            for qubit in qubits:
                for g_index, gamma in enumerate(grid):
                    gammas = list(base)
                    gammas[qubit] = gamma
                    requests.append(RunRequest(
                        problem=problem,
                        schedule=OffsetSchedule(gammas=tuple(gammas), anneal_time=ta, allow_extreme=config.allow_extreme),
                        evolution=config.evolution(),
                        n_events=config.events,
                        seed=derive_seed(config.seed, ta_index, g_index),
                        level_mode=config.level_mode(),
                        keep_events=False,
                    ))
            started = time.perf_counter()
            reports = [outcome.report for outcome in map_ordered(execute, requests, jobs=jobs)]
            log.info(
                f"Swept {humanize.intcomma(len(reports))} runs at t_a={ta:g} ns "
                f"in {humanize.naturaldelta(time.perf_counter() - started)}."
            )
        with stage("write"):
            for position, qubit in enumerate(qubits):
                rows = []
                for g_index, gamma in enumerate(grid):
                    report = reports[position * len(grid) + g_index]
                    rows.append({
                        "qubit": qubit + 1,
                        "gamma": gamma,
                        "success_probability": report.success_probability,
                        "empirical_success": report.empirical_success,
                        "abs_sigma_z": abs(report.sigma_z_avg[qubit]),
                        "floppiness": report.floppiness[qubit],
                        "exact_floppiness": report.exact_floppiness[qubit],
                        "final_avg_energy_GHz": to_ghz(report.final_avg_energy),
                    })
                meta = output_meta(config, problem, anneal_time_ns=ta, seed=config.seed)
                write_csv(out / f"sweep_{ta_tag(ta)}_q{qubit + 1}.csv", pd.DataFrame(rows), meta)


def do_spectrum(config: ExperimentConfig, out: Path, jobs: int) -> None:
    problem = resolve_problem(config)
    gammas = resolve_offsets(config, problem)
    ta = config.anneal_times[0]
    schedule = OffsetSchedule(gammas=gammas, anneal_time=ta, allow_extreme=config.allow_extreme)
    with stage("spectrum"):
        trace = spectrum_along_anneal(problem, schedule, config.grid_points, config.levels, config.solver, jobs=jobs)
        found = min_gap(trace, refine=True)
    if config.with_energy:
        with stage("evolve"):
            trajectory = evolve(problem, schedule, config.evolution())
            points = trajectory.points
            trace = trace.with_energy([p.s for p in points], [p.avg_energy for p in points])
    with stage("write"):
        meta = output_meta(config, problem, anneal_time_ns=ta, min_gap_s=f"{found.s:.8f}", min_gap_GHz=f"{found.gap_ghz:.8f}")
        write_csv(out / "spectrum.csv", trace.to_frame(), meta)
    click.echo(f"min gap {found.gap_ghz:.4f} GHz at s*={found.s:.4f}")


def do_tune(config: ExperimentConfig, out: Path, jobs: int) -> None:
    checkpoint = load_checkpoint(config.resume) if config.resume else None
    if checkpoint is not None:
        problem = checkpoint.problem
        tuner_config = TunerConfig.model_validate({
            **checkpoint.trajectory.config.model_dump(),
            "iterations": config.iterations,
            "spectrum_iterations": config.spectrum_at,
        })
        anneal_times = (checkpoint.trajectory.anneal_time,)
    else:
        problem = resolve_problem(config)
        tuner_config = TunerConfig(
            method=config.method,
            iterations=config.iterations,
            alpha=config.alpha,
            kw_sign=config.kw_sign,
            events_per_run=config.events,
            master_seed=config.seed,
            floppiness_source="exact" if config.exact_floppiness else "events",
            level_mode=config.level_mode(),
            allow_extreme=config.allow_extreme,
            evolution=config.evolution(),
            spectrum_iterations=config.spectrum_at,
            grid_points=config.grid_points,
            levels=config.levels,
        )
        anneal_times = config.anneal_times

    for ta in anneal_times:
        tag = ta_tag(ta)
        meta = output_meta(
            config, problem,
            anneal_time_ns=ta,
            angular_factor=repr(tuner_config.evolution.angular_factor),
            method=tuner_config.method,
            master_seed=tuner_config.master_seed,
        )

        def keep(trajectory: TunerTrajectory) -> None:
            save_checkpoint(out / f"checkpoint_{tag}.json", problem, trajectory)

        def keep_spectrum(k: int, trace) -> None:
            write_csv(out / f"spectrum_{tag}_k{k}.csv", trace.to_frame(), meta)

        with stage("tune"):
            trajectory = tune(
                problem, ta, tuner_config, jobs=jobs, resume_from=checkpoint, on_record=keep, on_spectrum=keep_spectrum
            )
        with stage("write"):
            write_csv(out / f"trajectory_{tag}.csv", trajectory.to_frame(), meta)
            last = trajectory.records[-1]
            if last.report is not None:
                write_json(out / f"final_report_{tag}.json", last.report)
                click.echo(f"t_a={ta:g} ns: P_success(k={last.k})={last.report.success_probability:.6f}")
            (out / f"final_offsets_{tag}.json").write_text(json.dumps({"gammas": list(trajectory.final_offsets)}) + "\n")


STAGES = {"anneal": do_anneal, "sweep-offset": do_sweep, "spectrum": do_spectrum, "tune": do_tune}


def launch(config: ExperimentConfig, out: str | None, jobs: int) -> Path:
    config.check_files()
    directory = prepare_output(config.command, out)
    write_json(directory / "config.json", config)
    with run_log(directory):
        started = time.perf_counter()
        log.info(f"Running '{config.command}' into {directory}.")
        STAGES[config.command](config, directory, jobs)
        log.info(f"Finished '{config.command}' in {humanize.naturaldelta(time.perf_counter() - started)}.")
    return directory


# --- Commands ---

def problem_options(fn):
    for option in reversed([
        click.option("--problem", help=f"Built-in problem label ({', '.join(BUILTIN_LABELS)})."),
        click.option("--problem-file", type=click.Path(), help="Problem JSON file."),
        click.option("--scale-c", type=float, help="Override the problem energy scale C."),
    ]):
        fn = option(fn)
    return fn


def run_options(fn):
    for option in reversed([
        click.option("--ta", "anneal_times", type=float, multiple=True, help="Anneal time in ns; repeatable."),
        click.option("--tau", "time_step", type=float, help="Time step in ns."),
        click.option("--propagator", type=click.Choice(["suzuki-trotter-2", "exact-midpoint"]), default="suzuki-trotter-2"),
        click.option("--angular-factor", type=float, default=DEFAULT_ANGULAR_FACTOR, show_default=True),
        click.option("--events", type=int, default=DEFAULT_EVENTS, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--allow-extreme", is_flag=True, help="Accept offsets down to (but excluding) -1."),
        click.option(
            "--estimated-level", is_flag=True,
            help="Take the first-excited level from the sampled events instead of enumeration.",
        ),
        click.option("--offsets-file", type=click.Path(), help="JSON list (or {'gammas': [...]}) of offsets."),
        click.option("--checkpoint", type=click.Path(), help="Take offsets from a tuner checkpoint."),
        click.option("--iteration", type=int, help="Checkpoint iteration to take offsets from (default: final)."),
        click.option("--record-stride", type=int, default=100, show_default=True),
        click.option("--config", "config_file", type=click.Path(), help="Re-run an echoed config.json."),
        click.option("--jobs", type=int, default=DEFAULT_JOBS, show_default=True),
        click.option("--out", type=click.Path(), help="Output directory (must not exist)."),
    ]):
        fn = option(fn)
    return fn


def build_config(command: str, config_file: str | None, options: dict) -> ExperimentConfig:
    if config_file:
        try:
            config = ExperimentConfig.model_validate_json(Path(config_file).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_file}: {exc}") from exc
        if config.command != command:
            raise ConfigError(f"{config_file} is a '{config.command}' config, not '{command}'")
        return config
    options = {key: value for key, value in options.items() if value is not None}
    if not options.get("anneal_times"):
        options.pop("anneal_times", None)
    for key in ("spectrum_at",):
        if key in options:
            options[key] = tuple(options[key])
    return ExperimentConfig(command=command, **options)


@click.group()
@click.option("--log-level", default=None, help="Logging level (default from ANNEALPATH_LOG_LEVEL).")
async def cli(log_level):
    """Anneal-offset experiments on small Ising problems."""
    configure_logging(log_level)


@cli.command("list-problems")
async def list_problems():
    for label in BUILTIN_LABELS:
        problem = builtin(label)
        analysis = analyze(problem)
        click.echo(
            f"{label}: N={problem.n_qubits} ground={to_ghz(analysis.ground_energy):g} GHz "
            f"state={','.join(analysis.ground_states)} first_excited={to_ghz(analysis.first_excited_energy):g} GHz "
            f"degeneracy={analysis.degeneracy}"
        )


@cli.command("export-problem")
@click.option("--problem", required=True)
@click.argument("destination", type=click.Path())
async def export_problem(problem, destination):
    try:
        instance = builtin(problem)
    except ProblemInputError as exc:
        raise ConfigError(str(exc)) from exc
    dump_problem(instance, destination)
    click.echo(f"wrote {destination}")


@cli.command("compile-sat")
@click.option("--label", default="")
@click.argument("dimacs", type=click.Path(exists=True, dir_okay=False))
@click.argument("destination", type=click.Path())
async def compile_sat(label, dimacs, destination):
    """Compile a 2-SAT DIMACS file into a problem file."""
    try:
        formula = read_dimacs(Path(dimacs).read_text())
    except ProblemInputError as exc:
        raise ConfigError(str(exc)) from exc
    problem = compile_2sat(formula, label=label or Path(dimacs).stem)
    dump_problem(problem, destination)
    click.echo(f"wrote {destination} (constant offset {penalty_offset(formula):g} dropped)")


@cli.command()
@problem_options
@run_options
@click.option("--record-levels", type=int, default=0, help="Levels to record along the trajectory.")
async def anneal(config_file, out, jobs, **options):
    """One anneal run per --ta value."""
    launch(build_config("anneal", config_file, options), out, jobs)


@cli.command("sweep-offset")
@problem_options
@run_options
@click.option("--qubit", default="each", show_default=True, help="Qubit number or 'each'.")
@click.option("--gamma-min", type=float, default=-0.9, show_default=True)
@click.option("--gamma-max", type=float, default=1.0, show_default=True)
@click.option("--gamma-step", type=float, default=0.05, show_default=True)
async def sweep_offset(config_file, out, jobs, **options):
    """Vary one qubit's offset at a time, keeping the others fixed."""
    launch(build_config("sweep-offset", config_file, options), out, jobs)


@cli.command()
@problem_options
@run_options
@click.option("--grid", "grid_points", type=int, default=DEFAULT_GRID_POINTS, show_default=True)
@click.option("--levels", type=int, default=DEFAULT_LEVELS, show_default=True)
@click.option("--solver", type=click.Choice(["auto", "dense", "lanczos"]), default="auto")
@click.option("--with-energy", is_flag=True, help="Overlay <E(s)> from an anneal at the first --ta.")
async def spectrum(config_file, out, jobs, **options):
    """Lowest levels along the anneal and the minimal gap."""
    launch(build_config("spectrum", config_file, options), out, jobs)


@cli.command("tune")
@problem_options
@run_options
@click.option("--method", type=click.Choice(["floppiness", "sigma-average", "kiefer-wolfowitz"]), default="floppiness")
@click.option("--iterations", type=int, default=40, show_default=True)
@click.option("--alpha", type=float, default=-0.02, show_default=True)
@click.option("--kw-sign", type=click.Choice(["-1", "1", "+1"]), default="-1", show_default=True)
@click.option("--exact-floppiness", is_flag=True, help="Drive the update with amplitude-exact statistics.")
@click.option("--spectrum-at", type=int, multiple=True, help="Record spectra at this iteration; repeatable.")
@click.option("--grid", "grid_points", type=int, default=DEFAULT_GRID_POINTS, show_default=True)
@click.option("--levels", type=int, default=DEFAULT_LEVELS, show_default=True)
@click.option("--resume", type=click.Path(), help="Continue the trajectory stored in a checkpoint.")
async def tune_command(config_file, out, jobs, kw_sign, **options):
    """Iterative offset tuning."""
    options["kw_sign"] = int(kw_sign)
    launch(build_config("tune", config_file, options), out, jobs)


def run_cli(argv: Sequence[str] | None = None) -> int:
    """Invoke the CLI and map failures to exit codes."""
    try:
        result = cli(args=list(argv) if argv is not None else None, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (ValidationError, ConfigError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        return 1
    except StageError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except AnnealPathError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return result if isinstance(result, int) else 0
