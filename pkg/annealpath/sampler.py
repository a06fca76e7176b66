"""Output events drawn from the final state and the observables built from them.

Events are basis indices internally; they become bitstrings (character k is
qubit k) only in reports and CSV files.
"""

import logging
from collections.abc import Sequence

import numpy as np
import pandas as pd
from pydantic import Field

from annealpath.config import DEGENERACY_TOL, to_ghz
from annealpath.engine import NORM_TOL, QuantumState
from annealpath.errors import SamplingError, StateError
from annealpath.problems import (
    ClassicalAnalysis,
    ProblemInstance,
    analyze,
    energy_table,
    floppy_mask,
    index_to_bitstring,
    spin_table,
)
from annealpath.utils.typing import LevelMode, Record

log = logging.getLogger(__name__)


# --- Seeds ---

def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; identical across platforms for a given seed."""
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(master_seed: int, *path: int) -> int:
    """64-bit child seed for the run addressed by ``path`` under ``master_seed``.

    The rule is ``SeedSequence(master_seed, spawn_key=path)``: runs with
    different paths draw independent streams, and the same path always maps
    to the same seed.
    """
    sequence = np.random.SeedSequence(master_seed, spawn_key=tuple(int(p) for p in path))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


# --- Sampling ---

def sample_events(state: QuantumState, n: int, seed: int) -> np.ndarray:
    """n i.i.d. basis indices drawn from |amplitude|^2."""
    if n < 1:
        raise SamplingError(f"need at least one event, got n={n}")
    probabilities = state.probabilities()
    total = probabilities.sum()
    if abs(total - 1.0) > NORM_TOL:
        raise StateError(f"cannot sample a state with norm^2={total:.12f}")
    return make_rng(seed).choice(probabilities.size, size=n, p=probabilities / total)


def success_probability(state: QuantumState, problem: ProblemInstance) -> float:
    ground = list(analyze(problem).ground_indices)
    return float(state.probabilities()[ground].sum())


def _check_events(events: np.ndarray, problem: ProblemInstance) -> np.ndarray:
    events = np.asarray(events, dtype=np.int64)
    if events.size == 0:
        raise SamplingError("event list is empty")
    if events.min() < 0 or events.max() >= problem.dimension:
        raise SamplingError(f"event index outside 0..{problem.dimension - 1}")
    return events


def observables_from_events(events: np.ndarray, problem: ProblemInstance) -> tuple[np.ndarray, float]:
    """(per-qubit mean spin, mean classical energy) over the events."""
    events = _check_events(events, problem)
    counts = np.bincount(events, minlength=problem.dimension)
    sigma = spin_table(problem.n_qubits) @ counts / events.size
    energy = float(energy_table(problem) @ counts / events.size)
    return sigma.astype(float), energy


class FloppinessEstimate(Record):
    values: tuple[float, ...]
    level: float | None
    sample_size: int
    empty: bool


def empirical_floppiness(events: np.ndarray, problem: ProblemInstance, level_mode: LevelMode = "exact") -> FloppinessEstimate:
    """Pair ratio mu_i over the events found at the first-excited energy.

    With ``level_mode="estimated"`` the level is the second-lowest distinct
    energy among the events rather than the enumerated one.
    """
    events = _check_events(events, problem)
    energies = energy_table(problem)
    sampled = energies[events]
    if level_mode == "exact":
        level = analyze(problem).first_excited_energy
    else:
        distinct = np.unique(sampled)
        above = distinct[distinct > distinct[0] + DEGENERACY_TOL]
        level = float(above[0]) if above.size else None

    zeros = tuple(0.0 for _ in range(problem.n_qubits))
    if level is None:
        return FloppinessEstimate(values=zeros, level=None, sample_size=0, empty=True)
    in_level = np.abs(sampled - level) <= DEGENERACY_TOL
    size = int(in_level.sum())
    if size == 0:
        return FloppinessEstimate(values=zeros, level=level, sample_size=0, empty=True)

    states, counts = np.unique(events[in_level], return_counts=True)
    pairs = floppy_mask(problem, states, level) @ counts
    return FloppinessEstimate(
        values=tuple(float(p) / (2 * size) for p in pairs),
        level=level,
        sample_size=size,
        empty=False,
    )


# --- Amplitude-exact observables ---

def exact_sigma_z(state: QuantumState) -> np.ndarray:
    return spin_table(state.n_qubits) @ state.probabilities()


def expected_energy(state: QuantumState, problem: ProblemInstance) -> float:
    """<C H_P> in the final state."""
    return float(energy_table(problem) @ state.probabilities())


def first_excited_population(state: QuantumState, problem: ProblemInstance) -> float:
    first = list(analyze(problem).first_excited_indices)
    return float(state.probabilities()[first].sum())


def exact_floppiness(state: QuantumState, problem: ProblemInstance) -> np.ndarray:
    """Population-weighted floppy fraction over the first-excited manifold, halved."""
    analysis = analyze(problem)
    first = np.asarray(analysis.first_excited_indices, dtype=np.int64)
    weights = state.probabilities()[first]
    total = weights.sum()
    if total == 0.0:
        return np.zeros(problem.n_qubits)
    return floppy_mask(problem, first, analysis.first_excited_energy) @ weights / (2 * total)


# --- Reports ---

class EventCount(Record):
    bitstring: str
    energy: float
    count: int = Field(ge=1)


class RunReport(Record):
    label: str
    anneal_time: float
    offsets: tuple[float, ...]
    seed: int
    angular_factor: float
    n_events: int
    events: tuple[EventCount, ...] = ()
    success_probability: float
    empirical_success: float
    sigma_z_avg: tuple[float, ...]
    exact_sigma_z_avg: tuple[float, ...]
    final_avg_energy: float
    exact_final_energy: float
    floppiness: tuple[float, ...]
    floppiness_empty: bool
    exact_floppiness: tuple[float, ...]
    first_excited_population: float

    def without_events(self) -> "RunReport":
        return self.model_copy(update={"events": ()})

    def events_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(e.bitstring, to_ghz(e.energy), e.count) for e in self.events],
            columns=["bitstring", "energy_GHz", "count"],
        )


def build_report(
    problem: ProblemInstance,
    offsets: Sequence[float],
    anneal_time: float,
    state: QuantumState,
    n_events: int,
    seed: int,
    angular_factor: float,
    level_mode: LevelMode = "exact",
) -> RunReport:
    events = sample_events(state, n_events, seed)
    sigma, energy = observables_from_events(events, problem)
    floppiness = empirical_floppiness(events, problem, level_mode)
    if floppiness.empty:
        log.debug(f"No events at the first-excited level for '{problem.label}' (t_a={anneal_time} ns).")

    energies = energy_table(problem)
    ground = set(analyze(problem).ground_indices)
    indices, counts = np.unique(events, return_counts=True)
    return RunReport(
        label=problem.label,
        anneal_time=anneal_time,
        offsets=tuple(float(g) for g in offsets),
        seed=seed,
        angular_factor=angular_factor,
        n_events=n_events,
        events=tuple(
            EventCount(bitstring=index_to_bitstring(int(k), problem.n_qubits), energy=float(energies[k]), count=int(c))
            for k, c in zip(indices, counts)
        ),
        success_probability=success_probability(state, problem),
        empirical_success=sum(int(c) for k, c in zip(indices, counts) if int(k) in ground) / n_events,
        sigma_z_avg=tuple(float(v) for v in sigma),
        exact_sigma_z_avg=tuple(float(v) for v in exact_sigma_z(state)),
        final_avg_energy=energy,
        exact_final_energy=expected_energy(state, problem),
        floppiness=floppiness.values,
        floppiness_empty=floppiness.empty,
        exact_floppiness=tuple(float(v) for v in exact_floppiness(state, problem)),
        first_excited_population=first_excited_population(state, problem),
    )


def in_landau_zener_regime(report: RunReport, analysis: ClassicalAnalysis, tol: float = 1e-6) -> bool:
    """Final <E> lies between the ground and first-excited problem energies."""
    return analysis.ground_energy - tol <= report.exact_final_energy <= analysis.first_excited_energy + tol
