"""Instantaneous spectra along the anneal and the minimal ground-state gap."""

import functools
import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import humanize
import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

from annealpath.config import DEFAULT_GRID_POINTS, DEFAULT_LEVELS, to_ghz
from annealpath.engine import hamiltonian_at
from annealpath.errors import ProblemInputError
from annealpath.problems import ProblemInstance, analyze
from annealpath.schedule import OffsetSchedule
from annealpath.utils.parallel import map_ordered
from annealpath.utils.typing import EigenSolver

log = logging.getLogger(__name__)

REFINE_TOL = 1e-4


class MinGap(NamedTuple):
    s: float
    gap: float

    @property
    def gap_ghz(self) -> float:
        return to_ghz(self.gap)


@dataclass
class SpectrumTrace:
    grid: np.ndarray
    levels: np.ndarray
    problem: ProblemInstance
    schedule: OffsetSchedule
    solver: EigenSolver = "auto"
    avg_energy: np.ndarray | None = None

    @property
    def n_levels(self) -> int:
        return self.levels.shape[1]

    @property
    def gaps(self) -> np.ndarray:
        return self.levels[:, 1] - self.levels[:, 0]

    @property
    def min_gap(self) -> MinGap:
        return min_gap(self, refine=False)

    def with_energy(self, s: Sequence[float], energy: Sequence[float]) -> "SpectrumTrace":
        """Attach <E(s)> sampled elsewhere, interpolated onto the grid."""
        aligned = np.interp(self.grid, np.asarray(s, dtype=float), np.asarray(energy, dtype=float))
        return SpectrumTrace(self.grid, self.levels, self.problem, self.schedule, self.solver, aligned)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"s": self.grid})
        for m in range(self.n_levels):
            frame[f"level_{m}_GHz"] = to_ghz(self.levels[:, m])
        if self.avg_energy is not None:
            frame["avg_energy_GHz"] = to_ghz(self.avg_energy)
        return frame


def _levels_at(problem: ProblemInstance, schedule: OffsetSchedule, k: int, solver: EigenSolver, s: float) -> np.ndarray:
    values, _ = hamiltonian_at(problem, schedule, s).lowest(k, solver=solver)
    return values


def spectrum_along_anneal(
    problem: ProblemInstance,
    schedule: OffsetSchedule,
    grid_points: int = DEFAULT_GRID_POINTS,
    k: int = DEFAULT_LEVELS,
    solver: EigenSolver = "auto",
    jobs: int = 1,
) -> SpectrumTrace:
    """k lowest levels of H(s) on a uniform grid of ``grid_points`` fractions."""
    if grid_points < 2:
        raise ProblemInputError(f"need at least 2 grid points, got {grid_points}")
    if not 1 <= k <= problem.dimension:
        raise ProblemInputError(f"k={k} levels requested, problem has {problem.dimension} states")

    started = time.perf_counter()
    grid = np.linspace(0.0, 1.0, grid_points)
    task = functools.partial(_levels_at, problem, schedule, k, solver)
    levels = np.vstack(map_ordered(task, [float(s) for s in grid], jobs=jobs))
    log.info(
        f"Spectrum of '{problem.label}': {grid_points} points x {k} levels "
        f"in {humanize.naturaldelta(time.perf_counter() - started)}."
    )
    return SpectrumTrace(grid=grid, levels=levels, problem=problem, schedule=schedule, solver=solver)


def min_gap(trace: SpectrumTrace, refine: bool = False) -> MinGap:
    """Smallest level_1 - level_0 on the grid, optionally refined between neighbours."""
    if trace.n_levels < 2:
        raise ProblemInputError("the trace must hold at least two levels")
    gaps = trace.gaps
    m = int(np.argmin(gaps))
    coarse = MinGap(float(trace.grid[m]), float(gaps[m]))
    if not refine:
        return coarse

    def gap_at(s: float) -> float:
        s = min(max(s, 0.0), 1.0)
        values = _levels_at(trace.problem, trace.schedule, 2, trace.solver, s)
        return float(values[1] - values[0])

    last = len(gaps) - 1
    interior = 0 < m < last and gaps[m] < gaps[m - 1] and gaps[m] < gaps[m + 1]
    if interior:
        bracket = (trace.grid[m - 1], trace.grid[m], trace.grid[m + 1])
        result = minimize_scalar(gap_at, bracket=bracket, method="golden", tol=REFINE_TOL)
    else:
        lo, hi = trace.grid[max(m - 1, 0)], trace.grid[min(m + 1, last)]
        result = minimize_scalar(gap_at, bounds=(lo, hi), method="bounded", options={"xatol": REFINE_TOL * max(hi, 1e-3)})

    refined = MinGap(min(max(float(result.x), 0.0), 1.0), float(result.fun))
    return refined if refined.gap <= coarse.gap else coarse


def perturbative_gap_reduction(
    problem: ProblemInstance,
    schedule: OffsetSchedule,
    s: float,
    floppy: Sequence[float] | None = None,
) -> float:
    """Degenerate first-order estimate 0.5 * sum_i A_i(s) F_i.

    ``floppy`` defaults to the enumerated floppy fractions F_i of the
    first-excited manifold.
    """
    if floppy is None:
        floppy = analyze(problem).exact_floppy_fraction
    floppy = np.asarray(floppy, dtype=float)
    if floppy.shape != (problem.n_qubits,):
        raise ProblemInputError(f"expected {problem.n_qubits} floppy fractions, got {floppy.shape}")
    return float(0.5 * schedule.a_values(s) @ floppy)
