import math

import numpy as np
import pytest

from annealpath.config import ENERGY_SCALE_GHZ
from annealpath.errors import ProblemInputError
from annealpath.problems import ProblemInstance, analyze, energy_table
from annealpath.schedule import OffsetSchedule
from annealpath.spectrum import MinGap, min_gap, perturbative_gap_reduction, spectrum_along_anneal
from tests.conftest import random_problem


def test_trace_endpoints(small_problem):
    trace = spectrum_along_anneal(small_problem, OffsetSchedule.linear(3, 1.0), grid_points=11, k=4)
    assert trace.levels.shape == (11, 4)
    np.testing.assert_allclose(trace.levels[0, :2], [-3.0, -1.0])
    np.testing.assert_allclose(trace.levels[-1], np.sort(energy_table(small_problem))[:4])


def test_levels_are_sorted(small_problem):
    trace = spectrum_along_anneal(small_problem, OffsetSchedule(gammas=(-0.5, 0.2, 0.8), anneal_time=1.0), 21, 6)
    assert np.all(np.diff(trace.levels, axis=1) >= -1e-12)


def test_parallel_trace_equals_serial(small_problem):
    schedule = OffsetSchedule.linear(3, 1.0)
    serial = spectrum_along_anneal(small_problem, schedule, 9, 3, jobs=1)
    parallel = spectrum_along_anneal(small_problem, schedule, 9, 3, jobs=2)
    np.testing.assert_array_equal(serial.levels, parallel.levels)


@pytest.mark.parametrize("grid_points, k", [(1, 2), (5, 9)])
def test_trace_arguments_are_checked(small_problem, grid_points, k):
    with pytest.raises(ProblemInputError):
        spectrum_along_anneal(small_problem, OffsetSchedule.linear(3, 1.0), grid_points, k)


def test_two_level_gap_matches_closed_form(single_qubit):
    # H(s) = -(1-s) X - s Z has levels +/- sqrt((1-s)^2 + s^2); the minimum sits at s = 1/2.
    trace = spectrum_along_anneal(single_qubit, OffsetSchedule.linear(1, 1.0), grid_points=12, k=2)
    coarse = min_gap(trace)
    refined = min_gap(trace, refine=True)
    assert refined.gap <= coarse.gap
    assert refined.s == pytest.approx(0.5, abs=1e-3)
    assert refined.gap == pytest.approx(math.sqrt(2.0), abs=1e-6)


def test_refinement_at_grid_edge():
    # A strong field pulls the avoided crossing to s=1/26, so the coarse minimum is the first grid point.
    problem = ProblemInstance(n_qubits=1, fields=(5.0,))
    trace = spectrum_along_anneal(problem, OffsetSchedule.linear(1, 1.0), grid_points=6, k=2)
    found = min_gap(trace, refine=True)
    assert 0.0 <= found.s <= 1.0
    assert found.gap <= trace.gaps.min()


def test_min_gap_needs_two_levels(small_problem):
    trace = spectrum_along_anneal(small_problem, OffsetSchedule.linear(3, 1.0), 5, 1)
    with pytest.raises(ProblemInputError):
        min_gap(trace)


def test_trace_csv_columns(small_problem):
    trace = spectrum_along_anneal(small_problem, OffsetSchedule.linear(3, 1.0), 5, 3)
    trace = trace.with_energy([0.0, 1.0], [-3.0, -1.0])
    frame = trace.to_frame()
    assert list(frame.columns) == ["s", "level_0_GHz", "level_1_GHz", "level_2_GHz", "avg_energy_GHz"]
    np.testing.assert_allclose(frame["avg_energy_GHz"], ENERGY_SCALE_GHZ * np.array([-3.0, -2.5, -2.0, -1.5, -1.0]))
    np.testing.assert_allclose(frame["level_0_GHz"], ENERGY_SCALE_GHZ * trace.levels[:, 0])


def test_gap_reduction_closed_forms(small_problem):
    schedule = OffsetSchedule.linear(3, 1.0)
    assert perturbative_gap_reduction(small_problem, schedule, 0.4, floppy=[0.0, 0.0, 0.0]) == 0.0
    twelve = random_problem(12, seed=1)
    assert perturbative_gap_reduction(twelve, OffsetSchedule.linear(12, 1.0), 0.0, floppy=[1.0] * 12) == 6.0


def test_gap_reduction_uses_enumerated_floppiness(pair):
    schedule = OffsetSchedule.linear(2, 1.0)
    expected = 0.5 * (1 - 0.25) * sum(analyze(pair).exact_floppy_fraction)
    assert perturbative_gap_reduction(pair, schedule, 0.25) == pytest.approx(expected)


def test_gap_reduction_shrinks_when_floppy_qubits_advance(problem_487):
    analysis = analyze(problem_487)
    linear = OffsetSchedule.linear(12, 5.0)
    advanced = linear.with_offsets(np.asarray(analysis.exact_floppiness) * -0.02)
    s = 0.7
    assert perturbative_gap_reduction(problem_487, advanced, s) < perturbative_gap_reduction(problem_487, linear, s)


@pytest.mark.slow
def test_dense_and_lanczos_agree_at_twelve_qubits(problem_26):
    from annealpath.engine import hamiltonian_at

    schedule = OffsetSchedule.linear(12, 1.0)
    rng = np.random.default_rng(0)
    for s in rng.uniform(0.0, 1.0, 10):
        hamiltonian = hamiltonian_at(problem_26, schedule, float(s))
        dense, _ = hamiltonian.lowest(5, solver="dense")
        lanczos, _ = hamiltonian.lowest(5, solver="lanczos")
        np.testing.assert_allclose(dense, lanczos, atol=1e-8)


def test_gap_is_continuous_in_offsets(problem_26):
    base = OffsetSchedule.linear(12, 1.0)
    nudged = base.with_offsets([1e-4] + [0.0] * 11)
    first = min_gap(spectrum_along_anneal(problem_26, base, 21, 2, jobs=2))
    second = min_gap(spectrum_along_anneal(problem_26, nudged, 21, 2, jobs=2))
    assert abs(first.gap - second.gap) < 1e-2


def test_gap_is_reported_in_ghz():
    found = MinGap(s=0.5, gap=0.1)
    assert found.gap_ghz == pytest.approx(0.1 * ENERGY_SCALE_GHZ)
