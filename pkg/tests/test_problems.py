import itertools

import numpy as np
import pytest
from pydantic import ValidationError

from annealpath.errors import EnumerationLimitError, ProblemInputError
from annealpath.problems import (
    BUILTIN_LABELS,
    ProblemInstance,
    TwoSatFormula,
    analyze,
    bitstring_to_index,
    builtin,
    classical_energy,
    compile_2sat,
    count_violations,
    dump_problem,
    energy_table,
    index_to_bitstring,
    load_problem,
    penalty_offset,
    random_2sat,
    read_dimacs,
)


def test_bitstring_character_k_is_qubit_k():
    assert bitstring_to_index("100") == 1
    assert bitstring_to_index("001") == 4
    assert bitstring_to_index([1, 1, 0]) == 3
    assert index_to_bitstring(6, 3) == "011"
    for index in range(16):
        assert bitstring_to_index(index_to_bitstring(index, 4)) == index


def test_bitstring_rejects_other_symbols():
    with pytest.raises(ProblemInputError):
        bitstring_to_index("10x")


def test_classical_energy_uses_bit_zero_as_spin_up(pair):
    assert classical_energy(pair, "00") == -3.0
    assert classical_energy(pair, "10") == 1.0
    assert classical_energy(pair, "11") == 1.0


def test_energy_table_matches_classical_energy(small_problem):
    table = energy_table(small_problem)
    for index in range(small_problem.dimension):
        bits = index_to_bitstring(index, small_problem.n_qubits)
        assert table[index] == pytest.approx(classical_energy(small_problem, bits))


def test_scale_c_multiplies_every_energy(small_problem):
    scaled = small_problem.with_scale(0.1)
    np.testing.assert_allclose(energy_table(scaled), 0.1 * energy_table(small_problem))


def test_classical_energy_rejects_wrong_length(pair):
    with pytest.raises(ProblemInputError):
        classical_energy(pair, "000")


def test_couplings_are_normalized_and_symmetric():
    problem = ProblemInstance(n_qubits=3, fields=(0, 0, 0), couplings=((2, 0, 1.5), (1, 2, -1.0)))
    assert problem.couplings == ((0, 2, 1.5), (1, 2, -1.0))
    assert problem.coupling(2, 0) == problem.coupling(0, 2) == 1.5
    assert problem.coupling(0, 1) == 0.0


@pytest.mark.parametrize(
    "couplings",
    [((0, 0, 1.0),), ((0, 1, 1.0), (1, 0, 2.0)), ((0, 5, 1.0),)],
)
def test_invalid_couplings_are_rejected(couplings):
    with pytest.raises(ValidationError):
        ProblemInstance(n_qubits=3, fields=(0, 0, 0), couplings=couplings)


def test_field_count_must_match():
    with pytest.raises(ValidationError):
        ProblemInstance(n_qubits=3, fields=(0, 0))


def test_problem_size_is_bounded_by_enumeration():
    with pytest.raises(ValidationError):
        ProblemInstance(n_qubits=21, fields=(0.0,) * 21)


@pytest.mark.parametrize("label", BUILTIN_LABELS)
def test_builtins_have_unique_ground_and_degenerate_first_level(label):
    problem = builtin(label)
    assert problem.n_qubits == 12
    assert len(problem.couplings) == 13
    analysis = analyze(problem)
    assert len(analysis.ground_states) == 1
    assert analysis.degeneracy > 1
    assert analysis.first_excited_energy > analysis.ground_energy


def test_builtin_keeps_zero_couplings():
    assert builtin("487").coupling(0, 1) == 0.0
    assert (0, 1, 0.0) in builtin("487").couplings


def test_unknown_builtin():
    with pytest.raises(ProblemInputError):
        builtin("999")


def test_analyze_pair(pair):
    analysis = analyze(pair)
    assert analysis.ground_energy == -3.0
    assert analysis.ground_states == ("00",)
    assert analysis.first_excited_energy == 1.0
    assert sorted(analysis.first_excited_states) == ["01", "10", "11"]
    assert analysis.exact_floppy_fraction == pytest.approx((2 / 3, 2 / 3))
    assert analysis.exact_floppiness == pytest.approx((1 / 3, 1 / 3))


def test_analyze_rejects_flat_spectrum():
    with pytest.raises(ProblemInputError):
        analyze(ProblemInstance(n_qubits=2, fields=(0.0, 0.0)))


def test_enumeration_limit_error_is_a_problem_input_error():
    assert issubclass(EnumerationLimitError, ProblemInputError)


def _truth_table_optima(formula: TwoSatFormula) -> tuple[int, set[int]]:
    violations = {}
    for bits in itertools.product((0, 1), repeat=formula.n_vars):
        violations[bitstring_to_index(bits)] = count_violations(formula, bits)
    best = min(violations.values())
    return best, {k for k, v in violations.items() if v == best}


@pytest.mark.parametrize("seed", range(50))
def test_compiled_ground_manifold_equals_truth_table_optima(seed):
    rng = np.random.default_rng(seed)
    n_vars = int(rng.integers(2, 13))
    n_clauses = int(rng.integers(1, 3 * n_vars))
    formula = random_2sat(n_vars, n_clauses, seed)
    problem = compile_2sat(formula)

    energies = energy_table(problem) + penalty_offset(formula)
    best, optima = _truth_table_optima(formula)
    ground = set(np.flatnonzero(np.abs(energies - energies.min()) <= 1e-9).tolist())
    assert ground == optima
    assert energies.min() == pytest.approx(best)


def test_compiled_energy_counts_violated_clauses():
    formula = random_2sat(5, 9, seed=3)
    problem = compile_2sat(formula)
    offset = penalty_offset(formula)
    for index in range(problem.dimension):
        bits = index_to_bitstring(index, 5)
        assert classical_energy(problem, bits) + offset == pytest.approx(count_violations(formula, bits))


def test_unit_clause_and_tautology(caplog):
    formula = TwoSatFormula(n_vars=2, clauses=(((0, False), (0, False)), ((1, False), (1, True))))
    problem = compile_2sat(formula)
    assert problem.fields == (-0.5, 0.0)
    assert problem.couplings == ()
    assert "tautology" in caplog.text
    assert classical_energy(problem, "00") + penalty_offset(formula) == 1.0
    assert classical_energy(problem, "10") + penalty_offset(formula) == 0.0


def test_read_dimacs():
    text = "c example\np cnf 3 3\n1 -2 0\n2 3 0\n-3 0\n"
    formula = read_dimacs(text)
    assert formula.n_vars == 3
    assert formula.clauses == (((0, False), (1, True)), ((1, False), (2, False)), ((2, True), (2, True)))


@pytest.mark.parametrize("text", ["1 2 0\n", "p cnf 3 1\n1 2 3 0\n", "p cnf 2 1\n1 2\n"])
def test_read_dimacs_rejects(text):
    with pytest.raises(ProblemInputError):
        read_dimacs(text)


def test_problem_file_is_one_based(tmp_path, problem_487):
    path = dump_problem(problem_487, tmp_path / "487.json")
    text = path.read_text()
    assert '"n_qubits": 12' in text
    assert "[\n      1,\n      4,\n      -1.0\n    ]" in text
    assert load_problem(path) == problem_487


def test_load_problem_reports_bad_files(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"n_qubits": 2, "h": [0.0]}')
    with pytest.raises(ProblemInputError):
        load_problem(path)
    with pytest.raises(ProblemInputError):
        load_problem(tmp_path / "missing.json")


def test_builtin_tables_are_transcribed_one_based():
    hard = builtin("487")
    assert (hard.fields[0], hard.fields[2], hard.fields[11]) == (-2.0, 1.0, 0.0)
    assert hard.coupling(0, 3) == -1.0
    assert hard.coupling(1, 5) == 0.0
    assert (1, 5, 0.0) in hard.couplings
    assert hard.coupling(9, 11) == 1.0
    easy = builtin("301")
    assert easy.fields[4] == 1.0
    assert easy.coupling(0, 1) == -1.0
    assert easy.coupling(10, 11) == 0.0
    assert (10, 11, 0.0) in easy.couplings


def test_hard_instance_has_a_large_first_excited_manifold(problem_487):
    analysis = analyze(problem_487)
    assert analysis.degeneracy == 498
    assert len(analysis.first_excited_states) == 498
    assert all(0.0 <= f <= 1.0 for f in analysis.exact_floppy_fraction)


def test_zero_fields_give_spin_flip_symmetry(small_problem):
    flat = ProblemInstance(n_qubits=3, fields=(0.0, 0.0, 0.0), couplings=small_problem.couplings)
    energies = energy_table(flat)
    everything = flat.dimension - 1
    for index in range(flat.dimension):
        assert energies[index] == energies[index ^ everything]
    analysis = analyze(flat)
    for manifold in (analysis.ground_indices, analysis.first_excited_indices):
        assert {k ^ everything for k in manifold} == set(manifold)


def _pair_matched_fraction(problem: ProblemInstance) -> list[float]:
    manifold = set(analyze(problem).first_excited_indices)
    return [sum((k ^ (1 << i)) in manifold for k in manifold) / len(manifold) for i in range(problem.n_qubits)]


@pytest.mark.parametrize("label", BUILTIN_LABELS)
def test_floppy_fraction_agrees_with_pair_matching(label):
    problem = builtin(label)
    assert analyze(problem).exact_floppy_fraction == pytest.approx(_pair_matched_fraction(problem))


def test_floppy_fraction_of_pair_by_hand(pair):
    # 10 <-> 11 and 01 <-> 11 stay in the manifold; 10 <-> 00 and 01 <-> 00 leave it.
    assert _pair_matched_fraction(pair) == pytest.approx([2 / 3, 2 / 3])
