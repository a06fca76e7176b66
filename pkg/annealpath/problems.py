"""Ising problem Hamiltonians, the 2-SAT compiler and the enumeration oracle.

Conventions used everywhere in annealpath:

- Qubits are 0-based internally; problem files and bitstrings follow the
  1-based numbering of the published tables.
- Bit ``b`` of a qubit maps to spin ``z = 1 - 2b`` (bit 0 <-> z=+1), so a
  bit equals the Boolean value ``x = (1 - z) / 2``.
- Basis index bit ``k`` is qubit ``k``; bitstring character ``k`` is qubit
  ``k`` as well, so ``"100"`` is index 1.
"""

import functools
import json
import logging
from collections import defaultdict
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from pydantic import Field, field_validator, model_validator

from annealpath.config import DEGENERACY_TOL, ENUMERATION_LIMIT
from annealpath.errors import EnumerationLimitError, ProblemInputError
from annealpath.utils.typing import Record

log = logging.getLogger(__name__)

Coupling = tuple[int, int, float]
SatLiteral = tuple[int, bool]


class ProblemInstance(Record):
    """Diagonal problem Hamiltonian ``C * H_P`` with fields ``h`` and couplings ``J``."""

    label: str = ""
    n_qubits: int = Field(ge=1, le=ENUMERATION_LIMIT)
    fields: tuple[float, ...]
    couplings: tuple[Coupling, ...] = ()
    scale_c: float = Field(default=1.0, gt=0.0)

    @field_validator("couplings")
    @classmethod
    def _normalize_couplings(cls, couplings: tuple[Coupling, ...]) -> tuple[Coupling, ...]:
        seen: dict[tuple[int, int], float] = {}
        for i, j, value in couplings:
            if i == j:
                raise ValueError(f"self-coupling on qubit {i + 1}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"coupling ({key[0] + 1}, {key[1] + 1}) listed twice")
            seen[key] = float(value)
        return tuple((i, j, v) for (i, j), v in sorted(seen.items()))

    @model_validator(mode="after")
    def _check_sizes(self) -> "ProblemInstance":
        if len(self.fields) != self.n_qubits:
            raise ValueError(f"expected {self.n_qubits} field values, got {len(self.fields)}")
        for i, j, _ in self.couplings:
            if i < 0 or j >= self.n_qubits:
                raise ValueError(f"coupling ({i + 1}, {j + 1}) outside 1..{self.n_qubits}")
        return self

    @property
    def dimension(self) -> int:
        return 1 << self.n_qubits

    def coupling(self, i: int, j: int) -> float:
        """Symmetric lookup of J_ij; absent pairs are 0."""
        a, b = min(i, j), max(i, j)
        for p, q, value in self.couplings:
            if (p, q) == (a, b):
                return value
        return 0.0

    def with_scale(self, scale_c: float) -> "ProblemInstance":
        return ProblemInstance(**{**self.model_dump(), "scale_c": scale_c})


class TwoSatFormula(Record):
    """Conjunction of 2-literal clauses; a literal is (variable index, negated)."""

    n_vars: int = Field(ge=1, le=ENUMERATION_LIMIT)
    clauses: tuple[tuple[SatLiteral, SatLiteral], ...]

    @model_validator(mode="after")
    def _check_literals(self) -> "TwoSatFormula":
        for clause in self.clauses:
            for var, _ in clause:
                if not 0 <= var < self.n_vars:
                    raise ValueError(f"variable {var + 1} outside 1..{self.n_vars}")
        return self


class ClassicalAnalysis(Record):
    """Ground and first-excited manifolds of ``C * H_P`` found by enumeration."""

    ground_energy: float
    ground_states: tuple[str, ...]
    ground_indices: tuple[int, ...]
    first_excited_energy: float
    first_excited_states: tuple[str, ...]
    first_excited_indices: tuple[int, ...]
    exact_floppy_fraction: tuple[float, ...]
    exact_floppiness: tuple[float, ...]

    @property
    def degeneracy(self) -> int:
        return len(self.first_excited_indices)


# --- Bitstrings ---

def bitstring_to_index(bits: str | Sequence[int]) -> int:
    return sum(1 << k for k, b in enumerate(_bit_values(bits)) if b)


def index_to_bitstring(index: int, n_qubits: int) -> str:
    return "".join("1" if (index >> k) & 1 else "0" for k in range(n_qubits))


def _bit_values(bits: str | Sequence[int]) -> list[int]:
    try:
        values = [int(b) for b in bits]
    except (TypeError, ValueError) as exc:
        raise ProblemInputError(f"bitstring {bits!r} contains values other than 0/1") from exc
    if any(b not in (0, 1) for b in values):
        raise ProblemInputError(f"bitstring {bits!r} contains values other than 0/1")
    return values


# --- Energies ---

@functools.lru_cache(maxsize=8)
def spin_table(n_qubits: int) -> np.ndarray:
    """(N, 2^N) int8 table of spin values z_i for every basis index."""
    index = np.arange(1 << n_qubits, dtype=np.int64)
    table = np.empty((n_qubits, 1 << n_qubits), dtype=np.int8)
    for q in range(n_qubits):
        table[q] = 1 - 2 * ((index >> q) & 1)
    table.setflags(write=False)
    return table


@functools.lru_cache(maxsize=16)
def energy_table(problem: ProblemInstance) -> np.ndarray:
    """Diagonal of ``C * H_P`` over all basis indices."""
    spins = spin_table(problem.n_qubits)
    energies = np.zeros(problem.dimension)
    for i, h in enumerate(problem.fields):
        if h:
            energies -= h * spins[i]
    for i, j, value in problem.couplings:
        if value:
            energies -= value * (spins[i] * spins[j])
    energies *= problem.scale_c
    energies.setflags(write=False)
    return energies


def classical_energy(problem: ProblemInstance, state: str | Sequence[int]) -> float:
    """E = C * (-sum h_i z_i - sum J_ij z_i z_j) for one basis state."""
    bits = _bit_values(state)
    if len(bits) != problem.n_qubits:
        raise ProblemInputError(f"bitstring has {len(bits)} bits, problem has {problem.n_qubits} qubits")
    z = [1 - 2 * b for b in bits]
    energy = -sum(h * zi for h, zi in zip(problem.fields, z))
    energy -= sum(value * z[i] * z[j] for i, j, value in problem.couplings)
    return problem.scale_c * energy


# --- 2-SAT ---

def compile_2sat(formula: TwoSatFormula, label: str = "") -> ProblemInstance:
    """Ising encoding with one unit of energy per violated clause.

    A clause is violated only by its single falsifying assignment; that
    penalty, written in spins, contributes a constant, two fields and one
    coupling, all quarter units. Constants are dropped (see ``penalty_offset``).
    """
    fields = np.zeros(formula.n_vars)
    couplings: dict[tuple[int, int], float] = defaultdict(float)
    for clause in formula.clauses:
        (v1, neg1), (v2, neg2) = clause
        s1 = -1.0 if neg1 else 1.0
        s2 = -1.0 if neg2 else 1.0
        if v1 == v2:
            if s1 != s2:
                log.warning(f"Clause {_clause_text(clause)} is a tautology; it contributes nothing.")
                continue
            fields[v1] -= s1 / 2
            continue
        fields[v1] -= s1 / 4
        fields[v2] -= s2 / 4
        couplings[(min(v1, v2), max(v1, v2))] -= s1 * s2 / 4

    return ProblemInstance(
        label=label,
        n_qubits=formula.n_vars,
        fields=tuple(float(h) for h in fields),
        couplings=tuple((i, j, v) for (i, j), v in couplings.items() if v != 0.0),
    )


def penalty_offset(formula: TwoSatFormula) -> float:
    """Constant dropped by ``compile_2sat``: energy + offset = violated clauses."""
    offset = 0.0
    for (v1, neg1), (v2, neg2) in formula.clauses:
        if v1 != v2:
            offset += 0.25
        elif neg1 == neg2:
            offset += 0.5
    return offset


def count_violations(formula: TwoSatFormula, assignment: str | Sequence[int]) -> int:
    x = _bit_values(assignment)
    if len(x) != formula.n_vars:
        raise ProblemInputError(f"assignment has {len(x)} values, formula has {formula.n_vars} variables")
    return sum(
        1 for clause in formula.clauses
        if not any(x[var] == (0 if negated else 1) for var, negated in clause)
    )


def random_2sat(n_vars: int, n_clauses: int, seed: int) -> TwoSatFormula:
    rng = np.random.default_rng(seed)
    clauses = []
    for _ in range(n_clauses):
        if n_vars > 1:
            v1, v2 = (int(v) for v in rng.choice(n_vars, size=2, replace=False))
        else:
            v1 = v2 = 0
        neg1, neg2 = (bool(b) for b in rng.integers(0, 2, size=2))
        clauses.append(((v1, neg1), (v2, neg2)))
    return TwoSatFormula(n_vars=n_vars, clauses=tuple(clauses))


def read_dimacs(text: str) -> TwoSatFormula:
    """Parse DIMACS CNF restricted to clauses of one or two literals."""
    n_vars = None
    clauses = []
    pending: list[int] = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith(("c", "%")):
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) < 4 or parts[1] != "cnf":
                raise ProblemInputError(f"bad DIMACS header: {line!r}")
            n_vars = int(parts[2])
            continue
        for token in line.split():
            literal = int(token)
            if literal != 0:
                pending.append(literal)
                continue
            if len(pending) == 1:
                pending = pending * 2
            if len(pending) != 2:
                raise ProblemInputError(f"clause {pending} does not have two literals")
            clauses.append(tuple((abs(k) - 1, k < 0) for k in pending))
            pending = []
    if pending:
        raise ProblemInputError("last clause is not terminated by 0")
    if n_vars is None:
        raise ProblemInputError("DIMACS header 'p cnf <vars> <clauses>' is missing")
    return TwoSatFormula(n_vars=n_vars, clauses=tuple(clauses))


def _clause_text(clause: tuple[SatLiteral, SatLiteral]) -> str:
    return " v ".join(f"{'~' if neg else ''}x{var + 1}" for var, neg in clause)


# --- Built-in instances (12 variables, 13 clauses) ---

_BUILTIN_FIELDS = {
    "487": (-2, -1, 1, -1, -2, 1, -1, 1, 1, 1, -2, 0),
    "26": (0, -1, 0, -1, 1, -1, 0, 1, 0, -1, 0, 0),
    "301": (0, 0, 0, 0, 1, 0, 1, 0, 1, 1, 0, 0),
}

# 1-based (i, j, J_ij); zero entries are kept as listed.
_BUILTIN_COUPLINGS = {
    "487": (
        (1, 4, -1), (1, 6, 1), (1, 8, 1), (1, 11, 1), (2, 6, 0), (2, 11, -1), (3, 5, 1),
        (5, 7, -1), (5, 11, 1), (5, 12, 1), (9, 11, 1), (10, 12, 1), (1, 2, 0),
    ),
    "26": (
        (1, 9, 1), (1, 11, -1), (2, 11, 1), (3, 4, 1), (3, 6, 1), (4, 8, 1), (4, 10, -1),
        (5, 12, -1), (6, 7, -1), (6, 12, -1), (7, 9, -1), (8, 12, 0), (1, 2, 0),
    ),
    "301": (
        (1, 2, -1), (1, 3, 1), (2, 4, -1), (3, 8, 1), (4, 12, 1), (5, 12, 1), (6, 7, 1),
        (6, 10, -1), (8, 11, -1), (9, 10, -1), (10, 11, 1), (11, 12, 0), (1, 4, 0),
    ),
}

BUILTIN_LABELS = tuple(_BUILTIN_FIELDS)


def builtin(label: str) -> ProblemInstance:
    if label not in _BUILTIN_FIELDS:
        raise ProblemInputError(f"unknown built-in problem '{label}' (known: {', '.join(BUILTIN_LABELS)})")
    fields = _BUILTIN_FIELDS[label]
    return ProblemInstance(
        label=label,
        n_qubits=len(fields),
        fields=tuple(float(h) for h in fields),
        couplings=tuple((i - 1, j - 1, float(v)) for i, j, v in _BUILTIN_COUPLINGS[label]),
    )


# --- Enumeration oracle ---

@functools.lru_cache(maxsize=16)
def analyze(problem: ProblemInstance) -> ClassicalAnalysis:
    """Enumerate all 2^N states and extract the two lowest manifolds."""
    if problem.n_qubits > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"{problem.n_qubits} qubits exceeds the enumeration bound {ENUMERATION_LIMIT}")

    energies = energy_table(problem)
    ground_energy = float(energies.min())
    ground = np.flatnonzero(np.abs(energies - ground_energy) <= DEGENERACY_TOL)
    above = energies[energies > ground_energy + DEGENERACY_TOL]
    if above.size == 0:
        raise ProblemInputError(f"problem '{problem.label}' has a single energy level")
    first_energy = float(above.min())
    first = np.flatnonzero(np.abs(energies - first_energy) <= DEGENERACY_TOL)

    floppy = floppy_mask(problem, first, first_energy)
    fraction = floppy.mean(axis=1)

    n = problem.n_qubits
    return ClassicalAnalysis(
        ground_energy=ground_energy,
        ground_states=tuple(index_to_bitstring(int(k), n) for k in ground),
        ground_indices=tuple(int(k) for k in ground),
        first_excited_energy=first_energy,
        first_excited_states=tuple(index_to_bitstring(int(k), n) for k in first),
        first_excited_indices=tuple(int(k) for k in first),
        exact_floppy_fraction=tuple(float(f) for f in fraction),
        exact_floppiness=tuple(float(f) / 2 for f in fraction),
    )


def floppy_mask(problem: ProblemInstance, indices: np.ndarray, level: float) -> np.ndarray:
    """(N, len(indices)) mask: flipping qubit i of state k stays at ``level``."""
    energies = energy_table(problem)
    indices = np.asarray(indices, dtype=np.int64)
    mask = np.empty((problem.n_qubits, indices.size), dtype=bool)
    for i in range(problem.n_qubits):
        mask[i] = np.abs(energies[indices ^ (1 << i)] - level) <= DEGENERACY_TOL
    return mask


# --- Problem files ---

class ProblemFile(Record):
    """On-disk layout: 1-based couplings as [i, j, value] rows."""

    label: str = ""
    n_qubits: int
    h: list[float]
    couplings: list[tuple[int, int, float]] = []
    scale_c: float = 1.0

    def to_instance(self) -> ProblemInstance:
        return ProblemInstance(
            label=self.label,
            n_qubits=self.n_qubits,
            fields=tuple(self.h),
            couplings=tuple((i - 1, j - 1, v) for i, j, v in self.couplings),
            scale_c=self.scale_c,
        )

    @classmethod
    def from_instance(cls, problem: ProblemInstance) -> "ProblemFile":
        return cls(
            label=problem.label,
            n_qubits=problem.n_qubits,
            h=list(problem.fields),
            couplings=[(i + 1, j + 1, v) for i, j, v in problem.couplings],
            scale_c=problem.scale_c,
        )


def load_problem(path: str | Path) -> ProblemInstance:
    path = Path(path)
    try:
        return ProblemFile.model_validate_json(path.read_text()).to_instance()
    except (OSError, ValueError) as exc:
        raise ProblemInputError(f"cannot read problem file {path}: {exc}") from exc


def dump_problem(problem: ProblemInstance, path: str | Path) -> Path:
    path = Path(path)
    payload = ProblemFile.from_instance(problem).model_dump(mode="json")
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path
