"""Instantaneous anneal Hamiltonian and time-dependent Schrodinger evolution.

    H(s) = - sum_i A_i(s) X_i
           - C sum_i B_i(s) h_i Z_i
           - C sum_{i<j} sqrt(B_i(s) B_j(s)) J_ij Z_i Z_j

One step advances the state by exp(-i w tau H(t + tau/2)) where w is the
configurable angular factor (1 with hbar = 1 and times in ns). Energies stay
dimensionless internally and are converted to GHz only in exported tables.
"""

import functools
import logging
import math
import time
from dataclasses import dataclass, field

import humanize
import numpy as np
import pandas as pd
from pydantic import Field
from scipy import linalg, sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh, expm_multiply

from annealpath.config import (
    DEFAULT_ANGULAR_FACTOR,
    DENSE_EIGEN_LIMIT,
    DENSE_PROPAGATOR_LIMIT,
    EXACT_MIDPOINT_LIMIT,
    KRON_LAYER_LIMIT,
    to_ghz,
)
from annealpath.errors import EigensolverError, ScheduleError, StateError
from annealpath.problems import ProblemInstance, spin_table
from annealpath.schedule import OffsetSchedule
from annealpath.utils.typing import EigenSolver, Propagator, Record

log = logging.getLogger(__name__)

NORM_TOL = 1e-9
MAX_DEFAULT_STEP = 1e-3
DEFAULT_STEPS = 10000
LANCZOS_SEED = 20170801


@dataclass
class QuantumState:
    """Amplitudes over the computational basis; index bit k is qubit k."""

    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        dim = self.amplitudes.size
        if self.amplitudes.ndim != 1 or dim < 2 or dim & (dim - 1):
            raise StateError(f"state dimension {self.amplitudes.shape} is not 2^N")

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> "QuantumState":
        amplitudes = np.zeros(1 << n_qubits, dtype=np.complex128)
        amplitudes[index] = 1.0
        return cls(amplitudes)

    @property
    def n_qubits(self) -> int:
        return self.amplitudes.size.bit_length() - 1

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def copy(self) -> "QuantumState":
        return QuantumState(self.amplitudes.copy())


class EvolutionConfig(Record):
    time_step: float | None = Field(default=None, gt=0.0)
    propagator: Propagator = "suzuki-trotter-2"
    angular_factor: float = DEFAULT_ANGULAR_FACTOR
    record_stride: int = Field(default=100, ge=1)
    record_levels: int = Field(default=0, ge=0)

    def step_count(self, anneal_time: float) -> int:
        tau = self.time_step or min(anneal_time / DEFAULT_STEPS, MAX_DEFAULT_STEP)
        if tau > anneal_time:
            raise ScheduleError(f"time step {tau} ns exceeds the anneal time {anneal_time} ns")
        return max(1, round(anneal_time / tau))


def initial_state(n_qubits: int) -> QuantumState:
    """Uniform superposition, the ground state of -sum X_i."""
    if n_qubits < 1:
        raise StateError("need at least one qubit")
    dim = 1 << n_qubits
    return QuantumState(np.full(dim, dim ** -0.5, dtype=np.complex128))


# --- Hamiltonian ---

@functools.lru_cache(maxsize=16)
def _coupling_terms(problem: ProblemInstance) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(pairs, C*J values, z_i z_j sign rows) for the non-zero couplings."""
    spins = spin_table(problem.n_qubits)
    active = [(i, j, v) for i, j, v in problem.couplings if v]
    pairs = np.array([(i, j) for i, j, _ in active], dtype=np.int64).reshape(-1, 2)
    values = problem.scale_c * np.array([v for _, _, v in active], dtype=float)
    signs = np.stack([spins[i] * spins[j] for i, j, _ in active]) if active else np.empty((0, problem.dimension), np.int8)
    return pairs, values, signs


@functools.lru_cache(maxsize=8)
def _flip_pattern(n_qubits: int) -> tuple[np.ndarray, np.ndarray]:
    """CSR column indices and row pointers: diagonal first, then one flip per qubit."""
    dim = 1 << n_qubits
    rows = np.arange(dim, dtype=np.int32)
    indices = np.empty((dim, n_qubits + 1), dtype=np.int32)
    indices[:, 0] = rows
    for q in range(n_qubits):
        indices[:, q + 1] = rows ^ (1 << q)
    indptr = np.arange(0, dim * (n_qubits + 1) + 1, n_qubits + 1, dtype=np.int32)
    return indices.ravel(), indptr


def _problem_diagonal(problem: ProblemInstance, b: np.ndarray) -> np.ndarray:
    spins = spin_table(problem.n_qubits)
    diagonal = np.zeros(problem.dimension)
    for i, h in enumerate(problem.fields):
        if h and b[i]:
            diagonal -= (problem.scale_c * h * b[i]) * spins[i]
    pairs, values, signs = _coupling_terms(problem)
    for (i, j), value, row in zip(pairs, values, signs):
        weight = math.sqrt(b[i] * b[j]) * value
        if weight:
            diagonal -= weight * row
    return diagonal


class InstantaneousHamiltonian:
    """H(s) for one anneal fraction; real symmetric in the computational basis."""

    def __init__(self, problem: ProblemInstance, s: float, a: np.ndarray, diagonal: np.ndarray):
        self.problem = problem
        self.s = s
        self.a = a
        self.diagonal = diagonal

    @property
    def n_qubits(self) -> int:
        return self.problem.n_qubits

    @property
    def dimension(self) -> int:
        return self.problem.dimension

    def matvec(self, vector: np.ndarray) -> np.ndarray:
        out = self.diagonal * vector
        for q, a_q in enumerate(self.a):
            if a_q:
                flipped = vector.reshape(-1, 2, 1 << q)[:, ::-1, :].reshape(-1)
                out -= a_q * flipped
        return out

    def expectation(self, state: QuantumState) -> float:
        psi = state.amplitudes
        return float(np.vdot(psi, self.matvec(psi)).real)

    def to_sparse(self) -> sparse.csr_matrix:
        indices, indptr = _flip_pattern(self.n_qubits)
        data = np.empty((self.dimension, self.n_qubits + 1))
        data[:, 0] = self.diagonal
        data[:, 1:] = -self.a
        return sparse.csr_matrix((data.ravel(), indices, indptr), shape=(self.dimension, self.dimension))

    def to_dense(self) -> np.ndarray:
        if self.n_qubits > EXACT_MIDPOINT_LIMIT:
            raise StateError(f"dense materialization is limited to {EXACT_MIDPOINT_LIMIT} qubits")
        return self.to_sparse().toarray()

    def lowest(self, k: int, vectors: bool = False, solver: EigenSolver = "auto") -> tuple[np.ndarray, np.ndarray | None]:
        """k lowest eigenvalues (ascending), optionally with eigenvectors as columns."""
        k = min(k, self.dimension)
        if not np.any(self.a):
            order = np.argsort(self.diagonal, kind="stable")[:k]
            basis = np.eye(self.dimension)[:, order] if vectors else None
            return self.diagonal[order].copy(), basis
        if not vectors and not np.any(self.diagonal):
            # Separable transverse field: levels are sums of -a_q * (+/-1).
            spins = spin_table(self.n_qubits)
            levels = -(self.a @ spins)
            return np.sort(levels)[:k], None

        use_dense = solver == "dense" or (solver == "auto" and self.n_qubits <= DENSE_EIGEN_LIMIT)
        if use_dense or k >= self.dimension - 1:
            result = linalg.eigh(self.to_dense(), subset_by_index=[0, k - 1], eigvals_only=not vectors)
            return (result[0], result[1]) if vectors else (result, None)

        rng = np.random.default_rng(LANCZOS_SEED)
        start = rng.standard_normal(self.dimension)
        try:
            result = eigsh(
                self.to_sparse(), k=k, which="SA", v0=start,
                ncv=min(self.dimension, max(2 * k + 1, 40)), tol=1e-12,
                return_eigenvectors=vectors,
            )
        except ArpackNoConvergence as exc:
            raise EigensolverError(f"Lanczos did not converge at s={self.s:.6f}", s=self.s) from exc
        if vectors:
            values, basis = result
            order = np.argsort(values)
            return values[order], basis[:, order]
        return np.sort(result), None


def hamiltonian_at(problem: ProblemInstance, schedule: OffsetSchedule, s: float) -> InstantaneousHamiltonian:
    if schedule.n_qubits != problem.n_qubits:
        raise ScheduleError(f"schedule has {schedule.n_qubits} offsets, problem has {problem.n_qubits} qubits")
    b = schedule.b_values(s)
    return InstantaneousHamiltonian(problem, s, 1.0 - b, _problem_diagonal(problem, b))


# --- Propagators ---

def _apply_single_site(psi: np.ndarray, qubit: int, unitary: np.ndarray) -> None:
    view = psi.reshape(-1, 2, 1 << qubit)
    view[...] = np.einsum("ab,ibj->iaj", unitary, view)


def _layer_operator(unitaries: np.ndarray) -> np.ndarray:
    """Kronecker product of per-qubit 2x2 blocks; the first qubit is the last factor."""
    return functools.reduce(np.kron, unitaries[::-1])


def _layer_blocks(unitaries: np.ndarray) -> tuple[np.ndarray | None, np.ndarray] | None:
    """(low, high) operators on the two halves of the register.

    None above KRON_LAYER_LIMIT qubits, where sites are applied one by one.
    """
    n = len(unitaries)
    if n > KRON_LAYER_LIMIT:
        return None
    low = n // 2
    return (_layer_operator(unitaries[:low]) if low else None), _layer_operator(unitaries[low:])


def _apply_layer(psi: np.ndarray, unitaries: np.ndarray, blocks: tuple | None) -> None:
    """Apply the tensor product of single-site unitaries in place."""
    if blocks is None:
        for q in range(len(unitaries)):
            _apply_single_site(psi, q, unitaries[q])
        return
    low, high = blocks
    width = 1 if low is None else low.shape[0]
    block = psi.reshape(-1, width)
    if low is not None:
        block[...] = block @ low.T
    block[...] = high @ block


class TrotterKernel:
    """Second-order product formula: half single-site, full zz, half single-site."""

    def __init__(self, problem: ProblemInstance, schedule: OffsetSchedule, angular_factor: float = DEFAULT_ANGULAR_FACTOR):
        if schedule.n_qubits != problem.n_qubits:
            raise ScheduleError(f"schedule has {schedule.n_qubits} offsets, problem has {problem.n_qubits} qubits")
        self.problem = problem
        self.schedule = schedule
        self.angular_factor = angular_factor
        self.fields = problem.scale_c * np.asarray(problem.fields, dtype=float)
        self.pairs, self.values, signs = _coupling_terms(problem)
        self.signs = signs.astype(float)

    def rotations(self, a: np.ndarray, b: np.ndarray, angle: float) -> np.ndarray:
        """exp(+i angle (A_q X + C B_q h_q Z)) per qubit, stacked as (N, 2, 2)."""
        z = b * self.fields
        r = np.hypot(a, z)
        safe = np.where(r > 0.0, r, 1.0)
        nx, nz = a / safe, z / safe
        c, s = np.cos(angle * r), np.sin(angle * r)
        unitaries = np.empty((len(a), 2, 2), dtype=np.complex128)
        unitaries[:, 0, 0] = c + 1j * s * nz
        unitaries[:, 0, 1] = 1j * s * nx
        unitaries[:, 1, 0] = 1j * s * nx
        unitaries[:, 1, 1] = c - 1j * s * nz
        return unitaries

    def zz_phase(self, b: np.ndarray) -> np.ndarray:
        """sum_{i<j} sqrt(B_i B_j) C J_ij z_i z_j over the basis."""
        weights = np.sqrt(b[self.pairs[:, 0]] * b[self.pairs[:, 1]]) * self.values
        return weights @ self.signs

    def step(self, psi: np.ndarray, s_mid: float, tau: float) -> None:
        """Advance ``psi`` in place by one step of length ``tau`` (ns)."""
        b = self.schedule.b_values(s_mid)
        angle = self.angular_factor * tau
        half = self.rotations(1.0 - b, b, angle / 2)
        blocks = _layer_blocks(half)

        _apply_layer(psi, half, blocks)
        if self.values.size:
            psi *= np.exp(1j * angle * self.zz_phase(b))
        _apply_layer(psi, half, blocks)


def apply_trotter_step(
    problem: ProblemInstance,
    schedule: OffsetSchedule,
    s_mid: float,
    tau: float,
    state: QuantumState,
    angular_factor: float = DEFAULT_ANGULAR_FACTOR,
) -> QuantumState:
    psi = state.amplitudes.copy()
    TrotterKernel(problem, schedule, angular_factor).step(psi, s_mid, tau)
    return QuantumState(psi)


def apply_exact_step(
    problem: ProblemInstance,
    schedule: OffsetSchedule,
    s_mid: float,
    tau: float,
    state: QuantumState,
    angular_factor: float = DEFAULT_ANGULAR_FACTOR,
) -> QuantumState:
    """exp(-i w tau H(s_mid)) applied without splitting."""
    if problem.n_qubits > EXACT_MIDPOINT_LIMIT:
        raise StateError(f"exact-midpoint propagation is limited to {EXACT_MIDPOINT_LIMIT} qubits")
    hamiltonian = hamiltonian_at(problem, schedule, s_mid)
    psi = state.amplitudes
    if problem.n_qubits <= DENSE_PROPAGATOR_LIMIT:
        energies, basis = linalg.eigh(hamiltonian.to_dense())
        phases = np.exp(-1j * angular_factor * tau * energies)
        return QuantumState(basis @ (phases * (basis.T @ psi)))
    generator = (-1j * angular_factor * tau) * hamiltonian.to_sparse()
    return QuantumState(expm_multiply(generator, psi))


# --- Evolution ---

@dataclass
class TrajectoryPoint:
    s: float
    avg_energy: float
    ground_population: float | None = None
    levels: tuple[float, ...] | None = None


@dataclass
class Trajectory:
    points: list[TrajectoryPoint]
    final_state: QuantumState
    time_step: float
    n_steps: int
    elapsed: float = field(default=0.0, compare=False)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "s": [p.s for p in self.points],
            "avg_energy_GHz": [to_ghz(p.avg_energy) for p in self.points],
        })
        if self.points and self.points[0].levels is not None:
            frame["ground_population"] = [p.ground_population for p in self.points]
            for m in range(len(self.points[0].levels)):
                frame[f"level_{m}_GHz"] = [to_ghz(p.levels[m]) for p in self.points]
        return frame


def _record(problem, schedule, config: EvolutionConfig, s: float, state: QuantumState) -> TrajectoryPoint:
    hamiltonian = hamiltonian_at(problem, schedule, s)
    point = TrajectoryPoint(s=s, avg_energy=hamiltonian.expectation(state))
    if config.record_levels:
        levels, basis = hamiltonian.lowest(config.record_levels, vectors=True)
        point.levels = tuple(float(v) for v in levels)
        point.ground_population = float(abs(np.vdot(basis[:, 0], state.amplitudes)) ** 2)
    return point


def evolve(
    problem: ProblemInstance,
    schedule: OffsetSchedule,
    config: EvolutionConfig,
    state: QuantumState | None = None,
) -> Trajectory:
    """Integrate from s=0 to s=1, recording <H(s)> every ``record_stride`` steps."""
    state = initial_state(problem.n_qubits) if state is None else state
    if state.n_qubits != problem.n_qubits:
        raise StateError(f"state has {state.n_qubits} qubits, problem has {problem.n_qubits}")
    if abs(state.norm() - 1.0) > NORM_TOL:
        raise StateError(f"input state is not normalized (norm={state.norm():.12f})")
    if config.propagator == "exact-midpoint" and problem.n_qubits > EXACT_MIDPOINT_LIMIT:
        raise StateError(f"exact-midpoint propagation is limited to {EXACT_MIDPOINT_LIMIT} qubits")

    n_steps = config.step_count(schedule.anneal_time)
    tau = schedule.anneal_time / n_steps
    started = time.perf_counter()

    current = state.copy()
    points = [_record(problem, schedule, config, 0.0, current)]
    kernel = TrotterKernel(problem, schedule, config.angular_factor)
    for step in range(n_steps):
        s_mid = (step + 0.5) / n_steps
        if config.propagator == "suzuki-trotter-2":
            kernel.step(current.amplitudes, s_mid, tau)
        else:
            current = apply_exact_step(problem, schedule, s_mid, tau, current, config.angular_factor)
        done = step + 1
        if done % config.record_stride == 0 or done == n_steps:
            points.append(_record(problem, schedule, config, done / n_steps, current))

    drift = abs(current.norm() - 1.0)
    if drift > NORM_TOL:
        log.warning(f"Norm drifted by {drift:.2e} over {n_steps} steps.")
    elapsed = time.perf_counter() - started
    log.debug(
        f"Evolved '{problem.label}' over {humanize.intcomma(n_steps)} steps "
        f"(t_a={schedule.anneal_time} ns, tau={tau:.3g} ns) in {humanize.naturaldelta(elapsed)}."
    )
    return Trajectory(points=points, final_state=current, time_step=tau, n_steps=n_steps, elapsed=elapsed)
