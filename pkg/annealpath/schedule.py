"""Per-qubit anneal schedules with offsets.

Qubit ``i`` follows ``A_i(s) = 1 - s**(1 + gamma_i)`` and
``B_i(s) = s**(1 + gamma_i)``: ``gamma_i < 0`` advances the qubit,
``gamma_i > 0`` retards it, ``gamma_i = 0`` is the linear scheme.
"""

import math
from collections.abc import Sequence

import numpy as np
from pydantic import Field, model_validator

from annealpath.errors import ScheduleError
from annealpath.utils.typing import Record

# Floors are exclusive, the ceiling is inclusive.
OFFSET_FLOOR = -0.95
EXTREME_OFFSET_FLOOR = -1.0
OFFSET_CEILING = 1.0

# Anneal fractions this close outside [0, 1] are treated as rounding noise.
_S_SLACK = 1e-12


def offset_floor(allow_extreme: bool = False) -> float:
    return EXTREME_OFFSET_FLOOR if allow_extreme else OFFSET_FLOOR


def lowest_offset(allow_extreme: bool = False) -> float:
    """Smallest accepted offset, the clamp target below the window."""
    return float(np.nextafter(offset_floor(allow_extreme), 0.0))


def in_window(gamma: float, allow_extreme: bool = False) -> bool:
    return offset_floor(allow_extreme) < gamma <= OFFSET_CEILING


def clamp_offsets(gammas: Sequence[float], allow_extreme: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Clamp offsets into the valid window; returns (clamped, was_clamped)."""
    raw = np.asarray(gammas, dtype=float)
    clamped = np.clip(raw, lowest_offset(allow_extreme), OFFSET_CEILING)
    return clamped, clamped != raw


class OffsetSchedule(Record):
    gammas: tuple[float, ...]
    anneal_time: float = Field(gt=0.0)
    allow_extreme: bool = False

    @model_validator(mode="after")
    def _check_window(self) -> "OffsetSchedule":
        floor = offset_floor(self.allow_extreme)
        for i, gamma in enumerate(self.gammas):
            if not in_window(gamma, self.allow_extreme):
                raise ValueError(f"offset gamma_{i + 1}={gamma} outside ({floor}, {OFFSET_CEILING}]")
        return self

    @classmethod
    def linear(cls, n_qubits: int, anneal_time: float) -> "OffsetSchedule":
        return cls(gammas=(0.0,) * n_qubits, anneal_time=anneal_time)

    @property
    def n_qubits(self) -> int:
        return len(self.gammas)

    def with_offsets(self, gammas: Sequence[float]) -> "OffsetSchedule":
        return OffsetSchedule(
            gammas=tuple(float(g) for g in gammas),
            anneal_time=self.anneal_time,
            allow_extreme=self.allow_extreme,
        )

    def b_values(self, s: float) -> np.ndarray:
        """B_i(s) for every qubit."""
        s = _check_fraction(s)
        return np.power(s, 1.0 + np.asarray(self.gammas))

    def a_values(self, s: float) -> np.ndarray:
        """A_i(s) for every qubit."""
        return 1.0 - self.b_values(s)


def eval_b(schedule: OffsetSchedule, qubit: int, s: float) -> float:
    _check_qubit(schedule, qubit)
    return float(_check_fraction(s) ** (1.0 + schedule.gammas[qubit]))


def eval_a(schedule: OffsetSchedule, qubit: int, s: float) -> float:
    return 1.0 - eval_b(schedule, qubit, s)


def coupling_weight(schedule: OffsetSchedule, i: int, j: int, s: float) -> float:
    """sqrt(B_i(s) * B_j(s)); symmetric in (i, j)."""
    b_i, b_j = eval_b(schedule, i, s), eval_b(schedule, j, s)
    if i > j:
        b_i, b_j = b_j, b_i
    return math.sqrt(b_i * b_j)


def _check_fraction(s: float) -> float:
    if not -_S_SLACK <= s <= 1.0 + _S_SLACK:
        raise ScheduleError(f"anneal fraction s={s} outside [0, 1]")
    return min(max(float(s), 0.0), 1.0)


def _check_qubit(schedule: OffsetSchedule, qubit: int) -> None:
    if not 0 <= qubit < schedule.n_qubits:
        raise ScheduleError(f"qubit index {qubit} outside 0..{schedule.n_qubits - 1}")
