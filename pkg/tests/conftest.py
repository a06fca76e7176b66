import numpy as np
import pytest

from annealpath.problems import ProblemInstance, builtin


def random_problem(n_qubits: int, seed: int, label: str = "random") -> ProblemInstance:
    rng = np.random.default_rng(seed)
    couplings = [
        (i, j, float(rng.choice([-1.0, 1.0])))
        for i in range(n_qubits) for j in range(i + 1, n_qubits)
        if rng.random() < 0.6
    ]
    return ProblemInstance(
        label=label,
        n_qubits=n_qubits,
        fields=tuple(float(h) for h in rng.uniform(-1.0, 1.0, n_qubits)),
        couplings=tuple(couplings),
    )


@pytest.fixture
def small_problem() -> ProblemInstance:
    """Three qubits with every pair coupled, so zz terms enter each step."""
    return ProblemInstance(
        label="small",
        n_qubits=3,
        fields=(0.5, -0.3, 0.8),
        couplings=((0, 1, 1.0), (1, 2, -0.7), (0, 2, 0.4)),
    )


@pytest.fixture
def single_qubit() -> ProblemInstance:
    return ProblemInstance(label="single", n_qubits=1, fields=(1.0,))


@pytest.fixture
def pair() -> ProblemInstance:
    """Ground 00 at -3; first-excited manifold {10, 01, 11} at +1."""
    return ProblemInstance(label="pair", n_qubits=2, fields=(1.0, 1.0), couplings=((0, 1, 1.0),))


@pytest.fixture(scope="session")
def problem_487() -> ProblemInstance:
    return builtin("487")


@pytest.fixture(scope="session")
def problem_26() -> ProblemInstance:
    return builtin("26")


@pytest.fixture(scope="session")
def problem_301() -> ProblemInstance:
    return builtin("301")
