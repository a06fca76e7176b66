"""State-vector simulation of quantum annealing with per-qubit anneal offsets."""

__version__ = "0.1.0"
