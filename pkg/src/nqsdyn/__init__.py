"""nqsdyn: variational real-time evolution of neural quantum states."""

__version__ = "0.1.0"

from .model import (
    Lattice,
    PauliOperator,
    PauliString,
    SpinConfiguration,
    build_heisenberg,
    build_tfim,
    chain,
    connected_configurations,
    square,
)

__all__ = [
    "Lattice",
    "PauliOperator",
    "PauliString",
    "SpinConfiguration",
    "build_heisenberg",
    "build_tfim",
    "chain",
    "connected_configurations",
    "square",
    "__version__",
]
