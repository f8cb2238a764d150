"""Kicked field Ising Floquet chains: matrix-free evolution, interior eigenpairs,
entanglement-spectrum extreme values and random-matrix references."""

__version__ = "0.1.0"
