"""Impermissible information leakage: exact simulation, censorship verification
and a decomposition-attack harness."""

__version__ = "0.1.0"
