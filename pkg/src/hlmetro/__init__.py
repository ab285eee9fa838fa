"""Heisenberg-limited frequency estimation under local perturbations: simulation workbench."""

__version__ = "0.1.0"
