"""Reconstruction of isotropic and anisotropic conductivities from power densities."""

__version__ = "0.1.0"

from .grid import Grid3, ScalarField, SymTensorField, VectorField, Mat3Field  # noqa: E402,F401
