"""cyclelab: numerical experiments on limit cycles of planar polynomial fields."""

from .polyfield import Poly2, VectorField

__version__ = "0.1.0"

__all__ = ["Poly2", "VectorField", "__version__"]
