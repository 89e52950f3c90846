"""Adversarial analysis of learned perception inside closed-loop systems:
attacks and defences for small classifiers, an STL monitor, an emergency
braking simulator and a compositional falsifier."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
