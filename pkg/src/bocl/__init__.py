"""Continual learning with Bayesian-optimized network expansion and attention gates."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
