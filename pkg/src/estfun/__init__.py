"""Estimating-function inference for discretely observed stochastic processes."""
from estfun.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
