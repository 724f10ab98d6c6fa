"""Flat model predictive control with a learned SOCP safety filter."""

from ._backend import NAME as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
