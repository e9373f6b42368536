"""Discrete causal variational principles: linearized dynamics and quantum states."""

from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
