"""Controllability analysis and moment-based steering for neutral delay systems."""

from .kernels import MatrixKernel
from .system import M2State, NeutralSystem, evaluate_delta, load_system

__all__ = ["MatrixKernel", "M2State", "NeutralSystem", "evaluate_delta", "load_system"]
