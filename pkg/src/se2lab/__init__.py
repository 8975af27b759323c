"""Green's functions of left-invariant (convection-)diffusions on SE(2)."""
from __future__ import annotations

from .core import (
    Case,
    DiffusionParams,
    Domain,
    GridSpec,
    GroupElement,
    NumericalError,
    Se2Error,
    Se2Field,
)

__all__ = [
    "Case",
    "DiffusionParams",
    "Domain",
    "GridSpec",
    "GroupElement",
    "NumericalError",
    "Se2Error",
    "Se2Field",
]
__version__ = "0.1.0"
