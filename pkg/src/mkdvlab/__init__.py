"""Pseudospectral mKdV2 on the torus and a Monte Carlo measure laboratory."""

from .spectral import (
    AliasingError,
    GridField,
    NormSpec,
    SpectralField,
    Trajectory,
)

__all__ = [
    "AliasingError",
    "GridField",
    "NormSpec",
    "SpectralField",
    "Trajectory",
]
