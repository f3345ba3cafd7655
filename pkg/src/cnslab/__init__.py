"""Pseudo-spectral laboratory for compressible Navier-Stokes in Lagrangian coordinates."""

from .constitutive import ConstitutiveLaw, builtin_law
from .littlewood_paley import BesovIndex, DyadicFilterBank, build_filter_bank
from .spectral import GridField, TorusGrid

__all__ = [
    "BesovIndex",
    "ConstitutiveLaw",
    "DyadicFilterBank",
    "GridField",
    "TorusGrid",
    "build_filter_bank",
    "builtin_law",
]

__version__ = "0.1.0"
