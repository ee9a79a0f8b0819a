"""Reflected-Brownian Schroedinger bridges as eta-scaled entropic OT problems."""

from . import domains, eot, kernels, ldp, skorokhod

__version__ = "0.1.0"

__all__ = ["domains", "eot", "kernels", "ldp", "skorokhod", "__version__"]
