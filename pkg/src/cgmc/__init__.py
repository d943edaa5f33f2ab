"""Coupled coarse-grained Monte Carlo for 1-D lattice gases.

The package exposes the microscopic model (:mod:`cgmc.lattice_model`), the
coarse-graining machinery (:mod:`cgmc.coarse_graining`), the two samplers
(:mod:`cgmc.samplers`), exact oracles (:mod:`cgmc.exact_oracles`) and the
experiment harness behind the ``cgmc`` command (:mod:`cgmc.analysis_harness`).
"""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
