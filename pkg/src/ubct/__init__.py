"""Desk-scale low-dose CT reconstruction with an unfolded diffusion bridge.

The package wires together a parallel-beam projector pair with a matched
adjoint, a low-dose noise simulator, a bridge time schedule, a minimal
autodiff engine, and the unfolded gradient-step/refinement network with its
rollout trainer and stage-wise sampler.
"""

__version__ = "0.1.0"

from .kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
