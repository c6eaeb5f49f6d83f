"""Flat-manifold VAEs: constrained training with a hierarchical prior and
latent-geometry analysis (condition numbers, magnification factors, geodesics).
"""

__version__ = "0.1.0"

from .ndtensor import Tensor, Tape

__all__ = ["Tensor", "Tape", "__version__"]
