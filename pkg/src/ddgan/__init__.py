"""Zero-shot sketch-to-shape retrieval with disentangled encoders and feature synthesis."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
