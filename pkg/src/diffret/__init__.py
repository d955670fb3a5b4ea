"""Generative text-video retrieval with a diffusion model over joint distributions."""

__version__ = "0.1.0"

from .pipeline import DiffusionRetriever  # noqa: E402

__all__ = ["DiffusionRetriever", "__version__"]
