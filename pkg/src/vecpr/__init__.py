"""Projection algorithms for high-NA phase retrieval with a vectorial PSF model."""

__version__ = "0.1.0"
