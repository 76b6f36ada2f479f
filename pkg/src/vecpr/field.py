"""Complex grid arithmetic and product-space bookkeeping.

Arrays are plain numpy:

* a ComplexImage is an ``(n, n)`` complex128 array,
* a SixChannelField is ``(6, n, n)`` with channels ordered as :data:`CHANNELS`,
* a ProductIterate is ``(p, 6, n, n)``, one field per block.

The scalar model reuses the same layout with a single channel.
"""
from __future__ import annotations

import numpy as np

CHANNELS = ("XX", "XY", "XZ", "YX", "YY", "YZ")


def as_image(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
        raise ValueError(f"expected a square n x n grid with n >= 2, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("grid contains non-finite values")
    return a


def fft2_centered(img: np.ndarray) -> np.ndarray:
    """Unitary 2-D DFT with the zero frequency at pixel ``(n//2, n//2)``.

    Acts on the last two axes, so stacks of images (fields, product
    iterates) are transformed channel by channel.
    """
    img = np.asarray(img)
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(img, axes=(-2, -1)), norm="ortho"), axes=(-2, -1)
    )


def ifft2_centered(img: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2_centered`."""
    img = np.asarray(img)
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(img, axes=(-2, -1)), norm="ortho"), axes=(-2, -1)
    )


def frobenius_norm(x) -> float:
    x = np.asarray(x)
    return float(np.sqrt(np.sum(x.real**2 + x.imag**2)))


def inner(x, y) -> float:
    """Real inner product Re<x, y> on the underlying real Hilbert space."""
    return float(np.real(np.vdot(np.asarray(y), np.asarray(x))))


def diagonal_average(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u)
    if u.ndim < 1 or u.shape[0] < 1:
        raise ValueError("product iterate needs at least one block")
    return u.mean(axis=0)


def duplicate(x: np.ndarray, p: int) -> np.ndarray:
    if p < 1:
        raise ValueError(f"block count must be positive, got {p}")
    x = np.asarray(x)
    return np.broadcast_to(x, (p,) + x.shape).copy()


def is_diagonal(u: np.ndarray, tol: float = 1e-10) -> bool:
    u = np.asarray(u)
    return all(frobenius_norm(u[k] - u[0]) <= tol * (1.0 + frobenius_norm(u[0])) for k in range(1, len(u)))


def random_field(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard complex Gaussian samples, used by tests and diagnostics."""
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
