"""Noll-indexed Zernike polynomials on the sampled aperture."""
from __future__ import annotations

from math import factorial

import numpy as np


def noll_to_nm(j: int) -> tuple[int, int]:
    """Radial order and signed azimuthal frequency of Noll index ``j`` (j >= 1)."""
    if j < 1:
        raise ValueError("Noll indices start at 1")
    n, j1 = 0, j - 1
    while j1 > n:
        n += 1
        j1 -= n
    m = (-1) ** j * ((n % 2) + 2 * ((j1 + ((n + 1) % 2)) // 2))
    return n, m


def radial(n: int, m: int, rho):
    m = abs(m)
    out = np.zeros_like(rho, dtype=float)
    for k in range((n - m) // 2 + 1):
        c = (-1) ** k * factorial(n - k) / (
            factorial(k) * factorial((n + m) // 2 - k) * factorial((n - m) // 2 - k)
        )
        out += c * rho ** (n - 2 * k)
    return out


def zernike(j: int, rho, theta):
    """RMS-normalised Zernike mode ``j`` on the unit disk."""
    n, m = noll_to_nm(j)
    if m == 0:
        return np.sqrt(n + 1) * radial(n, 0, rho)
    norm = np.sqrt(2 * (n + 1))
    if m > 0:
        return norm * radial(n, m, rho) * np.cos(m * theta)
    return norm * radial(n, m, rho) * np.sin(-m * theta)


def zernike_basis(ap, modes) -> np.ndarray:
    """Stack of the requested modes sampled on ``ap`` (zero off the mask)."""
    rho = np.hypot(ap.kx, ap.ky) / ap.na
    theta = np.arctan2(ap.ky, ap.kx)
    return np.stack([np.where(ap.mask, zernike(j, rho, theta), 0.0) for j in modes])
