"""Closed-form projectors onto the constraint sets of vectorial phase retrieval.

Sets act on fields of shape ``(C, n, n)`` (C = 6 vectorial, 1 scalar) or on
product iterates of shape ``(p, C, n, n)``. Multi-valued projections are
resolved deterministically:

* a zero pixel in :func:`project_S` puts all its energy into the first
  channel with zero phase,
* a zero pixel of the amplitude-weighted pupil sum in :func:`project_chi`
  takes phase 0.

Each such choice is reported in ``ProjectionResult.degenerate_pixels``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from vecpr.field import diagonal_average, duplicate, fft2_centered, frobenius_norm, ifft2_centered
from vecpr.optics import ApertureModel, embed_pupil


@dataclass
class ProjectionResult:
    point: np.ndarray
    unique: bool = True
    # (i, j) for fields, (block, i, j) for product iterates
    degenerate_pixels: list = field(default_factory=list)


def _pixels(flags: np.ndarray) -> list:
    return [tuple(int(v) for v in idx) for idx in np.argwhere(flags)]


def apply_M(diversity, x):
    """Channelwise F(x_c e^{j phi_d})."""
    return fft2_centered(np.asarray(x) * np.exp(1j * np.asarray(diversity)))


def apply_M_inv(diversity, x):
    return ifft2_centered(x) * np.exp(-1j * np.asarray(diversity))


def gauge_G(diversity, x) -> np.ndarray:
    y = apply_M(diversity, x)
    return np.sqrt(np.sum(y.real**2 + y.imag**2, axis=0))


def project_S(intensity, z) -> ProjectionResult:
    """Pixelwise radial projection onto spheres of radius sqrt(intensity) in C^C."""
    r = np.asarray(intensity, dtype=float)
    if np.any(r < 0):
        raise ValueError("intensities must be nonnegative")
    z = np.asarray(z)
    norm = np.sqrt(np.sum(z.real**2 + z.imag**2, axis=0))
    radius = np.sqrt(r)
    zero = norm == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(zero, 0.0, radius / np.where(zero, 1.0, norm))
    out = z * scale[None]
    out[0] = np.where(zero, radius, out[0])
    degenerate = zero & (radius > 0)
    return ProjectionResult(out, unique=not degenerate.any(), degenerate_pixels=_pixels(degenerate))


def project_Omega_d(intensity, diversity, x) -> ProjectionResult:
    return _project_Omega_d(intensity, np.exp(1j * np.asarray(diversity)), x)


def _project_Omega_d(intensity, factor, x) -> ProjectionResult:
    res = project_S(intensity, fft2_centered(np.asarray(x) * factor))
    res.point = ifft2_centered(res.point) * np.conj(factor)
    return res


def omega0_pupil(ap: ApertureModel, x) -> np.ndarray:
    """Pupil z = (sum_c E_c x_c) / (sum_c E_c^2) of the Omega_0 projection."""
    return np.sum(ap.E * np.asarray(x), axis=0) / ap.channel_weight


def project_Omega_0(ap: ApertureModel, x) -> np.ndarray:
    return embed_pupil(ap, omega0_pupil(ap, x))


def project_chi(ap: ApertureModel, x, amplitude=None) -> ProjectionResult:
    amp = ap.amplitude if amplitude is None else np.asarray(amplitude, dtype=float)
    s = np.sum(ap.E * amp * np.asarray(x), axis=0)
    psi = np.angle(s)  # angle(0) == 0 is the selection rule
    degenerate = (s == 0) & (amp > 0) & ap.mask
    point = embed_pupil(ap, amp * np.exp(1j * psi))
    return ProjectionResult(point, unique=not degenerate.any(), degenerate_pixels=_pixels(degenerate))


def project_A(ap: ApertureModel, u) -> np.ndarray:
    u = np.asarray(u)
    return duplicate(project_Omega_0(ap, diagonal_average(u)), len(u))


def project_A_chi(ap: ApertureModel, u, amplitude=None) -> ProjectionResult:
    u = np.asarray(u)
    res = project_chi(ap, diagonal_average(u), amplitude)
    flags = [(b,) + px for b in range(len(u)) for px in res.degenerate_pixels]
    return ProjectionResult(duplicate(res.point, len(u)), res.unique, flags)


def project_D(u) -> np.ndarray:
    u = np.asarray(u)
    return duplicate(diagonal_average(u), len(u))


# -- constraint-set handles --------------------------------------------------


class ConstraintSet:
    """A set with a projector and a feasibility residual."""

    kind = "?"

    def project(self, x) -> ProjectionResult:
        raise NotImplementedError

    def residual(self, x) -> float:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class Omega0(ConstraintSet):
    kind = "Omega0"

    def __init__(self, ap: ApertureModel):
        self.ap = ap

    def project(self, x):
        return ProjectionResult(project_Omega_0(self.ap, x))

    def residual(self, x):
        return frobenius_norm(np.asarray(x) - project_Omega_0(self.ap, x))


class OmegaD(ConstraintSet):
    kind = "OmegaD"

    def __init__(self, intensity, diversity, d: int = 0):
        intensity = np.asarray(intensity, dtype=float)
        if np.any(intensity < 0):
            raise ValueError("Omega_d requires nonnegative intensities")
        self.intensity = intensity
        self.diversity = np.asarray(diversity, dtype=float)
        self.d = d
        self._factor = np.exp(1j * self.diversity)

    def project(self, x):
        return _project_Omega_d(self.intensity, self._factor, x)

    def residual(self, x):
        return float(np.max(np.abs(gauge_G(self.diversity, x) ** 2 - self.intensity)))

    def __repr__(self):
        return f"OmegaD(d={self.d})"


class Chi(ConstraintSet):
    kind = "Chi"

    def __init__(self, ap: ApertureModel, amplitude=None):
        self.ap = ap
        self.amplitude = ap.amplitude if amplitude is None else np.asarray(amplitude, dtype=float)
        if not np.any(self.amplitude > 0):
            raise ValueError("chi requires a nonzero amplitude")

    def project(self, x):
        return project_chi(self.ap, x, self.amplitude)

    def residual(self, x):
        x = np.asarray(x)
        z = omega0_pupil(self.ap, x)
        off_structure = frobenius_norm(x - embed_pupil(self.ap, z))
        modulus = float(np.max(np.abs(np.abs(z) - self.amplitude)[self.ap.mask]))
        return off_structure + modulus


class Diagonal(ConstraintSet):
    """D: all blocks equal."""

    kind = "D"

    def project(self, u):
        return ProjectionResult(project_D(u))

    def residual(self, u):
        u = np.asarray(u)
        return max((frobenius_norm(b - u[0]) for b in u[1:]), default=0.0)


class DiagonalOf(ConstraintSet):
    """[S]_m: equal blocks lying in a set S on the field space (A or A_chi)."""

    def __init__(self, base: ConstraintSet):
        self.base = base
        self.kind = "AChi" if isinstance(base, Chi) else "A"

    def project(self, u):
        u = np.asarray(u)
        res = self.base.project(diagonal_average(u))
        flags = [(b,) + px for b in range(len(u)) for px in res.degenerate_pixels]
        return ProjectionResult(duplicate(res.point, len(u)), res.unique, flags)

    def residual(self, u):
        u = np.asarray(u)
        return Diagonal().residual(u) + self.base.residual(u[0])

    def __repr__(self):
        return f"DiagonalOf({self.base!r})"


class Product(ConstraintSet):
    """Cartesian product of field-space sets (B, B+ or B_chi)."""

    def __init__(self, factors, kind="B"):
        self.factors = list(factors)
        if not self.factors:
            raise ValueError("product set needs at least one factor")
        self.kind = kind

    def project(self, u):
        u = np.asarray(u)
        if len(u) != len(self.factors):
            raise ValueError(f"{self.kind} expects {len(self.factors)} blocks, got {len(u)}")
        out = np.empty_like(u, dtype=complex)
        unique, flags = True, []
        for b, (s, blk) in enumerate(zip(self.factors, u)):
            res = s.project(blk)
            out[b] = res.point
            unique &= res.unique
            flags.extend((b,) + px for px in res.degenerate_pixels)
        return ProjectionResult(out, unique, flags)

    def residual(self, u):
        u = np.asarray(u)
        if len(u) != len(self.factors):
            raise ValueError(f"{self.kind} expects {len(self.factors)} blocks, got {len(u)}")
        return max(s.residual(blk) for s, blk in zip(self.factors, u))

    def __repr__(self):
        return f"Product({self.kind}, {len(self.factors)} factors)"


def set_A(ap: ApertureModel) -> DiagonalOf:
    return DiagonalOf(Omega0(ap))


def set_A_chi(ap: ApertureModel, amplitude=None) -> DiagonalOf:
    return DiagonalOf(Chi(ap, amplitude))


def set_B(omegas) -> Product:
    return Product(omegas, "B")


def set_B_plus(ap: ApertureModel, omegas) -> Product:
    return Product([Omega0(ap), *omegas], "BPlus")


def set_B_chi(ap: ApertureModel, omegas, amplitude=None) -> Product:
    return Product([Chi(ap, amplitude), *omegas], "BChi")


def data_sets(intensities, diversities) -> list:
    return [OmegaD(r, phi, d + 1) for d, (r, phi) in enumerate(zip(intensities, diversities))]


def project_B(omegas, u) -> ProjectionResult:
    return set_B(omegas).project(u)


def project_B_plus(ap: ApertureModel, omegas, u) -> ProjectionResult:
    return set_B_plus(ap, omegas).project(u)


def project_B_chi(ap: ApertureModel, omegas, u, amplitude=None) -> ProjectionResult:
    return set_B_chi(ap, omegas, amplitude).project(u)
