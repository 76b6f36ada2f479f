"""Pupil geometry, polarisation maps and the scalar / vectorial PSF models."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from vecpr.field import CHANNELS, fft2_centered


@dataclass(frozen=True, eq=False)
class ApertureModel:
    """Sampled pupil of a (possibly high-NA) imaging system.

    Pupil coordinates are normalised so the aperture is the disk of radius
    ``na``. ``E`` stacks the polarisation maps in :data:`CHANNELS` order and
    vanishes off the mask. A scalar model is the same object with a single
    channel equal to the mask (see :meth:`as_scalar`).
    """

    n: int
    na: float
    wavelength: float
    pixel_size: float
    spacing: float
    mask: np.ndarray
    kx: np.ndarray
    ky: np.ndarray
    kz: np.ndarray
    E: np.ndarray
    amplitude: np.ndarray
    channels: tuple = CHANNELS

    @property
    def channel_weight(self) -> float:
        """Value of sum_c E_c**2 on the mask (2 for vectorial, 1 for scalar)."""
        return float(np.sum(self.E[:, self.n // 2, self.n // 2] ** 2))

    @property
    def is_scalar(self) -> bool:
        return len(self.channels) == 1

    @property
    def depth_of_focus(self) -> float:
        return self.wavelength / self.na**2

    def as_scalar(self) -> "ApertureModel":
        return dataclasses.replace(self, E=self.mask[None].astype(float), channels=("S",))

    def with_amplitude(self, amplitude) -> "ApertureModel":
        amplitude = np.asarray(amplitude, dtype=float)
        if amplitude.shape != self.mask.shape:
            raise ValueError("amplitude shape does not match the grid")
        if np.any(amplitude < 0):
            raise ValueError("amplitude must be nonnegative")
        return dataclasses.replace(self, amplitude=np.where(self.mask, amplitude, 0.0))

    def metadata(self) -> dict:
        return {
            "n": self.n,
            "na": self.na,
            "wavelength": self.wavelength,
            "pixel_size": self.pixel_size,
            "spacing": self.spacing,
            "channels": list(self.channels),
        }


def polarisation_maps(kx, ky, kz) -> np.ndarray:
    """Output-field components for unit x- and y-polarised input, stacked as (6, ...)."""
    kx, ky, kz = np.broadcast_arrays(np.asarray(kx, float), np.asarray(ky, float), np.asarray(kz, float))
    denom = 1.0 + kz
    return np.stack(
        [
            1.0 - kx**2 / denom,  # XX
            -kx * ky / denom,  # XY
            -kx,  # XZ
            -ky * kx / denom,  # YX
            1.0 - ky**2 / denom,  # YY
            -ky,  # YZ
        ]
    )


def build_aperture(
    n: int,
    na: float,
    wavelength: float = 0.3,
    pixel_size: float = 0.06,
    amplitude_spec="truncated-gaussian",
    fill: float = 0.5,
) -> ApertureModel:
    """Build the sampled aperture.

    Parameters
    ----------
    n : int
        Grid size (pixels), at least 8.
    na : float
        Numerical aperture, ``0 < na < 1``.
    wavelength, pixel_size : float
        Metadata in micrometres; ``wavelength`` also sets the defocus scale.
    amplitude_spec : {"uniform", "truncated-gaussian"} or array_like
        Pupil amplitude. The truncated Gaussian equals 1 at the centre and
        0.5 on the rim. An array is used as given (must be nonnegative).
    fill : float
        Fraction of the grid width covered by the aperture diameter.
    """
    if not 0 < na < 1:
        raise ValueError(f"numerical aperture must lie in (0, 1), got {na}")
    if n < 8:
        raise ValueError(f"grid size must be at least 8, got {n}")
    if not 0 < fill <= 1:
        raise ValueError(f"fill fraction must lie in (0, 1], got {fill}")

    radius_px = fill * n / 2
    spacing = na / radius_px
    idx = (np.arange(n) - n // 2) * spacing
    y, x = np.meshgrid(idx, idx, indexing="ij")
    r2 = x**2 + y**2
    # exact rim pixels must not fall out on round-off
    mask = r2 <= na**2 * (1 + 1e-12)

    kx = np.where(mask, x, 0.0)
    ky = np.where(mask, y, 0.0)
    kz = np.where(mask, np.sqrt(np.clip(1.0 - kx**2 - ky**2, 0.0, None)), 0.0)
    E = np.where(mask, polarisation_maps(kx, ky, np.where(mask, kz, 1.0)), 0.0)

    if isinstance(amplitude_spec, str):
        if amplitude_spec == "uniform":
            amp = np.ones((n, n))
        elif amplitude_spec in ("truncated-gaussian", "gaussian"):
            sigma = na / np.sqrt(2 * np.log(2))
            amp = np.exp(-r2 / (2 * sigma**2))
        else:
            raise ValueError(f"unknown amplitude spec {amplitude_spec!r}")
    else:
        amp = np.asarray(amplitude_spec, dtype=float)
        if amp.shape != (n, n):
            raise ValueError("amplitude image must be n x n")
        if np.any(amp < 0) or not np.all(np.isfinite(amp)):
            raise ValueError("amplitude image must be finite and nonnegative")
    amp = np.where(mask, amp, 0.0)

    return ApertureModel(
        n=n, na=float(na), wavelength=float(wavelength), pixel_size=float(pixel_size),
        spacing=spacing, mask=mask, kx=kx, ky=ky, kz=kz, E=E, amplitude=amp,
    )


def _check_phase(ap: ApertureModel, *maps):
    for m in maps:
        if np.shape(m) != (ap.n, ap.n):
            raise ValueError(f"phase map shape {np.shape(m)} does not match grid {ap.n}")
        if np.iscomplexobj(m):
            raise ValueError("phase maps must be real")


def pupil_function(ap: ApertureModel, phase, diversity=0.0, amplitude=None) -> np.ndarray:
    amp = ap.amplitude if amplitude is None else amplitude
    return amp * np.exp(1j * (np.asarray(phase) + diversity)) * ap.mask


def embed_pupil(ap: ApertureModel, pupil) -> np.ndarray:
    """Lift a pupil field into Omega_0: channel c is E_c * pupil."""
    return ap.E * np.asarray(pupil)[None]


def vectorial_psf(ap: ApertureModel, phase, diversity=None) -> np.ndarray:
    """Incoherent sum over the six polarisation channels of |F(E_c A e^{j(phase+div)})|^2."""
    diversity = np.zeros((ap.n, ap.n)) if diversity is None else diversity
    _check_phase(ap, phase, diversity)
    spec = fft2_centered(embed_pupil(ap, pupil_function(ap, phase, diversity)))
    return np.sum(spec.real**2 + spec.imag**2, axis=0)


def scalar_psf(ap: ApertureModel, phase, diversity=None) -> np.ndarray:
    diversity = np.zeros((ap.n, ap.n)) if diversity is None else diversity
    _check_phase(ap, phase, diversity)
    spec = fft2_centered(pupil_function(ap, phase, diversity))
    return spec.real**2 + spec.imag**2


def model_psf(ap: ApertureModel, phase, diversity=None) -> np.ndarray:
    """Forward model matching the aperture's channel layout."""
    return scalar_psf(ap, phase, diversity) if ap.is_scalar else vectorial_psf(ap, phase, diversity)


def defocus_diversity(ap: ApertureModel, z: float) -> np.ndarray:
    """Defocus phase (2 pi / wavelength) * z * k_z on the mask; ``z`` in micrometres."""
    return np.where(ap.mask, 2 * np.pi / ap.wavelength * z * ap.kz, 0.0)


def diversity_stack(ap: ApertureModel, m: int, spacing_dof: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """``m`` defocus maps centred on focus, uniformly spaced by ``spacing_dof`` depths of focus.

    Returns the stack and the defocus distances in micrometres.
    """
    if m < 1:
        raise ValueError("need at least one diversity image")
    offsets = (np.arange(m) - (m - 1) / 2) * spacing_dof * ap.depth_of_focus
    return np.stack([defocus_diversity(ap, z) for z in offsets]), offsets
