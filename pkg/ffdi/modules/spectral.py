"""
FFDI - Spectral Module
2-D DFT with center-shifted storage, square low-pass masks, LFI/HFI
decomposition and the amplitude/phase polar form. Pure functions on numpy
arrays; images are C x H x W, channels handled independently.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .logger import get_logger

logger = get_logger(__name__)

# Unperturbed round trips above this residue indicate a broken transform.
RESIDUE_WARN = 1e-3


@dataclass
class Spectrum:
    """Complex H x W grid per channel (C x H x W), DC at (H // 2, W // 2)."""

    values: np.ndarray

    @property
    def height(self):
        return self.values.shape[-2]

    @property
    def width(self):
        return self.values.shape[-1]

    @property
    def center(self):
        return self.height // 2, self.width // 2


@dataclass
class LowpassMask:
    grid: np.ndarray
    r: int
    center: tuple

    @property
    def ones(self):
        return int(self.grid.sum())


@dataclass
class PolarSpectrum:
    amplitude: np.ndarray
    phase: np.ndarray


def _as_grid(channel):
    grid = np.asarray(channel, dtype=np.float64)
    if grid.ndim < 2 or grid.shape[-1] < 1 or grid.shape[-2] < 1:
        raise ShapeError(f"expected an H x W grid (optionally with leading channels), got {grid.shape}")
    return grid


def fft2d(channel):
    """
    Forward DFT over the last two axes, F(u,v) = sum x(a,b) exp(-j2pi(au/A + bv/B)),
    shifted so the DC bin sits at the array center. Any H, W.
    """
    grid = _as_grid(channel)
    return Spectrum(np.fft.fftshift(np.fft.fft2(grid, axes=(-2, -1)), axes=(-2, -1)))


def ifft2d_with_residue(spectrum):
    values = np.fft.ifftshift(spectrum.values, axes=(-2, -1))
    inverse = np.fft.ifft2(values, axes=(-2, -1))
    residue = float(np.abs(inverse.imag).max()) if inverse.size else 0.0
    return inverse.real, residue


def ifft2d(spectrum):
    """Real part of the inverse transform; see ifft2d_with_residue for the imaginary residue."""
    return ifft2d_with_residue(spectrum)[0]


def lowpass_mask(height, width, r):
    """
    Square box of ones: u in [c_x - r, c_x + r], v in [c_y - r, c_y + r],
    inclusive and clamped to the grid.
    """
    if r < 0:
        raise ShapeError(f"frequency threshold r must be >= 0, got {r}")
    if height < 1 or width < 1:
        raise ShapeError(f"mask size must be positive, got {height}x{width}")
    r = int(r)
    c_x, c_y = height // 2, width // 2
    grid = np.zeros((height, width), dtype=np.float64)
    grid[max(0, c_x - r) : min(height, c_x + r + 1), max(0, c_y - r) : min(width, c_y + r + 1)] = 1.0
    return LowpassMask(grid=grid, r=r, center=(c_x, c_y))


def expected_mask_ones(height, width, r):
    return min(2 * r + 1, height) * min(2 * r + 1, width)


def decompose(image, r):
    """
    Split an image (C x H x W, or H x W) into (LFI, HFI) with HFI = I - LFI.
    LFI is not clipped: both parts are regression targets.
    """
    image = _as_grid(image)
    mask = lowpass_mask(image.shape[-2], image.shape[-1], r)
    spectrum = fft2d(image)
    lfi, residue = ifft2d_with_residue(Spectrum(spectrum.values * mask.grid))
    if residue > RESIDUE_WARN:
        logger.warning("Low-pass inverse left imaginary residue %.3g", residue)
    hfi = image - lfi
    return lfi, hfi


def decompose_batch(images, r):
    """Decompose an N x C x H x W stack in one transform."""
    images = np.asarray(images, dtype=np.float64)
    mask = lowpass_mask(images.shape[-2], images.shape[-1], r)
    lfi = ifft2d(Spectrum(fft2d(images).values * mask.grid))
    return lfi, images - lfi


def to_polar(spectrum):
    """Amplitude = modulus, phase = principal argument in (-pi, pi]; zero bins get phase 0."""
    values = spectrum.values
    amplitude = np.abs(values)
    phase = np.where(amplitude > 0, np.angle(values), 0.0)
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return PolarSpectrum(amplitude=amplitude, phase=phase)


def from_polar(polar):
    return Spectrum(polar.amplitude * np.exp(1j * polar.phase))


def wrap_phase(phase):
    """Map any real phase into (-pi, pi]."""
    wrapped = np.mod(phase + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped <= -np.pi, np.pi, wrapped)


def energy(grid):
    grid = np.asarray(grid)
    return float((np.abs(grid) ** 2).sum())
