"""
FFDI - Frequency-domain Augmentation Module
Multiplicative and additive noise on the amplitude and/or phase spectrum of
an image, followed by the inverse transform. Deterministic given the rng.
"""

import numpy as np

from .config import NoiseConfig
from .errors import ConfigurationError
from .logger import get_logger
from .spectral import fft2d, from_polar, ifft2d, to_polar, wrap_phase

logger = get_logger(__name__)


def snr_to_sigma(signal, snr_db):
    """sigma = sqrt(mean(signal^2) / 10^(snr_db / 10)); zero signal gives zero sigma."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.size == 0:
        raise ConfigurationError("snr_to_sigma needs a non-empty signal")
    power = float(np.mean(signal * signal))
    if power == 0.0 or np.isinf(snr_db):
        return 0.0
    return float(np.sqrt(power / (10.0 ** (snr_db / 10.0))))


def channel_sigmas(signal, snr_db):
    """snr_to_sigma for each leading-axis channel of a C x H x W grid, shaped C x 1 x 1."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim < 3:
        return snr_to_sigma(signal, snr_db)
    sigmas = [snr_to_sigma(channel, snr_db) for channel in signal]
    return np.asarray(sigmas).reshape((-1,) + (1,) * (signal.ndim - 1))


def sample_noise_field(shape, cfg, rng, signal=None):
    """
    Draw (alpha, beta) with alpha ~ U(a, b) and beta ~ N(mu, sigma^2) per element.
    When cfg.snr_db is set, sigma is derived per channel from `signal` (the grid being perturbed).
    """
    if cfg.add_sigma is not None:
        sigma = cfg.add_sigma
    elif cfg.snr_db is not None:
        if signal is None:
            raise ConfigurationError("an SNR-scaled noise law needs the target signal")
        sigma = channel_sigmas(signal, cfg.snr_db)
    else:
        sigma = 0.0
    alpha = rng.uniform(cfg.mult_low, cfg.mult_high, size=shape)
    beta = rng.normal(cfg.add_mean, sigma, size=shape)
    return alpha, beta


def perturb(image, cfg, rng):
    """
    With probability cfg.apply_probability, perturb the configured spectrum
    grid(s) as alpha * grid + beta and transform back; output clipped to [0, 1].
    Amplitude and phase draw independent fields.
    """
    image = np.asarray(image, dtype=np.float64)
    if cfg.target == "none" or rng.random() >= cfg.apply_probability:
        return image.copy()

    polar = to_polar(fft2d(image))
    amplitude, phase = polar.amplitude, polar.phase
    if cfg.target in ("amplitude", "both"):
        alpha, beta = sample_noise_field(amplitude.shape, cfg, rng, signal=amplitude)
        # negative amplitude would silently flip the phase by pi
        amplitude = np.maximum(alpha * amplitude + beta, 0.0)
    if cfg.target in ("phase", "both"):
        alpha, beta = sample_noise_field(phase.shape, cfg, rng, signal=phase)
        phase = wrap_phase(alpha * phase + beta)

    polar.amplitude, polar.phase = amplitude, phase
    # Hermitian symmetry is gone after independent noise; keep the real part.
    restored = ifft2d(from_polar(polar))
    return np.clip(restored, 0.0, 1.0)


def perturb_many(images, cfg, seed):
    """
    Augment a list of images with per-image child seeds seed XOR index.
    Returns (augmented images, seeds used).
    """
    outputs, seeds = [], []
    for index, image in enumerate(images):
        child_seed = int(seed) ^ index
        outputs.append(perturb(image, cfg, np.random.default_rng(child_seed)))
        seeds.append(child_seed)
    return outputs, seeds


def identity_config():
    """Degenerate laws: alpha == 1, beta == 0, always applied."""
    return NoiseConfig(
        target="both", mult_low=1.0, mult_high=1.0, add_mean=0.0,
        add_sigma=0.0, snr_db=None, apply_probability=1.0,
    )
