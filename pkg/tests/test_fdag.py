import numpy as np
import pytest

from ffdi.modules.config import NoiseConfig
from ffdi.modules.errors import ConfigurationError
from ffdi.modules.fdag import channel_sigmas, identity_config, perturb, perturb_many, sample_noise_field, snr_to_sigma
from ffdi.modules.spectral import fft2d, to_polar


@pytest.fixture
def image(rng):
    return rng.uniform(size=(3, 32, 32))


def _always(**kwargs):
    values = {"apply_probability": 1.0}
    values.update(kwargs)
    return NoiseConfig(**values).validate()


class TestNoiseLaws:
    def test_snr_to_sigma(self):
        signal = np.full(10, 2.0)
        assert snr_to_sigma(signal, 0.0) == pytest.approx(2.0)
        assert snr_to_sigma(signal, 20.0) == pytest.approx(0.2)

    def test_zero_signal_gives_zero_sigma(self):
        assert snr_to_sigma(np.zeros(5), 30.0) == 0.0

    def test_empty_signal_rejected(self):
        with pytest.raises(ConfigurationError):
            snr_to_sigma(np.zeros(0), 30.0)

    def test_field_ranges(self, rng):
        cfg = _always(mult_low=0.5, mult_high=1.5, add_sigma=0.1, snr_db=None)
        alpha, beta = sample_noise_field((64, 64), cfg, rng)
        assert alpha.min() >= 0.5 and alpha.max() < 1.5
        assert abs(beta.std() - 0.1) < 0.01

    def test_multiplicative_law_has_unit_mean(self):
        alpha, _ = sample_noise_field((1000, 1000), _always(add_sigma=0.0, snr_db=None), np.random.default_rng(8))
        assert abs(alpha.mean() - 1.0) < 2e-3

    def test_snr_sigma_is_per_channel(self, rng):
        grid = np.stack([np.full((8, 8), 1.0), np.full((8, 8), 10.0), np.zeros((8, 8))])
        sigmas = channel_sigmas(grid, 20.0)
        assert sigmas.shape == (3, 1, 1)
        np.testing.assert_allclose(sigmas.ravel(), [0.1, 1.0, 0.0])
        _, beta = sample_noise_field(grid.shape, _always(snr_db=20.0), rng, signal=grid)
        assert not beta[2].any()
        assert beta[1].std() > 5 * beta[0].std()

    def test_sigma_and_snr_exclusive(self):
        with pytest.raises(ConfigurationError):
            NoiseConfig(add_sigma=0.1, snr_db=30.0).validate()


class TestPerturb:
    def test_identity_laws_reproduce_input(self, image):
        out = perturb(image, identity_config(), np.random.default_rng(0))
        assert np.abs(out - image).max() <= 1e-4

    @pytest.mark.parametrize("target", ["amplitude", "phase", "both"])
    def test_output_range(self, image, target):
        out = perturb(image, _always(target=target), np.random.default_rng(3))
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert out.shape == image.shape

    def test_changes_image_when_applied(self, image):
        out = perturb(image, _always(target="both", snr_db=None, add_sigma=0.5), np.random.default_rng(3))
        assert np.abs(out - image).max() > 1e-3

    def test_target_none_is_identity(self, image):
        out = perturb(image, _always(target="none"), np.random.default_rng(0))
        np.testing.assert_array_equal(out, image)

    def test_probability_zero_skips(self, image):
        cfg = NoiseConfig(apply_probability=0.0).validate()
        np.testing.assert_array_equal(perturb(image, cfg, np.random.default_rng(0)), image)

    def test_seed_reproducible(self, image):
        cfg = _always()
        first = perturb(image, cfg, np.random.default_rng(11))
        second = perturb(image, cfg, np.random.default_rng(11))
        np.testing.assert_array_equal(first, second)

    def test_constant_image_stays_constant_under_amplitude_scaling(self):
        grid = np.full((3, 16, 16), 0.4)
        cfg = _always(target="amplitude", add_sigma=0.0, snr_db=None)
        out = perturb(grid, cfg, np.random.default_rng(2))
        for channel in out:
            assert np.ptp(channel) < 1e-9
        assert 0.2 - 1e-9 <= out.min() and out.max() <= 0.6 + 1e-9

    def test_amplitude_only_keeps_phase_where_unclipped(self):
        # mid-grey image with a faint pattern so clipping never triggers
        grid = 0.5 + 0.01 * np.cos(np.linspace(0, 4 * np.pi, 16))[None, :, None] * np.ones((1, 16, 16))
        cfg = _always(target="amplitude", mult_low=0.9, mult_high=1.1, snr_db=None, add_sigma=0.0)
        out = perturb(grid, cfg, np.random.default_rng(5))
        assert out.min() > 0.0 and out.max() < 1.0
        before = to_polar(fft2d(grid))
        after = to_polar(fft2d(out))
        strong = before.amplitude > 1e-6
        # the real-part projection symmetrizes the spectrum, so compare the dominant bins only
        assert np.allclose(np.cos(after.phase[strong] - before.phase[strong]), 1.0, atol=1e-6)

    def test_perturb_many_seeds(self, image):
        outputs, seeds = perturb_many([image, image, image], _always(), seed=6)
        assert seeds == [6, 7, 4]
        np.testing.assert_array_equal(outputs[0], perturb(image, _always(), np.random.default_rng(6)))
        assert not np.array_equal(outputs[0], outputs[1])
