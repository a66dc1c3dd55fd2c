import numpy as np
import pytest

from ffdi.modules.errors import DataError
from ffdi.modules.image_io import decode_ppm, encode_ppm, quantize, read_image, write_image


class TestPpm:
    def test_quantization_error_bound(self, rng):
        image = rng.uniform(size=(3, 9, 7))
        restored = decode_ppm(encode_ppm(image))
        assert restored.shape == image.shape
        assert np.abs(restored - image).max() <= 1.0 / 510 + 1e-12

    def test_single_white_pixel(self):
        payload = encode_ppm(np.ones((3, 1, 1)))
        assert payload == b"P6\n1 1\n255\n\xff\xff\xff"
        np.testing.assert_array_equal(decode_ppm(payload), np.ones((3, 1, 1)))

    def test_round_half_up(self):
        assert quantize(np.full((3, 1, 1), 0.5 / 255))[0, 0, 0] == 1

    def test_header_comments(self):
        payload = b"P6\n# made by hand\n2 1 # width height\n255\n" + bytes([0, 0, 0, 255, 255, 255])
        image = decode_ppm(payload)
        assert image.shape == (3, 1, 2)
        np.testing.assert_array_equal(image[:, 0, 1], [1.0, 1.0, 1.0])

    def test_truncated_pixels(self):
        payload = encode_ppm(np.zeros((3, 4, 4)))[:-5]
        with pytest.raises(DataError, match="truncated"):
            decode_ppm(payload)

    def test_wrong_magic(self):
        with pytest.raises(DataError, match="byte 0"):
            decode_ppm(b"P3\n1 1\n255\n0 0 0")

    def test_wide_maxval_rejected(self):
        with pytest.raises(DataError, match="maxval"):
            decode_ppm(b"P6\n1 1\n65535\n" + bytes(6))

    def test_missing_height(self):
        with pytest.raises(DataError, match="height"):
            decode_ppm(b"P6\n4")


class TestFiles:
    def test_write_and_read_ppm(self, tmp_path, rng):
        image = rng.uniform(size=(3, 5, 5))
        path = write_image(str(tmp_path / "nested" / "a.ppm"), image)
        assert np.abs(read_image(path) - image).max() <= 1.0 / 510 + 1e-12

    def test_png_round_trip(self, tmp_path, rng):
        pytest.importorskip("png")
        image = rng.uniform(size=(3, 6, 4))
        path = write_image(str(tmp_path / "a.png"), image)
        assert np.abs(read_image(path) - image).max() <= 1.0 / 510 + 1e-12

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(DataError, match="extension"):
            write_image(str(tmp_path / "a.jpg"), np.zeros((3, 2, 2)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_image(str(tmp_path / "absent.ppm"))
