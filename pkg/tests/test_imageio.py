import numpy as np
import pytest
from PIL import Image

from ticketcodec.imageio import UnsupportedImageError, read_image, write_image
from ticketcodec.metrics import quantize_8bit

from conftest import DATA


def test_ppm_round_trip_is_byte_identical(tmp_path):
    x = read_image(DATA / "chelsea_64.png")
    a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
    write_image(x, a)
    y = read_image(a)
    np.testing.assert_array_equal(x, y)
    write_image(y, b)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes().startswith(b"P6\n64 64\n255\n")


def test_png_round_trip(tmp_path):
    x = read_image(DATA / "coffee_64.png")
    write_image(x, tmp_path / "c.png")
    np.testing.assert_array_equal(read_image(tmp_path / "c.png"), x)


def test_black_png(tmp_path):
    Image.new("RGB", (5, 3)).save(tmp_path / "black.png")
    x = read_image(tmp_path / "black.png")
    assert x.shape == (3, 3, 5) and not x.any()


def test_grayscale_png_becomes_rgb(tmp_path):
    Image.new("L", (2, 2), 128).save(tmp_path / "g.png")
    x = read_image(tmp_path / "g.png")
    assert x.shape == (3, 2, 2) and np.all(x == 128 / 255)


def test_float_write_error_at_most_half_a_level(tmp_path):
    x = np.random.default_rng(0).random((3, 6, 7))
    write_image(x, tmp_path / "r.ppm")
    assert np.abs(read_image(tmp_path / "r.ppm") - x).max() <= 1 / 510 + 1e-12
    np.testing.assert_array_equal(quantize_8bit(read_image(tmp_path / "r.ppm")), quantize_8bit(x))


def test_ppm_with_comment(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
    x = read_image(p)
    assert x[:, 0, 0].tolist() == [1, 0, 0] and x[:, 0, 1].tolist() == [0, 0, 1]


def test_unsupported_inputs(tmp_path):
    (tmp_path / "a.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    (tmp_path / "b.ppm").write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    for name in ("a.ppm", "b.ppm"):
        with pytest.raises(UnsupportedImageError):
            read_image(tmp_path / name)
    with pytest.raises(UnsupportedImageError):
        read_image(tmp_path / "x.jpg")
    with pytest.raises(ValueError):
        write_image(np.zeros((4, 2, 2)), tmp_path / "x.png")
