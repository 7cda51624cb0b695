import numpy as np
import pytest

from upw.errors import FormatError, TruncationError
from upw.ppm import parse_ppm, ppm_bytes, read_ppm, write_ppm


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(5, 9, 3), dtype=np.uint8)
    path = tmp_path / "img.ppm"
    write_ppm(path, img)
    assert np.array_equal(read_ppm(path), img)


def test_deterministic_bytes():
    img = np.arange(2 * 2 * 3, dtype=np.uint8).reshape(2, 2, 3)
    assert ppm_bytes(img) == ppm_bytes(img)
    assert ppm_bytes(img).startswith(b"P6\n2 2\n255\n")


def test_header_comments_and_whitespace():
    img = np.array([[[1, 2, 3]]], dtype=np.uint8)
    data = b"P6 # comment\n# another comment\n 1\t1 \n255\n" + bytes([1, 2, 3])
    assert np.array_equal(parse_ppm(data), img)


def test_bad_magic():
    with pytest.raises(FormatError):
        parse_ppm(b"P5\n1 1\n255\n\x00")


def test_bad_maxval():
    with pytest.raises(FormatError):
        parse_ppm(b"P6\n1 1\n65535\n" + bytes(6))


def test_truncated_raster():
    with pytest.raises(TruncationError) as ei:
        parse_ppm(b"P6\n2 2\n255\n" + bytes(5))
    assert ei.value.offset == len(b"P6\n2 2\n255\n") + 5


def test_non_integer_field():
    with pytest.raises(FormatError):
        parse_ppm(b"P6\nab 1\n255\n")
