import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from agglo.errors import FormatError
from agglo.fileio import decode_fmap, encode_fmap, read_fmap, read_ppm, write_fmap, write_ppm


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 5), st.integers(0, 10_000))
def test_round_trip(h, w, c, seed):
    x = np.random.default_rng(seed).normal(size=(h, w, c)).astype(np.float32).astype(np.float64)
    assert np.array_equal(decode_fmap(encode_fmap(x)).data, x)


def test_file_round_trip(tmp_path):
    x = np.arange(24.0).reshape(2, 3, 4)
    write_fmap(tmp_path / "a.fmap", x)
    assert np.array_equal(read_fmap(tmp_path / "a.fmap").data, x)


def test_single_value_payload():
    buf = encode_fmap(np.array([[[0.25]]]))
    (hlen,) = struct.unpack("<I", buf[5:9])
    payload = buf[9 + hlen:]
    assert payload == struct.pack("<f", 0.25)


def _with_header(header, payload=b""):
    h = json.dumps(header).encode()
    return b"FMAP\x01" + struct.pack("<I", len(h)) + h + payload


@pytest.mark.parametrize("header", [
    {"dtype": "f32", "shape": [-1, 2, 1], "layout": "row-major"},
    {"dtype": "f64", "shape": [1, 1, 1], "layout": "row-major"},
    {"dtype": "f32", "shape": [1, 1], "layout": "row-major"},
    {"dtype": "f32", "shape": [1, 1, 1], "layout": "col-major"},
])
def test_bad_headers(header):
    with pytest.raises(FormatError):
        decode_fmap(_with_header(header, b"\0" * 8))


def test_bad_magic_and_truncation():
    with pytest.raises(FormatError):
        decode_fmap(b"NOPE" + encode_fmap(np.zeros((1, 1, 1)))[4:])
    with pytest.raises(FormatError):
        decode_fmap(encode_fmap(np.zeros((2, 2, 1)))[:-1])


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    q = rng.integers(0, 256, size=(5, 7, 3)) / 255
    write_ppm(tmp_path / "x.ppm", q)
    assert (tmp_path / "x.ppm").read_bytes().startswith(b"P6")
    np.testing.assert_allclose(read_ppm(tmp_path / "x.ppm").data, q, atol=1e-12)
    write_ppm(tmp_path / "g.pgm", q[..., :1])
    assert (tmp_path / "g.pgm").read_bytes().startswith(b"P5")


def test_ppm_with_comment(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([255, 0, 51]))
    np.testing.assert_allclose(read_ppm(p).data[0, 0], [1, 0, 0.2])
