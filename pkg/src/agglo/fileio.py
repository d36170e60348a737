"""FMAP binary feature files and netpbm (PPM/PGM) images.

FMAP layout::

    b"FMAP" | 0x01 | uint32 LE header length | UTF-8 JSON header | float32 LE payload

with header ``{"dtype": "f32", "shape": [H, W, C], "layout": "row-major"}``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import FormatError
from .fmap import ArrayLike, FeatureMap, as_array

MAGIC = b"FMAP"
VERSION = 1
MAX_ELEMENTS = 1 << 31

PathLike = Union[str, Path]


def encode_fmap(fmap: ArrayLike) -> bytes:
    x = as_array(fmap)
    header = json.dumps(
        {"dtype": "f32", "shape": list(x.shape), "layout": "row-major"},
        separators=(",", ":"),
    ).encode("utf-8")
    payload = np.ascontiguousarray(x, dtype="<f4").tobytes()
    return MAGIC + bytes([VERSION]) + struct.pack("<I", len(header)) + header + payload


def decode_fmap(buf: bytes) -> FeatureMap:
    if len(buf) < 9 or buf[:4] != MAGIC:
        raise FormatError("not an FMAP file (bad magic)")
    if buf[4] != VERSION:
        raise FormatError(f"unsupported FMAP version {buf[4]}")
    (hlen,) = struct.unpack("<I", buf[5:9])
    if 9 + hlen > len(buf):
        raise FormatError("truncated FMAP header")
    try:
        header = json.loads(buf[9 : 9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad FMAP header: {exc}") from None
    if not isinstance(header, dict):
        raise FormatError("FMAP header must be a JSON object")
    if header.get("dtype") != "f32":
        raise FormatError(f"unsupported dtype {header.get('dtype')!r}")
    if header.get("layout", "row-major") != "row-major":
        raise FormatError(f"unsupported layout {header.get('layout')!r}")
    shape = header.get("shape")
    if (
        not isinstance(shape, list)
        or len(shape) != 3
        or not all(isinstance(d, int) and not isinstance(d, bool) for d in shape)
    ):
        raise FormatError(f"shape must be three integers, got {shape!r}")
    if any(d < 1 for d in shape):
        raise FormatError(f"shape entries must be positive, got {shape}")
    count = shape[0] * shape[1] * shape[2]
    if count > MAX_ELEMENTS:
        raise FormatError(f"shape {shape} overflows the element limit")
    payload = buf[9 + hlen :]
    if len(payload) != 4 * count:
        raise FormatError(f"payload has {len(payload)} bytes, expected {4 * count}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
    return FeatureMap(data)


def write_fmap(path: PathLike, fmap: ArrayLike) -> None:
    Path(path).write_bytes(encode_fmap(fmap))


def read_fmap(path: PathLike) -> FeatureMap:
    return decode_fmap(Path(path).read_bytes())


# -- netpbm -----------------------------------------------------------------

def _read_token(f: BinaryIO) -> bytes:
    token = b""
    while True:
        ch = f.read(1)
        if not ch:
            if token:
                return token
            raise FormatError("truncated netpbm header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def quantize(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path: PathLike, image: ArrayLike) -> None:
    """Write values in [0, 1] as 8-bit binary PPM (3 channels) or PGM (1 channel)."""
    x = as_array(image)
    h, w, c = x.shape
    if c == 3:
        magic = b"P6"
    elif c == 1:
        magic = b"P5"
    else:
        raise FormatError(f"PPM/PGM needs 1 or 3 channels, got {c}")
    with open(path, "wb") as f:
        f.write(b"%s\n%d %d\n255\n" % (magic, w, h))
        f.write(quantize(x).tobytes())


def read_ppm(path: PathLike) -> FeatureMap:
    """Read a binary PPM/PGM; values are scaled to [0, 1]."""
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic not in (b"P6", b"P5"):
            raise FormatError(f"unsupported netpbm magic {magic!r}")
        try:
            w, h, maxval = (int(_read_token(f)) for _ in range(3))
        except ValueError:
            raise FormatError("non-integer netpbm header field") from None
        if w < 1 or h < 1:
            raise FormatError(f"bad image size {w}x{h}")
        if not 0 < maxval < 256:
            raise FormatError(f"only 8-bit images are supported (maxval={maxval})")
        c = 3 if magic == b"P6" else 1
        raw = f.read()
    if len(raw) < w * h * c:
        raise FormatError("truncated netpbm payload")
    data = np.frombuffer(raw[: w * h * c], dtype=np.uint8).reshape(h, w, c)
    return FeatureMap(data.astype(np.float64) / maxval)
