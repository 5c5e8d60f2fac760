"""Netpbm greyscale (PGM) reading and writing.

Both the ASCII (``P2``) and binary (``P5``) variants are supported. Pixels
are mapped to ``[0, 1]`` by dividing by ``maxval`` on read; on write they are
clamped to ``[0, 1]`` and stored as ``floor(v * 255 + 0.5)`` with maxval 255.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .exceptions import ParameterError

_TOKEN = re.compile(rb"#[^\n]*\n?|\S+")


def _header_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        m = _TOKEN.search(data, pos)
        if m is None:
            raise ParameterError("truncated PGM header")
        pos = m.end()
        if not m.group().startswith(b"#"):
            tokens.append(m.group())
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = _header_tokens(data, 4)
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ParameterError(f"{path}: malformed PGM header") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ParameterError(f"{path}: invalid PGM dimensions or maxval")
    count = width * height
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        if len(data) < pos + count * dtype.itemsize:
            raise ParameterError(f"{path}: truncated pixel data")
        pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
    elif magic == b"P2":
        body = re.sub(rb"#[^\n]*", b"", data[pos:]).split()
        if len(body) < count:
            raise ParameterError(f"{path}: expected {count} pixels, found {len(body)}")
        pixels = np.array([int(v) for v in body[:count]], dtype=np.float64)
    else:
        raise ParameterError(f"{path}: unsupported PGM magic {magic!r}")
    if pixels.max(initial=0) > maxval:
        raise ParameterError(f"{path}: pixel value exceeds maxval")
    return pixels.reshape(height, width) / maxval


def to_bytes(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, image, *, binary=True) -> None:
    pixels = to_bytes(image)
    if pixels.ndim != 2:
        raise ParameterError("PGM output needs a 2-D greyscale image")
    height, width = pixels.shape
    with open(path, "wb") as fh:
        if binary:
            fh.write(b"P5\n%d %d\n255\n" % (width, height))
            fh.write(pixels.tobytes())
        else:
            fh.write(b"P2\n%d %d\n255\n" % (width, height))
            for row in pixels:
                fh.write(" ".join(str(int(v)) for v in row).encode() + b"\n")
