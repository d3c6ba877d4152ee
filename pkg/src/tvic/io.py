"""Grayscale image I/O: binary PGM (P5, 8/16 bit) and PNG.

Intensities are mapped linearly to [0, 1] on load and clamped to [0, 1] on save.
"""
from __future__ import annotations

import os

import numpy as np


class ImageIOError(OSError):
    pass


def _pgm_tokens(data):
    # header tokens with '#' comments, then the offset of the raster
    tokens = []
    i = 2
    n = len(data)
    while len(tokens) < 3:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise ImageIOError("truncated PGM header")
        tokens.append(data[i:j])
        i = j
    # exactly one whitespace byte separates header and raster
    return tokens, i + 1


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise ImageIOError(f"{path}: not a binary PGM (P5) file")
    try:
        tokens, off = _pgm_tokens(data)
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageIOError(f"{path}: bad PGM header") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise ImageIOError(f"{path}: bad PGM dimensions or maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    raster = data[off:off + count * dtype.itemsize]
    if len(raster) != count * dtype.itemsize:
        raise ImageIOError(f"{path}: truncated PGM raster")
    img = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return img.astype(float) / maxval


def write_pgm(path, img, bits=8):
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    raster = q.astype(">u2" if bits == 16 else "u1").tobytes()
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(raster)


def read_png(path):
    from PIL import Image

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode.startswith("I"):
                # Pillow opens 16-bit grayscale PNG as an integer mode
                return np.asarray(im, dtype=float) / 65535.0
            arr = np.asarray(im.convert("L"), dtype=float)
            return arr / 255.0
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"{path}: {exc}") from exc


def write_png(path, img, bits=8):
    from PIL import Image

    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    c = np.clip(img, 0.0, 1.0)
    if bits == 8:
        im = Image.fromarray(np.rint(c * 255).astype(np.uint8), mode="L")
    else:
        im = Image.fromarray(np.rint(c * 65535).astype(np.uint16))
    # fixed encoder settings keep output byte-reproducible
    im.save(path, format="PNG", optimize=False, compress_level=6)


def read_image(path):
    """Load a grayscale PGM or PNG as floats in [0, 1]."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ImageIOError(f"{path}: no such file")
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic[:2] == b"P5":
        return read_pgm(path)
    if magic.startswith(b"\x89PNG"):
        return read_png(path)
    raise ImageIOError(f"{path}: unsupported image format (need PGM P5 or PNG)")


def write_image(path, img, bits=8):
    """Save by extension (``.pgm`` or ``.png``); values are clamped to [0, 1]."""
    path = os.fspath(path)
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".pgm":
            write_pgm(path, img, bits)
        elif ext == ".png":
            write_png(path, img, bits)
        else:
            raise ImageIOError(f"{path}: unknown image extension {ext!r}")
    except OSError as exc:
        if isinstance(exc, ImageIOError):
            raise
        raise ImageIOError(f"{path}: {exc}") from exc
