"""Grayscale image I/O and the fixed preprocessing chain.

Images are plain 2-D numpy arrays of uint8 intensities, row-major, one
channel. Binary masks use the same layout with values in {0, 1} where 1
marks ink (dark foreground on light paper).

The preprocessing chain is: center the scan on a white square canvas,
then shrink it by a fixed integer factor with a box mean. At the default
canvas 384 and factor 6 every input comes out as a 64x64 image.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, FormatError

_WHITESPACE = b" \t\r\n\x0b\x0c"


def as_gray(img) -> np.ndarray:
    """Validate and normalize a grayscale image to a 2-D uint8 array."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got ndim {arr.ndim}")
    if arr.size == 0:
        raise DimensionError("empty image")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer):
            raise DimensionError(f"intensities must be integers, got {arr.dtype}")
        if arr.min() < 0 or arr.max() > 255:
            raise DimensionError("intensities out of range [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def as_binary(img) -> np.ndarray:
    """Validate and normalize an ink mask to a 2-D uint8 array in {0, 1}."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D mask, got ndim {arr.ndim}")
    if arr.size == 0:
        raise DimensionError("empty mask")
    if arr.dtype == np.bool_:
        return arr.astype(np.uint8)
    if not np.issubdtype(arr.dtype, np.integer):
        raise DimensionError(f"mask values must be integers, got {arr.dtype}")
    if arr.min() < 0 or arr.max() > 1:
        raise DimensionError("mask values must be 0 or 1")
    return arr.astype(np.uint8)


def _next_token(data: bytes, pos: int) -> tuple[bytes, int, int]:
    # Skips whitespace and '#' comments; returns (token, token_start, next_pos).
    n = len(data)
    while pos < n:
        c = data[pos]
        if c in _WHITESPACE:
            pos += 1
        elif c == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise FormatError("unexpected end of header", offset=pos)
    start = pos
    while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
        pos += 1
    return data[start:pos], start, pos


def read_pgm(data: bytes) -> np.ndarray:
    """Parse a PGM byte stream (binary P5 or ASCII P2, maxval <= 255)."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise FormatError("expected a byte stream")
    data = bytes(data)
    magic, magic_at, pos = _next_token(data, 0)
    if magic not in (b"P5", b"P2"):
        raise FormatError(f"unsupported magic {magic!r}", offset=magic_at)

    fields = {}
    for name in ("width", "height", "maxval"):
        tok, tok_at, pos = _next_token(data, pos)
        try:
            value = int(tok)
        except ValueError:
            raise FormatError(f"non-numeric {name} {tok!r}", offset=tok_at) from None
        if value <= 0:
            raise FormatError(f"{name} must be positive, got {value}", offset=tok_at)
        if name == "maxval" and value > 255:
            raise FormatError(f"maxval {value} exceeds 255", offset=tok_at)
        fields[name] = value
    width, height, maxval = fields["width"], fields["height"], fields["maxval"]
    count = width * height

    if magic == b"P5":
        if pos >= len(data) or data[pos] not in _WHITESPACE:
            raise FormatError("missing whitespace after maxval", offset=pos)
        pos += 1
        payload = data[pos : pos + count]
        if len(payload) < count:
            raise FormatError(
                f"payload truncated: expected {count} bytes, got {len(payload)}",
                offset=len(data),
            )
        pixels = np.frombuffer(payload, dtype=np.uint8).copy()
        bad = np.nonzero(pixels > maxval)[0]
        if bad.size:
            raise FormatError(
                f"sample {int(pixels[bad[0]])} exceeds maxval {maxval}",
                offset=pos + int(bad[0]),
            )
    else:
        values = np.empty(count, dtype=np.uint8)
        for k in range(count):
            tok, tok_at, pos = _next_token(data, pos)
            try:
                v = int(tok)
            except ValueError:
                raise FormatError(f"non-numeric sample {tok!r}", offset=tok_at) from None
            if v < 0 or v > maxval:
                raise FormatError(
                    f"sample {v} out of range [0, {maxval}]", offset=tok_at
                )
            values[k] = v
        pixels = values
    return pixels.reshape(height, width)


def write_pgm(img) -> bytes:
    """Encode a grayscale image as a binary P5 stream (maxval 255)."""
    arr = as_gray(img)
    h, w = arr.shape
    return b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes()


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_pgm(fh.read())


def save_pgm(path, img) -> None:
    with open(path, "wb") as fh:
        fh.write(write_pgm(img))


def preprocess(img, canvas: int = 384, factor: int = 6) -> np.ndarray:
    """Center the image on a white canvas and shrink it by a box mean.

    The input is placed at the canvas center; an odd margin leaves the
    extra pixel on the right/bottom edge. Each factor x factor block is
    reduced to its mean, rounded half up. Output side = canvas // factor.
    """
    arr = as_gray(img)
    if canvas <= 0 or factor <= 0 or canvas % factor != 0:
        raise DimensionError(
            f"canvas {canvas} must be a positive multiple of factor {factor}"
        )
    h, w = arr.shape
    if h > canvas or w > canvas:
        raise DimensionError(
            f"input {w}x{h} exceeds the {canvas}x{canvas} canvas; rescale upstream"
        )
    top = (canvas - h) // 2
    left = (canvas - w) // 2
    page = np.full((canvas, canvas), 255, dtype=np.uint8)
    page[top : top + h, left : left + w] = arr

    side = canvas // factor
    q = factor * factor
    sums = page.reshape(side, factor, side, factor).sum(axis=(1, 3), dtype=np.int64)
    means = (2 * sums + q) // (2 * q)  # integer mean rounded half up
    return means.astype(np.uint8)


def otsu_threshold(img) -> int | None:
    """Threshold maximizing between-class variance, or None for a constant image.

    The argmax is evaluated in exact integer arithmetic so that ties break
    deterministically toward the smallest threshold.
    """
    arr = as_gray(img)
    hist = np.bincount(arr.reshape(-1), minlength=256)
    total = int(arr.size)
    weighted_total = int((hist * np.arange(256, dtype=np.int64)).sum())

    best_t = None
    best_num = -1
    best_den = 1
    w0 = 0
    m0 = 0
    for t in range(256):
        w0 += int(hist[t])
        m0 += t * int(hist[t])
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        # between-class variance ~ (m0*total - weighted_total*w0)^2 / (w0*w1)
        num = (m0 * total - weighted_total * w0) ** 2
        den = w0 * w1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def binarize_otsu(img) -> np.ndarray:
    """Binarize with the Otsu threshold: ink = intensity <= t.

    A constant image has no separating threshold and yields an all-zero
    mask (no ink) rather than an error.
    """
    arr = as_gray(img)
    t = otsu_threshold(arr)
    if t is None:
        return np.zeros_like(arr)
    return (arr <= t).astype(np.uint8)


def binarize_fixed(img, threshold: int) -> np.ndarray:
    """Binarize with an explicit threshold: ink = intensity <= threshold."""
    arr = as_gray(img)
    if not 0 <= threshold <= 255:
        raise DimensionError(f"threshold {threshold} out of range [0, 255]")
    return (arr <= threshold).astype(np.uint8)
