"""Gradient / structural / concavity binary features over a 4x4 cell grid.

A 64x64 ink mask is divided into sixteen 16x16 cells. Three families of
per-cell counts are thresholded into bits:

  gradient    12 bits/cell  Sobel angle histogram over 12 bins of pi/6
  structural  12 bits/cell  neighborhood rules for lines and corners
  concavity    8 bits/cell  density, stroke runs, and star ray casting

Concatenated the families give a 512-bit vector (192 + 192 + 128) with
family offsets 0, 192, and 384. Within each family cells are row-major
and a cell's bits are contiguous. Concavity bit order inside a cell is
(density, horizontal stroke, vertical stroke, up, down, left, right,
hole). Each bit is set iff its count strictly exceeds the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .imaging import as_binary

GRID = 4
CELL = 16
SIDE = GRID * CELL  # 64
N_GRADIENT_BITS = 192
N_STRUCTURAL_BITS = 192
N_CONCAVITY_BITS = 128
N_BITS = N_GRADIENT_BITS + N_STRUCTURAL_BITS + N_CONCAVITY_BITS

THETA_GRADIENT = 4
THETA_STRUCTURAL = 4
THETA_DENSITY = 38
THETA_STROKE = 8
THETA_CONCAVITY = 4


@dataclass
class GradientMap:
    """Per-pixel Sobel gradient angle and magnitude.

    Angles live in [0, 2*pi). Where magnitude == 0 the angle carries no
    information and must be excluded from histograms.
    """

    angle: np.ndarray
    magnitude: np.ndarray


def _require_side(mask: np.ndarray) -> None:
    if mask.shape != (SIDE, SIDE):
        raise DimensionError(
            f"expected a {SIDE}x{SIDE} mask, got {mask.shape[1]}x{mask.shape[0]}"
        )


def _cell_counts(fired: np.ndarray) -> np.ndarray:
    # (64, 64) indicator -> (4, 4) per-cell counts.
    return fired.reshape(GRID, CELL, GRID, CELL).sum(axis=(1, 3), dtype=np.int64)


def sobel_gradient_map(img) -> GradientMap:
    """3x3 Sobel cross-correlation on the ink mask with a replicated border.

    Gx responds to left-to-right increase, Gy to top-to-bottom increase
    (+y points down). Angle = atan2(Gy, Gx) shifted into [0, 2*pi).
    """
    mask = as_binary(img)
    h, w = mask.shape
    if h < 3 or w < 3:
        raise DimensionError(f"Sobel needs at least 3x3, got {w}x{h}")
    p = np.pad(mask, 1, mode="edge").astype(np.int32)
    right = p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]
    left = p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2]
    bottom = p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]
    top = p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:]
    gx = right - left
    gy = bottom - top
    magnitude = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    return GradientMap(angle=angle, magnitude=magnitude)


def gradient_features(img, theta_g: int = THETA_GRADIENT) -> np.ndarray:
    """12 angle-histogram bits per cell; bit = count > theta_g."""
    mask = as_binary(img)
    _require_side(mask)
    gm = sobel_gradient_map(mask)
    valid = gm.magnitude > 0
    bins = np.floor(gm.angle / (np.pi / 6.0)).astype(np.int64)
    np.clip(bins, 0, 11, out=bins)
    counts = np.zeros((GRID, GRID, 12), dtype=np.int64)
    for b in range(12):
        counts[:, :, b] = _cell_counts(valid & (bins == b))
    return (counts > theta_g).reshape(N_GRADIENT_BITS).astype(np.uint8)


def _neighborhoods(mask: np.ndarray):
    p = np.pad(mask, 1, mode="edge").astype(bool)
    n = p[:-2, 1:-1]
    s = p[2:, 1:-1]
    e = p[1:-1, 2:]
    w = p[1:-1, :-2]
    ne = p[:-2, 2:]
    nw = p[:-2, :-2]
    se = p[2:, 2:]
    sw = p[2:, :-2]
    return n, s, e, w, ne, nw, se, sw


def structural_features(img, theta_s: int = THETA_STRUCTURAL) -> np.ndarray:
    """12 neighborhood-rule bits per cell; rules fire at ink pixels only.

    R1-R4 detect lines through the pixel (horizontal, vertical, rising
    diagonal, falling diagonal). R5-R8 detect open corners: two orthogonal
    arms ink, the opposite two background. R9-R12 are the filled corners:
    the same arms plus the diagonal between them ink.
    """
    mask = as_binary(img)
    _require_side(mask)
    ink = mask.astype(bool)
    n, s, e, w, ne, nw, se, sw = _neighborhoods(mask)
    r5 = s & e & ~n & ~w
    r6 = s & w & ~n & ~e
    r7 = n & e & ~s & ~w
    r8 = n & w & ~s & ~e
    rules = (
        w & e,
        n & s,
        ne & sw,
        nw & se,
        r5,
        r6,
        r7,
        r8,
        r5 & se,
        r6 & sw,
        r7 & ne,
        r8 & nw,
    )
    counts = np.zeros((GRID, GRID, 12), dtype=np.int64)
    for r, fired in enumerate(rules):
        counts[:, :, r] = _cell_counts(fired & ink)
    return (counts > theta_s).reshape(N_STRUCTURAL_BITS).astype(np.uint8)


def _ray_hits(mask: np.ndarray):
    # hit_<dir>[y, x] == True iff a ray cast from (y, x) in that direction
    # crosses at least one ink pixel before leaving the image.
    ink = mask.astype(bool)
    hit_n = np.zeros_like(ink)
    hit_s = np.zeros_like(ink)
    hit_w = np.zeros_like(ink)
    hit_e = np.zeros_like(ink)
    acc = np.maximum.accumulate
    hit_n[1:, :] = acc(ink, axis=0)[:-1, :]
    hit_s[:-1, :] = acc(ink[::-1, :], axis=0)[::-1, :][1:, :]
    hit_w[:, 1:] = acc(ink, axis=1)[:, :-1]
    hit_e[:, :-1] = acc(ink[:, ::-1], axis=1)[:, ::-1][:, 1:]
    return hit_n, hit_s, hit_w, hit_e


def _max_runs(block: np.ndarray) -> int:
    # Longest run of ones along the rows of a (k, m) binary block.
    best = 0
    run = np.zeros(block.shape[0], dtype=np.int64)
    for j in range(block.shape[1]):
        run = (run + 1) * block[:, j]
        m = int(run.max())
        if m > best:
            best = m
    return best


def concavity_features(
    img,
    theta_d: int = THETA_DENSITY,
    theta_ls: int = THETA_STROKE,
    theta_c: int = THETA_CONCAVITY,
) -> np.ndarray:
    """8 bits per cell: density, two stroke runs, four concavities, hole.

    Star bits cast rays from every background pixel along the four axes
    until ink or the image border. A concavity opens toward the direction
    whose ray exits; a hole's four rays all hit ink. Stroke runs are
    measured inside the cell.
    """
    mask = as_binary(img)
    _require_side(mask)
    ink = mask.astype(bool)
    bg = ~ink

    density = _cell_counts(ink)

    hit_n, hit_s, hit_w, hit_e = _ray_hits(mask)
    up = bg & hit_e & hit_w & hit_s & ~hit_n
    down = bg & hit_e & hit_w & hit_n & ~hit_s
    left = bg & hit_n & hit_s & hit_e & ~hit_w
    right = bg & hit_n & hit_s & hit_w & ~hit_e
    hole = bg & hit_n & hit_s & hit_w & hit_e
    star = [_cell_counts(cat) for cat in (up, down, left, right, hole)]

    bits = np.zeros((GRID, GRID, 8), dtype=np.uint8)
    bits[:, :, 0] = density > theta_d
    for cy in range(GRID):
        for cx in range(GRID):
            block = mask[cy * CELL : (cy + 1) * CELL, cx * CELL : (cx + 1) * CELL]
            bits[cy, cx, 1] = _max_runs(block) > theta_ls
            bits[cy, cx, 2] = _max_runs(block.T) > theta_ls
    for k in range(5):
        bits[:, :, 3 + k] = star[k] > theta_c
    return bits.reshape(N_CONCAVITY_BITS)


def extract_gsc(
    img,
    theta_g: int = THETA_GRADIENT,
    theta_s: int = THETA_STRUCTURAL,
    theta_d: int = THETA_DENSITY,
    theta_ls: int = THETA_STROKE,
    theta_c: int = THETA_CONCAVITY,
) -> np.ndarray:
    """Concatenated 512-bit feature vector (gradient, structural, concavity)."""
    mask = as_binary(img)
    _require_side(mask)
    return np.concatenate(
        [
            gradient_features(mask, theta_g),
            structural_features(mask, theta_s),
            concavity_features(mask, theta_d, theta_ls, theta_c),
        ]
    )


def gsc_l1_diff(a, b) -> np.ndarray:
    """Element-wise |a - b| of two 512-bit vectors (XOR on binary inputs)."""
    va = np.asarray(a)
    vb = np.asarray(b)
    if va.shape != (N_BITS,) or vb.shape != (N_BITS,):
        raise DimensionError(
            f"expected two vectors of length {N_BITS}, got {va.shape} and {vb.shape}"
        )
    return np.abs(va.astype(np.int16) - vb.astype(np.int16)).astype(np.uint8)


def write_feature_cache(fh, entries) -> None:
    """Write rows `path,b0,...,b511` for (path, vector) pairs."""
    import csv

    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["path"] + [f"b{i}" for i in range(N_BITS)])
    for path, vec in entries:
        v = np.asarray(vec)
        if v.shape != (N_BITS,):
            raise DimensionError(f"cache vector for {path} has shape {v.shape}")
        writer.writerow([path] + [str(int(b)) for b in v])


def read_feature_cache(fh) -> dict[str, np.ndarray]:
    """Read a `path,b0,...,b511` cache into {path: vector}."""
    import csv

    from .errors import FormatError

    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or len(header) != N_BITS + 1 or header[0] != "path":
        raise FormatError("bad feature cache header")
    out: dict[str, np.ndarray] = {}
    for row in reader:
        if not row:
            continue
        if len(row) != N_BITS + 1:
            raise FormatError(f"cache row for {row[0]!r} has {len(row) - 1} bits")
        out[row[0]] = np.array([int(x) for x in row[1:]], dtype=np.uint8)
    return out
