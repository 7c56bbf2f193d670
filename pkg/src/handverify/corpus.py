"""Synthetic multi-writer corpus: rendering, manifests, splits, pairs.

Each writer is a deterministic style (slant, stroke width, scale, letter
spacing, curvature jitter) derived from the corpus seed and the writer
id. A sample renders the word "and" from fixed letter skeletons: control
points are jittered per sample, scaled, sheared by the slant, stroked
with a round pen, and rasterized with 4x supersampling onto a white
canvas. Identical (style, sample_seed) inputs produce identical pixels.

Partitioning supports three schemes over a manifest: writer-disjoint
(unseen), sample-level (shuffled), and per-writer (seen). Pair sets are
label-balanced: half same-writer pairs of distinct samples, half
different-writer pairs, never pairing a sample with itself.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError
from .imaging import binarize_otsu, save_pgm

CANVAS_W = 320
CANVAS_H = 192
_SUPERSAMPLE = 4
_BASE_SIZE = 80.0  # letter em height in px before style scaling
_LETTER_W = 0.68  # letter box width as a fraction of the em height


@dataclass(frozen=True)
class WriterStyle:
    writer_id: int
    slant: float  # degrees in [-25, 25], positive leans right
    stroke_width: float  # pen diameter in px, [1, 4]
    scale: float  # em scaling, [0.7, 1.2]
    spacing: float  # gap between letter boxes in px
    curvature_jitter: float  # per-sample control point noise (em fraction)
    seed: int  # corpus seed the style was derived from


@dataclass(frozen=True)
class ManifestRow:
    path: str
    writer_id: int
    sample_id: int


@dataclass(frozen=True)
class PairRow:
    path_a: str
    path_b: str
    label: int  # 1 = same writer


@dataclass
class Partition:
    scheme: str
    train: list[ManifestRow]
    test: list[ManifestRow]
    writer_overlap: int


# Letter skeletons for "a", "n", "d" in a unit box, x right, y up.
# Strokes are control polylines; circles are 12-gons.


def _circle(cx: float, cy: float, r: float, points: int = 12) -> np.ndarray:
    t = np.linspace(0.0, 2.0 * np.pi, points + 1)
    return np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1)


_SKELETONS: dict[str, list[np.ndarray]] = {
    "a": [
        _circle(0.30, 0.27, 0.22),
        np.array([[0.52, 0.50], [0.52, 0.12], [0.58, 0.03]]),
    ],
    "n": [
        np.array([[0.10, 0.52], [0.10, 0.03]]),
        np.array(
            [
                [0.10, 0.30],
                [0.12, 0.44],
                [0.24, 0.53],
                [0.38, 0.47],
                [0.44, 0.32],
                [0.44, 0.03],
            ]
        ),
    ],
    "d": [
        _circle(0.28, 0.27, 0.22),
        np.array([[0.50, 0.95], [0.50, 0.03]]),
    ],
}


def writer_style(corpus_seed: int, writer_id: int) -> WriterStyle:
    """The style of a writer, fully determined by (corpus seed, writer id)."""
    rng = np.random.default_rng([corpus_seed, writer_id])
    return WriterStyle(
        writer_id=writer_id,
        slant=float(rng.uniform(-25.0, 25.0)),
        stroke_width=float(rng.uniform(1.0, 4.0)),
        scale=float(rng.uniform(0.7, 1.2)),
        spacing=float(rng.uniform(3.0, 9.0)),
        curvature_jitter=float(rng.uniform(0.008, 0.024)),
        seed=corpus_seed,
    )


def _stroke_segments(
    style: WriterStyle, rng: np.random.Generator
) -> tuple[list[np.ndarray], float]:
    """Unslanted word strokes in page coordinates (x right, y up) plus the
    shear this sample should end up with."""
    em = _BASE_SIZE * style.scale
    # small per-sample wobble: keeps intra-writer variation visible without
    # crossing the +-2 degree slant consistency budget
    target = math.tan(math.radians(style.slant + rng.uniform(-0.5, 0.5)))
    wobble_scale = 1.0 + rng.uniform(-0.03, 0.03)

    strokes = []
    cursor = 0.0
    for letter in "and":
        baseline = rng.uniform(-1.5, 1.5)
        for control in _SKELETONS[letter]:
            pts = control + rng.normal(0.0, style.curvature_jitter, control.shape)
            x = cursor + pts[:, 0] * _LETTER_W * em * wobble_scale
            y = pts[:, 1] * em * wobble_scale + baseline
            strokes.append(np.stack([x, y], axis=1))
        cursor += _LETTER_W * em * wobble_scale + style.spacing
    return strokes, target


def _ink_shear(gray: np.ndarray) -> float:
    """x-on-y regression slope of ink mass, page coordinates (y up)."""
    ink = (255.0 - gray.astype(np.float64)) / 255.0
    rows, cols = np.nonzero(ink)
    w = ink[rows, cols]
    x = cols.astype(np.float64)
    y = -rows.astype(np.float64)
    total = w.sum()
    mx = (w * x).sum() / total
    my = (w * y).sum() / total
    mu11 = (w * (x - mx) * (y - my)).sum() / total
    mu02 = (w * (y - my) ** 2).sum() / total
    return mu11 / mu02


def _rasterize(strokes: list[np.ndarray], stroke_width: float) -> np.ndarray:
    all_pts = np.concatenate(strokes, axis=0)
    center = 0.5 * (all_pts.min(axis=0) + all_pts.max(axis=0))
    shift_x = CANVAS_W / 2.0 - center[0]
    flip_y = CANVAS_H / 2.0 + center[1]  # raster y = flip_y - y_up

    r = _SUPERSAMPLE
    radius = 0.5 * stroke_width * r
    ink = np.zeros((CANVAS_H * r, CANVAS_W * r), dtype=bool)
    h_ss, w_ss = ink.shape
    for stroke in strokes:
        # to raster coordinates (y down), then supersampled units
        xs = (stroke[:, 0] + shift_x) * r
        ys = (flip_y - stroke[:, 1]) * r
        for i in range(len(stroke) - 1):
            ax, ay, bx, by = xs[i], ys[i], xs[i + 1], ys[i + 1]
            lo_x = max(0, int(math.floor(min(ax, bx) - radius - 1)))
            hi_x = min(w_ss - 1, int(math.ceil(max(ax, bx) + radius + 1)))
            lo_y = max(0, int(math.floor(min(ay, by) - radius - 1)))
            hi_y = min(h_ss - 1, int(math.ceil(max(ay, by) + radius + 1)))
            if lo_x > hi_x or lo_y > hi_y:
                continue
            gy, gx = np.mgrid[lo_y : hi_y + 1, lo_x : hi_x + 1]
            vx, vy = bx - ax, by - ay
            seg_len_sq = vx * vx + vy * vy
            if seg_len_sq == 0.0:
                dist_sq = (gx - ax) ** 2 + (gy - ay) ** 2
            else:
                t = ((gx - ax) * vx + (gy - ay) * vy) / seg_len_sq
                np.clip(t, 0.0, 1.0, out=t)
                dist_sq = (gx - (ax + t * vx)) ** 2 + (gy - (ay + t * vy)) ** 2
            ink[lo_y : hi_y + 1, lo_x : hi_x + 1] |= dist_sq <= radius * radius

    coverage = ink.reshape(CANVAS_H, r, CANVAS_W, r).mean(axis=(1, 3))
    gray = np.rint(255.0 * (1.0 - coverage)).astype(np.uint8)
    return gray


def render_sample(style: WriterStyle, sample_seed: int) -> np.ndarray:
    """Render one word image: white background, anti-aliased dark ink.

    The measured principal-axis slant of the ink tracks style.slant: the
    word shape leans on its own (tall ascender at one end), and shearing
    also redistributes ink mass between steep and flat strokes, so the
    applied shear is solved for by fixed-point iteration against the
    rendered image rather than set to tan(slant) directly.
    """
    rng = np.random.default_rng([style.seed, style.writer_id, sample_seed])
    strokes, target = _stroke_segments(style, rng)
    applied = 0.0
    img = _rasterize(strokes, style.stroke_width)
    for _ in range(4):
        err = target - _ink_shear(img)
        if abs(err) < 0.002:
            break
        applied += err
        sheared = [s.copy() for s in strokes]
        for stroke in sheared:
            stroke[:, 0] += applied * stroke[:, 1]
        img = _rasterize(sheared, style.stroke_width)
    return img


def generate_corpus(
    num_writers: int, samples_per_writer: int, seed: int, out_dir
) -> list[ManifestRow]:
    """Render a corpus and write PGMs plus manifest.csv into out_dir."""
    if num_writers < 2:
        raise DataError(f"need at least 2 writers, got {num_writers}")
    if samples_per_writer < 1:
        raise DataError(f"need at least 1 sample per writer, got {samples_per_writer}")
    os.makedirs(out_dir, exist_ok=True)
    rows: list[ManifestRow] = []
    for w in range(num_writers):
        style = writer_style(seed, w)
        for s in range(samples_per_writer):
            img = render_sample(style, s)
            name = f"w{w:03d}_s{s:02d}.pgm"
            save_pgm(os.path.join(out_dir, name), img)
            rows.append(ManifestRow(path=name, writer_id=w, sample_id=s))
    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as fh:
        write_manifest(fh, rows)
    return rows


def write_manifest(fh, rows: list[ManifestRow]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["path", "writer_id", "sample_id"])
    for row in rows:
        writer.writerow([row.path, row.writer_id, row.sample_id])


def read_manifest(fh) -> list[ManifestRow]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header != ["path", "writer_id", "sample_id"]:
        raise FormatError(f"bad manifest header {header!r}")
    rows = []
    for rec in reader:
        if not rec:
            continue
        if len(rec) != 3:
            raise FormatError(f"bad manifest row {rec!r}")
        rows.append(ManifestRow(path=rec[0], writer_id=int(rec[1]), sample_id=int(rec[2])))
    return rows


def write_pairs(fh, rows: list[PairRow]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["path_a", "path_b", "label"])
    for row in rows:
        writer.writerow([row.path_a, row.path_b, row.label])


def read_pairs(fh) -> list[PairRow]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header != ["path_a", "path_b", "label"]:
        raise FormatError(f"bad pair manifest header {header!r}")
    rows = []
    for rec in reader:
        if not rec:
            continue
        if len(rec) != 3 or rec[2] not in ("0", "1"):
            raise FormatError(f"bad pair row {rec!r}")
        rows.append(PairRow(path_a=rec[0], path_b=rec[1], label=int(rec[2])))
    return rows


def filter_samples(
    rows: list[ManifestRow],
    root,
    min_ink: int = 50,
    max_ink: int = 30000,
) -> list[ManifestRow]:
    """Outlier rejection hook: keep samples whose ink pixel count is sane."""
    from .imaging import load_pgm

    kept = []
    for row in rows:
        img = load_pgm(os.path.join(root, row.path))
        ink = int(binarize_otsu(img).sum())
        if min_ink <= ink <= max_ink:
            kept.append(row)
    return kept


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def partition(
    rows: list[ManifestRow],
    scheme: str,
    test_fraction: float = 0.2,
    seed: int = 0,
) -> Partition:
    """Split a manifest into train/test under one of three schemes.

    unseen: writers are shuffled and the last ceil(f * W) go entirely to
    test, so train and test writers are disjoint. shuffled: samples are
    shuffled and the last fraction goes to test; writer overlap may be
    any size. seen: every writer contributes max(1, round(f * |S_j|)) of
    its shuffled samples to test, so each writer appears on both sides.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test fraction must be in (0, 1), got {test_fraction}")
    n = len(rows)
    writers = sorted({r.writer_id for r in rows})

    if scheme == "unseen":
        if len(writers) < 2:
            raise DataError("unseen split needs at least 2 writers")
        rng = np.random.default_rng([seed, 1])
        order = rng.permutation(np.array(writers))
        n_test = math.ceil(test_fraction * len(writers))
        if n_test >= len(writers):
            raise DataError("unseen split leaves no training writers")
        test_writers = set(int(w) for w in order[len(writers) - n_test :])
        train = [r for r in rows if r.writer_id not in test_writers]
        test = [r for r in rows if r.writer_id in test_writers]
    elif scheme == "shuffled":
        if n < 2:
            raise DataError("shuffled split needs at least 2 samples")
        rng = np.random.default_rng([seed, 2])
        order = rng.permutation(n)
        n_test = _round_half_up(test_fraction * n)
        n_test = min(max(n_test, 1), n - 1)
        test_idx = set(int(i) for i in order[n - n_test :])
        train = [r for i, r in enumerate(rows) if i not in test_idx]
        test = [r for i, r in enumerate(rows) if i in test_idx]
    elif scheme == "seen":
        rng = np.random.default_rng([seed, 3])
        test_idx: set[int] = set()
        for w in writers:
            members = [i for i, r in enumerate(rows) if r.writer_id == w]
            if len(members) < 2:
                raise DataError(
                    f"seen split needs >= 2 samples per writer; writer {w} has "
                    f"{len(members)}"
                )
            order = rng.permutation(len(members))
            n_test = max(1, _round_half_up(test_fraction * len(members)))
            n_test = min(n_test, len(members) - 1)
            test_idx.update(members[int(k)] for k in order[len(members) - n_test :])
        train = [r for i, r in enumerate(rows) if i not in test_idx]
        test = [r for i, r in enumerate(rows) if i in test_idx]
    else:
        raise DataError(f"unknown partition scheme {scheme!r}")

    overlap = len({r.writer_id for r in train} & {r.writer_id for r in test})
    return Partition(scheme=scheme, train=train, test=test, writer_overlap=overlap)


def make_pairs(rows: list[ManifestRow], count: int, seed: int) -> list[PairRow]:
    """Label-balanced pair sampling without duplicates or self-pairs.

    Draws ceil(count/2) same-writer pairs of distinct samples and
    floor(count/2) different-writer pairs, then shuffles the rows.
    """
    if count < 1:
        raise DataError(f"pair count must be >= 1, got {count}")
    n = len(rows)
    by_writer: dict[int, list[int]] = {}
    for i, r in enumerate(rows):
        by_writer.setdefault(r.writer_id, []).append(i)
    max_sim = sum(len(m) * (len(m) - 1) // 2 for m in by_writer.values())
    total = n * (n - 1) // 2
    max_dis = total - max_sim
    max_count = 2 * min(max_sim, max_dis) + (1 if max_sim > max_dis else 0)
    n_sim = (count + 1) // 2
    n_dis = count // 2
    if n_sim > max_sim or n_dis > max_dis:
        raise DataError(
            f"requested {count} pairs but at most {max_count} balanced pairs "
            f"are available ({max_sim} same-writer, {max_dis} different-writer)"
        )

    rng = np.random.default_rng([seed, 29])
    sim_candidates = []
    for w in sorted(by_writer):
        members = by_writer[w]
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                sim_candidates.append((members[a], members[b]))
    sim_order = rng.permutation(len(sim_candidates))
    chosen_sim = [sim_candidates[int(k)] for k in sim_order[:n_sim]]

    chosen_dis: list[tuple[int, int]] = []
    used: set[tuple[int, int]] = set()
    attempts = 0
    attempt_cap = 200 * max(1, n_dis)
    while len(chosen_dis) < n_dis and attempts < attempt_cap:
        attempts += 1
        a, b = (int(x) for x in rng.integers(0, n, size=2))
        if a == b or rows[a].writer_id == rows[b].writer_id:
            continue
        key = (min(a, b), max(a, b))
        if key in used:
            continue
        used.add(key)
        chosen_dis.append((a, b))
    if len(chosen_dis) < n_dis:
        # dense request: enumerate the remaining cross-writer pairs instead
        remaining = [
            (a, b)
            for a in range(n)
            for b in range(a + 1, n)
            if rows[a].writer_id != rows[b].writer_id and (a, b) not in used
        ]
        order = rng.permutation(len(remaining))
        for k in order:
            if len(chosen_dis) >= n_dis:
                break
            chosen_dis.append(remaining[int(k)])

    out = [
        PairRow(path_a=rows[a].path, path_b=rows[b].path, label=1)
        for a, b in chosen_sim
    ] + [
        PairRow(path_a=rows[a].path, path_b=rows[b].path, label=0)
        for a, b in chosen_dis
    ]
    final = rng.permutation(len(out))
    return [out[int(k)] for k in final]
