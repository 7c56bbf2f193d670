"""Scale-space keypoints, 128-d descriptors, and exact pair matching.

The pipeline is the classic difference-of-Gaussians one: build a blurred
pyramid, find 3x3x3 extrema in the DoG stack, reject low-contrast and
edge-like candidates, assign orientations from a gradient histogram, and
describe each keypoint with a 4x4 spatial grid of 8-bin orientation
histograms (128 values, unit L2 norm, every element capped at 0.2).

Matching is exact 2-nearest-neighbour search with a ratio test. A pair of
images is summarized by the element-wise L1 differences of their n best
matched descriptors, zero-padded to a fixed n x 128 block.

Image coordinates put +x right and +y down; gradient angles and keypoint
orientations live in [0, 2*pi) under that convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .imaging import as_gray

DESCRIPTOR_LEN = 128
_CLAMP = 0.2
_ORI_BINS = 36
_PEAK_RATIO = 0.8
_MIN_OCTAVE_SIDE = 8


@dataclass
class Keypoint:
    x: float
    y: float
    octave: int
    level: int
    scale: float
    orientation: float
    response: float


@dataclass
class Match:
    query_index: int
    train_index: int
    distance: float


@dataclass
class MatchVector:
    """n x 128 block of matched-descriptor L1 differences, zero padded."""

    values: np.ndarray
    matched_count: int


@dataclass
class ScaleSpace:
    levels: list[np.ndarray]  # per octave: (s + 3, h, w) blurred images
    dogs: list[np.ndarray]  # per octave: (s + 2, h, w) differences
    sigma0: float
    scales_per_octave: int

    def sigma_rel(self, level: int) -> float:
        """Blur of a level in its own octave's pixel units."""
        return self.sigma0 * 2.0 ** (level / self.scales_per_octave)

    def sigma_abs(self, octave: int, level: int) -> float:
        """Blur of a level in base-image pixel units."""
        return self.sigma_rel(level) * 2.0**octave


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with a replicated border.

    The kernel is the sampled Gaussian truncated at radius ceil(4*sigma)
    and normalized to unit sum.
    """
    if sigma <= 0:
        return np.array(img, dtype=np.float64, copy=True)
    arr = np.asarray(img, dtype=np.float64)
    radius = max(1, int(math.ceil(4.0 * sigma)))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    taps /= taps.sum()

    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(arr, pad, mode="edge")
        out = np.zeros_like(arr)
        for i, t in enumerate(taps):
            if axis == 0:
                out += t * padded[i : i + arr.shape[0], :]
            else:
                out += t * padded[:, i : i + arr.shape[1]]
        arr = out
    return arr


def default_octaves(height: int, width: int) -> int:
    return max(1, min(4, int(math.floor(math.log2(min(height, width) / 8.0)))))


def gaussian_scale_space(
    img,
    octaves: int | None = None,
    scales_per_octave: int = 3,
    sigma0: float = 1.6,
) -> ScaleSpace:
    """Blurred pyramid plus DoG stack.

    Octave o, level k has blur sigma0 * 2**(o + k/s) in base-image units;
    each octave holds s + 3 levels. The next octave starts from the level
    with twice the octave's base blur, downsampled by taking every second
    pixel.
    """
    arr = as_gray(img).astype(np.float64) / 255.0
    h, w = arr.shape
    if h < 16 or w < 16:
        raise DimensionError(f"scale space needs at least 16x16, got {w}x{h}")
    if scales_per_octave < 1 or sigma0 <= 0:
        raise DimensionError("scales_per_octave must be >= 1 and sigma0 > 0")
    if octaves is None:
        octaves = default_octaves(h, w)
    if octaves < 1:
        raise DimensionError(f"octaves must be >= 1, got {octaves}")

    s = scales_per_octave
    sigmas = [sigma0 * 2.0 ** (k / s) for k in range(s + 3)]
    all_levels: list[np.ndarray] = []
    all_dogs: list[np.ndarray] = []
    base = arr
    for o in range(octaves):
        if min(base.shape) < _MIN_OCTAVE_SIDE:
            raise DimensionError(
                f"octave {o} would be {base.shape[1]}x{base.shape[0]}; "
                f"reduce the octave count"
            )
        levels = np.empty((s + 3,) + base.shape, dtype=np.float64)
        levels[0] = gaussian_blur(base, sigmas[0])
        for k in range(1, s + 3):
            inc = math.sqrt(sigmas[k] ** 2 - sigmas[k - 1] ** 2)
            levels[k] = gaussian_blur(levels[k - 1], inc)
        all_levels.append(levels)
        all_dogs.append(levels[1:] - levels[:-1])
        base = levels[s][::2, ::2]  # the 2*sigma0 level seeds the next octave
    return ScaleSpace(
        levels=all_levels, dogs=all_dogs, sigma0=sigma0, scales_per_octave=s
    )


def _orientations(
    level_img: np.ndarray, yc: float, xc: float, sigma_w: float
) -> list[float]:
    """Histogram-peak orientations around a refined keypoint center."""
    h, w = level_img.shape
    radius = max(1, int(round(3.0 * sigma_w)))
    r0 = int(round(yc))
    c0 = int(round(xc))
    lo_y = max(1, r0 - radius)
    hi_y = min(h - 2, r0 + radius)
    lo_x = max(1, c0 - radius)
    hi_x = min(w - 2, c0 + radius)
    if lo_y > hi_y or lo_x > hi_x:
        return [0.0]

    patch_y, patch_x = np.mgrid[lo_y : hi_y + 1, lo_x : hi_x + 1]
    dx = 0.5 * (level_img[patch_y, patch_x + 1] - level_img[patch_y, patch_x - 1])
    dy = 0.5 * (level_img[patch_y + 1, patch_x] - level_img[patch_y - 1, patch_x])
    mag = np.hypot(dx, dy)
    ang = np.mod(np.arctan2(dy, dx), 2.0 * np.pi)
    gauss = np.exp(
        -((patch_y - yc) ** 2 + (patch_x - xc) ** 2) / (2.0 * sigma_w * sigma_w)
    )
    bins = (ang * (_ORI_BINS / (2.0 * np.pi))).astype(np.int64) % _ORI_BINS
    hist = np.bincount(bins.ravel(), weights=(mag * gauss).ravel(), minlength=_ORI_BINS)

    # circular [1, 4, 6, 4, 1] / 16 smoothing
    sm = (
        6.0 * hist
        + 4.0 * (np.roll(hist, 1) + np.roll(hist, -1))
        + (np.roll(hist, 2) + np.roll(hist, -2))
    ) / 16.0
    peak_floor = _PEAK_RATIO * sm.max()
    if sm.max() <= 0.0:
        return [0.0]

    out = []
    left = np.roll(sm, 1)
    right = np.roll(sm, -1)
    for i in range(_ORI_BINS):
        if sm[i] > left[i] and sm[i] > right[i] and sm[i] >= peak_floor:
            denom = left[i] - 2.0 * sm[i] + right[i]
            offset = 0.5 * (left[i] - right[i]) / denom
            theta = ((i + 0.5 + offset) * (2.0 * np.pi / _ORI_BINS)) % (2.0 * np.pi)
            out.append(float(theta))
    if not out:
        i = int(np.argmax(sm))
        out.append(float(((i + 0.5) * (2.0 * np.pi / _ORI_BINS)) % (2.0 * np.pi)))
    return out


def detect_keypoints(
    space: ScaleSpace,
    contrast_threshold: float = 0.03,
    edge_ratio: float = 10.0,
) -> list[Keypoint]:
    """3x3x3 DoG extrema minus low-contrast and edge-like candidates.

    An extremum must reach |DoG| >= contrast_threshold and pass the 2x2
    Hessian test tr(H)^2 / det(H) < (r + 1)^2 / r. Surviving candidates
    get sub-pixel spatial refinement (offsets clamped to +-0.5) and one
    keypoint per orientation-histogram peak at >= 80% of the maximum.
    """
    s = space.scales_per_octave
    edge_bound = (edge_ratio + 1.0) ** 2 / edge_ratio
    keypoints: list[Keypoint] = []

    for o, dogs in enumerate(space.dogs):
        _, h, w = dogs.shape
        if h < 3 or w < 3:
            continue
        for d in range(1, s + 1):
            center = dogs[d, 1:-1, 1:-1]
            strong = np.abs(center) >= contrast_threshold
            if not strong.any():
                continue
            win_max = np.full(center.shape, -np.inf)
            win_min = np.full(center.shape, np.inf)
            for dd in (d - 1, d, d + 1):
                plane = dogs[dd]
                for oy in range(3):
                    for ox in range(3):
                        view = plane[oy : oy + h - 2, ox : ox + w - 2]
                        np.maximum(win_max, view, out=win_max)
                        np.minimum(win_min, view, out=win_min)
            cand = strong & ((center == win_max) | (center == win_min))
            ys, xs = np.nonzero(cand)
            if ys.size == 0:
                continue
            ys = ys + 1
            xs = xs + 1

            plane = dogs[d]
            dxx = plane[ys, xs + 1] + plane[ys, xs - 1] - 2.0 * plane[ys, xs]
            dyy = plane[ys + 1, xs] + plane[ys - 1, xs] - 2.0 * plane[ys, xs]
            dxy = 0.25 * (
                plane[ys + 1, xs + 1]
                - plane[ys + 1, xs - 1]
                - plane[ys - 1, xs + 1]
                + plane[ys - 1, xs - 1]
            )
            tr = dxx + dyy
            det = dxx * dyy - dxy * dxy
            ok = (det > 0) & (tr * tr < edge_bound * det)
            if not ok.any():
                continue

            gx = 0.5 * (plane[ys, xs + 1] - plane[ys, xs - 1])
            gy = 0.5 * (plane[ys + 1, xs] - plane[ys - 1, xs])
            level_img = space.levels[o][d]
            sigma_w = 1.5 * space.sigma_rel(d)
            for i in np.nonzero(ok)[0]:
                y, x = int(ys[i]), int(xs[i])
                # sub-pixel refinement: solve H * offset = -grad, clamp to +-0.5
                idet = det[i]
                off_x = -(dyy[i] * gx[i] - dxy[i] * gy[i]) / idet
                off_y = -(-dxy[i] * gx[i] + dxx[i] * gy[i]) / idet
                off_x = min(0.5, max(-0.5, off_x))
                off_y = min(0.5, max(-0.5, off_y))
                xf = x + off_x
                yf = y + off_y
                for theta in _orientations(level_img, yf, xf, sigma_w):
                    keypoints.append(
                        Keypoint(
                            x=xf * 2.0**o,
                            y=yf * 2.0**o,
                            octave=o,
                            level=d,
                            scale=space.sigma_abs(o, d),
                            orientation=theta,
                            response=float(abs(plane[y, x])),
                        )
                    )
    return keypoints


def compute_descriptors(
    space: ScaleSpace, keypoints: list[Keypoint]
) -> tuple[np.ndarray, list[Keypoint]]:
    """4x4x8 orientation-histogram descriptors (unit norm, capped at 0.2).

    Returns (descriptors, kept) where kept lists the keypoints that
    produced a descriptor. A keypoint is dropped when its center sits on
    the outermost pixel ring of its octave or its histogram degenerates;
    window samples falling outside the valid gradient area are skipped.
    """
    d_grid = 4
    n_ori = 8
    descs: list[np.ndarray] = []
    kept: list[Keypoint] = []

    for kp in keypoints:
        level_img = space.levels[kp.octave][kp.level]
        h, w = level_img.shape
        yo = kp.y / 2.0**kp.octave
        xo = kp.x / 2.0**kp.octave
        rc = int(round(yo))
        cc = int(round(xo))
        if rc < 1 or rc > h - 2 or cc < 1 or cc > w - 2:
            continue

        sigma_rel = space.sigma_rel(kp.level)
        hist_width = 3.0 * sigma_rel
        half = int(round(hist_width * math.sqrt(2.0) * (d_grid + 1) * 0.5))
        half = min(half, int(math.hypot(h, w)))

        rows = np.arange(-half, half + 1)
        cols = np.arange(-half, half + 1)
        rr, cols_g = np.meshgrid(rows, cols, indexing="ij")
        abs_r = rc + rr
        abs_c = cc + cols_g
        inside = (abs_r >= 1) & (abs_r <= h - 2) & (abs_c >= 1) & (abs_c <= w - 2)

        cos_t = math.cos(kp.orientation)
        sin_t = math.sin(kp.orientation)
        c_rot = cols_g * cos_t + rr * sin_t
        r_rot = -cols_g * sin_t + rr * cos_t
        rbin = r_rot / hist_width + 0.5 * d_grid - 0.5
        cbin = c_rot / hist_width + 0.5 * d_grid - 0.5
        inside &= (rbin > -1.0) & (rbin < d_grid) & (cbin > -1.0) & (cbin < d_grid)
        if not inside.any():
            continue

        ar = abs_r[inside]
        ac = abs_c[inside]
        dx = 0.5 * (level_img[ar, ac + 1] - level_img[ar, ac - 1])
        dy = 0.5 * (level_img[ar + 1, ac] - level_img[ar - 1, ac])
        mag = np.hypot(dx, dy)
        ang = np.mod(np.arctan2(dy, dx), 2.0 * np.pi)
        weight = np.exp(
            -((r_rot[inside] / hist_width) ** 2 + (c_rot[inside] / hist_width) ** 2)
            / (2.0 * (0.5 * d_grid) ** 2)
        )
        contrib = mag * weight
        obin = ((ang - kp.orientation) * (n_ori / (2.0 * np.pi))) % n_ori

        rb = rbin[inside]
        cb = cbin[inside]
        rf = np.floor(rb).astype(np.int64)
        cf = np.floor(cb).astype(np.int64)
        of = np.floor(obin).astype(np.int64)
        dr = rb - rf
        dc = cb - cf
        do = obin - of

        tensor = np.zeros((d_grid + 2, d_grid + 2, n_ori), dtype=np.float64)
        for br in (0, 1):
            wr = contrib * (dr if br else 1.0 - dr)
            r_idx = rf + br + 1
            for bc in (0, 1):
                wc = wr * (dc if bc else 1.0 - dc)
                c_idx = cf + bc + 1
                for bo in (0, 1):
                    wo = wc * (do if bo else 1.0 - do)
                    o_idx = (of + bo) % n_ori
                    np.add.at(tensor, (r_idx, c_idx, o_idx), wo)

        vec = tensor[1:-1, 1:-1, :].reshape(DESCRIPTOR_LEN).copy()
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            continue
        vec /= norm
        ok = True
        for _ in range(64):
            if vec.max() <= _CLAMP + 1e-12:
                break
            np.minimum(vec, _CLAMP, out=vec)
            norm = np.linalg.norm(vec)
            if norm == 0.0:
                ok = False
                break
            vec /= norm
        if not ok or vec.max() > _CLAMP + 1e-6:
            continue  # degenerate: too few active bins to satisfy the cap
        descs.append(vec)
        kept.append(kp)

    if not descs:
        return np.zeros((0, DESCRIPTOR_LEN), dtype=np.float64), []
    return np.stack(descs), kept


def detect_and_describe(
    img,
    contrast_threshold: float = 0.03,
    edge_ratio: float = 10.0,
    **scale_space_kwargs,
) -> tuple[np.ndarray, list[Keypoint]]:
    """Convenience wrapper: pyramid, detection, and description in one call."""
    space = gaussian_scale_space(img, **scale_space_kwargs)
    kps = detect_keypoints(space, contrast_threshold, edge_ratio)
    descs, kept = compute_descriptors(space, kps)
    return descs, kept


def knn_match(
    query, train, ratio: float = 0.75, cross_check: bool = False
) -> list[Match]:
    """Exact 2-nearest-neighbour matching with a ratio test.

    A query keeps its nearest train descriptor iff d1 < ratio * d2 in
    Euclidean distance; ties prefer the lower train index. With a single
    train descriptor the ratio test is replaced by d1 < 0.4. The result
    is sorted by ascending match distance. With cross_check the match
    must also survive the reverse direction: train[j]'s best query is i.
    """
    q = np.asarray(query, dtype=np.float64)
    t = np.asarray(train, dtype=np.float64)
    if q.size == 0 or t.size == 0:
        return []
    if q.ndim != 2 or t.ndim != 2 or q.shape[1] != t.shape[1]:
        raise DimensionError(
            f"descriptor sets must share a width, got {q.shape} and {t.shape}"
        )

    matches: list[Match] = []
    if t.shape[0] == 1:
        d2 = np.sum((q - t[0]) ** 2, axis=1)
        for i in np.nonzero(d2 < 0.4 * 0.4)[0]:
            matches.append(Match(int(i), 0, float(math.sqrt(d2[i]))))
    else:
        ratio_sq = ratio * ratio
        chunk = max(1, int(4_000_000 // max(1, t.shape[0] * t.shape[1])))
        for lo in range(0, q.shape[0], chunk):
            qc = q[lo : lo + chunk]
            d2 = np.sum((qc[:, None, :] - t[None, :, :]) ** 2, axis=2)
            order = np.argsort(d2, axis=1, kind="stable")
            first = order[:, 0]
            second = order[:, 1]
            rows = np.arange(qc.shape[0])
            d1s = d2[rows, first]
            d2s = d2[rows, second]
            keep = d1s < ratio_sq * d2s
            for i in np.nonzero(keep)[0]:
                matches.append(
                    Match(lo + int(i), int(first[i]), float(math.sqrt(d1s[i])))
                )
    if cross_check and matches:
        reverse = {
            m.query_index: m.train_index for m in knn_match(t, q, ratio)
        }
        matches = [m for m in matches if reverse.get(m.train_index) == m.query_index]
    matches.sort(key=lambda m: m.distance)
    return matches


def sift_pair_features(
    img_a, img_b, n: int = 16, contrast_threshold: float = 0.03
) -> MatchVector:
    """L1 differences of the n best matched descriptors, zero padded.

    Row i is |descA - descB| for the i-th best match of A against B;
    rows past matched_count stay zero. Images without keypoints simply
    produce fewer (possibly zero) matches. Small low-contrast images may
    need contrast_threshold below the 0.03 default to yield any.
    """
    if n < 1:
        raise DimensionError(f"n must be >= 1, got {n}")
    desc_a, _ = detect_and_describe(img_a, contrast_threshold=contrast_threshold)
    desc_b, _ = detect_and_describe(img_b, contrast_threshold=contrast_threshold)
    values = np.zeros((n, DESCRIPTOR_LEN), dtype=np.float64)
    if desc_a.shape[0] == 0 or desc_b.shape[0] == 0:
        return MatchVector(values=values, matched_count=0)
    matches = knn_match(desc_a, desc_b)
    m = min(n, len(matches))
    for i in range(m):
        mt = matches[i]
        values[i] = np.abs(desc_a[mt.query_index] - desc_b[mt.train_index])
    return MatchVector(values=values, matched_count=m)


def write_pair_cache(fh, entries, n: int = 16) -> None:
    """Write rows `pathA,pathB,matched_count,v0,...` for pair features."""
    import csv

    width = n * DESCRIPTOR_LEN
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["pathA", "pathB", "matched_count"] + [f"v{i}" for i in range(width)])
    for path_a, path_b, mv in entries:
        flat = np.asarray(mv.values, dtype=np.float64).reshape(-1)
        if flat.shape != (width,):
            raise DimensionError(
                f"pair feature for ({path_a}, {path_b}) has {flat.size} values, "
                f"expected {width}"
            )
        writer.writerow(
            [path_a, path_b, str(int(mv.matched_count))]
            + [f"{v:.8g}" for v in flat]
        )


def read_pair_cache(fh) -> dict[tuple[str, str], MatchVector]:
    """Read a pair-feature cache into {(pathA, pathB): MatchVector}."""
    import csv

    from .errors import FormatError

    reader = csv.reader(fh)
    header = next(reader, None)
    if (
        header is None
        or len(header) < 4
        or header[:3] != ["pathA", "pathB", "matched_count"]
    ):
        raise FormatError("bad pair cache header")
    width = len(header) - 3
    if width % DESCRIPTOR_LEN != 0:
        raise FormatError(f"pair cache width {width} is not a multiple of 128")
    out: dict[tuple[str, str], MatchVector] = {}
    for row in reader:
        if not row:
            continue
        if len(row) != width + 3:
            raise FormatError(f"pair cache row for {row[:2]} has {len(row)} fields")
        values = np.array([float(x) for x in row[3:]], dtype=np.float64)
        out[(row[0], row[1])] = MatchVector(
            values=values.reshape(width // DESCRIPTOR_LEN, DESCRIPTOR_LEN),
            matched_count=int(row[2]),
        )
    return out
