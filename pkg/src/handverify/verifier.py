"""Two-channel verification models: branches, fusion, training, scoring.

A branch maps one 64x64 grayscale image (scaled to [0, 1]) to a feature
vector: the convolutional backbone yields 256 features, the autoencoder
backbone yields a 128-d latent whose decoder reconstructs the input. Both
channels share one set of branch weights, so the two images of a pair run
through the identical function.

Pair features are fused either by concatenation (Fi | Fj) or by
difference (Fi - Fj), optionally followed by a human-engineered
difference block: the 512-bit mask XOR or the n x 128 matched-descriptor
block. A small dense head turns the fused vector into two softmax
probabilities (index 0 = same writer), and the verdict is the log ratio
llr = ln(p_same / p_diff); llr > 0 reads as "same writer".
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import neuralnet as nn
from .corpus import PairRow
from .errors import ContractError, DataError, TrainingDiverged, VerifyError
from .gsc import extract_gsc, gsc_l1_diff
from .imaging import binarize_otsu, load_pgm, preprocess
from .keypoints import sift_pair_features

INPUT_SIDE = 64
CNN_FEATURES = 256
AE_FEATURES = 128
PROB_EPS = 1e-7

BACKBONES = ("cnn", "ae")
FUSION_MODES = ("concat", "diff")
HEF_MODES = ("none", "gsc", "sift")


@dataclass(frozen=True)
class BranchConfig:
    backbone: str = "cnn"
    fusion: str = "concat"
    hef: str = "none"
    lam: float = 1.0  # reconstruction weight (autoencoder backbone only)
    sift_n: int = 16
    sift_contrast: float = 0.03
    head_widths: tuple[int, int] = (256, 64)

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ContractError(f"backbone must be one of {BACKBONES}")
        if self.fusion not in FUSION_MODES:
            raise ContractError(f"fusion must be one of {FUSION_MODES}")
        if self.hef not in HEF_MODES:
            raise ContractError(f"hef must be one of {HEF_MODES}")
        if self.lam < 0:
            raise ContractError(f"reconstruction weight must be >= 0, got {self.lam}")
        if self.sift_n < 1:
            raise ContractError(f"sift_n must be >= 1, got {self.sift_n}")


@dataclass
class VerificationRecord:
    path_a: str
    path_b: str
    p_same: float
    p_diff: float
    llr: float
    prediction: int  # 1 = same writer; -1 marks an error row
    error: str | None = None


@dataclass
class EpochStats:
    epoch: int
    total: float
    cce: float
    mae: float


@dataclass
class EvaluationRow:
    backbone: str
    fusion: str
    hef: str
    scheme: str
    pairs: int
    errors: int
    accuracy: float
    mean_abs_llr: float


@dataclass
class EvaluationReport:
    rows: list[EvaluationRow] = field(default_factory=list)


def branch_spec(backbone: str) -> list[nn.LayerSpec]:
    if backbone == "cnn":
        return [
            nn.conv2d(32),
            nn.maxpool(),
            nn.conv2d(64),
            nn.maxpool(),
            nn.conv2d(128),
            nn.maxpool(),
            nn.conv2d(256),
            nn.maxpool(),
            nn.conv2d(64),
            nn.maxpool(),
            nn.flatten(),
        ]
    if backbone == "ae":
        return [
            nn.conv2d(64),
            nn.relu(),
            nn.conv2d(1),
            nn.relu(),
            nn.flatten(),
            nn.dense(4096),
            nn.relu(),
            nn.dense(1024),
            nn.relu(),
            nn.dense(128),
        ]
    raise ContractError(f"unknown backbone {backbone!r}")


def decoder_spec() -> list[nn.LayerSpec]:
    return [
        nn.dense(1024),
        nn.relu(),
        nn.dense(4096),
        nn.relu(),
        nn.reshape(1, INPUT_SIDE, INPUT_SIDE),
        nn.conv2d(64),
        nn.relu(),
        nn.conv2d(1),
        nn.sigmoid(),
    ]


def head_spec(widths: tuple[int, int]) -> list[nn.LayerSpec]:
    return [
        nn.dense(widths[0]),
        nn.relu(),
        nn.dense(widths[1]),
        nn.relu(),
        nn.dense(2),
        nn.softmax(),
    ]


def feature_length(backbone: str) -> int:
    return CNN_FEATURES if backbone == "cnn" else AE_FEATURES


def hef_length(config: BranchConfig) -> int:
    if config.hef == "gsc":
        return 512
    if config.hef == "sift":
        return config.sift_n * 128
    return 0


def fused_length(config: BranchConfig) -> int:
    deep = feature_length(config.backbone)
    deep = 2 * deep if config.fusion == "concat" else deep
    return deep + hef_length(config)


def build_model(config: BranchConfig, seed: int, lr: float = 1e-3) -> nn.ModelParams:
    """Freshly initialized parameters for every part of the network."""
    rng = np.random.default_rng([seed, 7])
    tensors: dict[str, np.ndarray] = {}
    tensors.update(
        nn.init_params(
            branch_spec(config.backbone), (1, INPUT_SIDE, INPUT_SIDE), rng,
            prefix="branch.",
        )
    )
    if config.backbone == "ae":
        tensors.update(
            nn.init_params(decoder_spec(), (AE_FEATURES,), rng, prefix="decoder.")
        )
    tensors.update(
        nn.init_params(
            head_spec(config.head_widths), (fused_length(config),), rng,
            prefix="head.",
        )
    )
    hyper = {
        "backbone": config.backbone,
        "fusion": config.fusion,
        "hef": config.hef,
        "lambda": config.lam,
        "sift_n": config.sift_n,
        "sift_contrast": config.sift_contrast,
        "head_widths": list(config.head_widths),
        "lr": lr,
        "seed": seed,
        "same_class_index": 0,
    }
    return nn.ModelParams(tensors=tensors, hyper=hyper)


def config_from_hyper(hyper: dict) -> BranchConfig:
    """Reconstruct the BranchConfig a saved model was trained with."""
    try:
        return BranchConfig(
            backbone=hyper["backbone"],
            fusion=hyper["fusion"],
            hef=hyper["hef"],
            lam=float(hyper.get("lambda", 1.0)),
            sift_n=int(hyper.get("sift_n", 16)),
            sift_contrast=float(hyper.get("sift_contrast", 0.03)),
            head_widths=tuple(hyper.get("head_widths", (256, 64))),
        )
    except KeyError as e:
        raise ContractError(f"model hyperparameters missing {e}") from None


def _as_batch(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[None, None, :, :]
    elif arr.ndim == 3:
        arr = arr[:, None, :, :]
    if arr.ndim != 4 or arr.shape[1] != 1:
        raise ContractError(f"expected images of shape (B, 1, H, W), got {arr.shape}")
    return arr


def scale_input(img) -> np.ndarray:
    """uint8 image(s) to float32 in [0, 1], batched (B, 1, 64, 64)."""
    arr = _as_batch(img)
    if arr.shape[2] != INPUT_SIDE or arr.shape[3] != INPUT_SIDE:
        raise ContractError(
            f"branch input must be {INPUT_SIDE}x{INPUT_SIDE}, got "
            f"{arr.shape[3]}x{arr.shape[2]}"
        )
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / np.float32(255.0)
    return arr.astype(np.float32)


def branch_forward(params: nn.ModelParams, img) -> np.ndarray:
    """Features of one or more images through the shared branch."""
    config = config_from_hyper(params.hyper)
    x = scale_input(img)
    out, _ = nn.forward(branch_spec(config.backbone), params, x, prefix="branch.")
    squeeze = np.asarray(img).ndim == 2
    return out[0] if squeeze else out


def fuse(fi, fj, mode: str, hef_diff=None) -> np.ndarray:
    """Deep fusion (concatenate or subtract) plus the optional HEF block."""
    a = np.asarray(fi)
    b = np.asarray(fj)
    if a.shape != b.shape:
        raise ContractError(f"feature shapes differ: {a.shape} vs {b.shape}")
    if mode == "concat":
        deep = np.concatenate([a, b], axis=-1)
    elif mode == "diff":
        deep = a - b
    else:
        raise ContractError(f"unknown fusion mode {mode!r}")
    if hef_diff is None:
        return deep
    h = np.asarray(hef_diff, dtype=deep.dtype)
    if h.shape[:-1] != deep.shape[:-1]:
        raise ContractError(
            f"HEF block batch shape {h.shape} does not match features {deep.shape}"
        )
    return np.concatenate([deep, h], axis=-1)


def head_predict(params: nn.ModelParams, fused) -> tuple:
    """Softmax probabilities (p_same, p_diff) for fused vectors."""
    config = config_from_hyper(params.hyper)
    x = np.asarray(fused)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    probs, _ = nn.forward(head_spec(config.head_widths), params, x, prefix="head.")
    if single:
        return float(probs[0, 0]), float(probs[0, 1])
    return probs[:, 0], probs[:, 1]


def compute_llr(p_same: float, p_diff: float) -> float:
    """ln(p_same / p_diff) on clamped probabilities; positive = same writer."""
    ps = min(max(float(p_same), PROB_EPS), 1.0 - PROB_EPS)
    pd = min(max(float(p_diff), PROB_EPS), 1.0 - PROB_EPS)
    return math.log(ps / pd)


def _resolve(path: str, root) -> str:
    if root is None or os.path.isabs(path):
        return path
    return os.path.join(root, path)


def _load_input(path: str, root, cache: dict) -> np.ndarray:
    """Load a PGM as a (1, 64, 64) float32 array, preprocessing if needed."""
    resolved = _resolve(path, root)
    hit = cache.get(resolved)
    if hit is not None:
        return hit
    img = load_pgm(resolved)
    if img.shape != (INPUT_SIDE, INPUT_SIDE):
        img = preprocess(img)
    arr = img.astype(np.float32)[None, :, :] / np.float32(255.0)
    cache[resolved] = arr
    return arr


def _hef_diff(config: BranchConfig, img_a: np.ndarray, img_b: np.ndarray) -> np.ndarray:
    # inputs are (1, 64, 64) float32 in [0, 1]
    a8 = np.rint(img_a[0] * 255.0).astype(np.uint8)
    b8 = np.rint(img_b[0] * 255.0).astype(np.uint8)
    if config.hef == "gsc":
        va = extract_gsc(binarize_otsu(a8))
        vb = extract_gsc(binarize_otsu(b8))
        return gsc_l1_diff(va, vb).astype(np.float32)
    if config.hef == "sift":
        mv = sift_pair_features(
            a8, b8, n=config.sift_n, contrast_threshold=config.sift_contrast
        )
        return mv.values.reshape(-1).astype(np.float32)
    raise ContractError("no HEF block configured")


def _gather_hef(
    config: BranchConfig,
    pairs: list[PairRow],
    root,
    cache: dict,
    hef_cache: dict | None,
) -> np.ndarray | None:
    if config.hef == "none":
        return None
    width = hef_length(config)
    out = np.zeros((len(pairs), width), dtype=np.float32)
    for i, pair in enumerate(pairs):
        if hef_cache is not None:
            hit = hef_cache.get((pair.path_a, pair.path_b))
            if hit is not None:
                vec = np.asarray(
                    hit.values if hasattr(hit, "values") else hit, dtype=np.float32
                ).reshape(-1)
                if vec.size != width:
                    raise ContractError(
                        f"cached HEF for ({pair.path_a}, {pair.path_b}) has "
                        f"{vec.size} values, expected {width}"
                    )
                out[i] = vec
                continue
        a = _load_input(pair.path_a, root, cache)
        b = _load_input(pair.path_b, root, cache)
        out[i] = _hef_diff(config, a, b)
    return out


def train(
    config: BranchConfig,
    pairs: list[PairRow],
    root=None,
    epochs: int = 30,
    batch: int = 32,
    seed: int = 0,
    lr: float = 1e-3,
    alternating: bool = False,
    hef_cache: dict | None = None,
) -> tuple[nn.ModelParams, list[EpochStats]]:
    """Train a verification model on a labeled pair manifest.

    Runs both pair images through the shared branch as one stacked batch,
    fuses, classifies, and minimizes the mean cross entropy; the
    autoencoder backbone adds lam times the mean reconstruction error of
    both channels. With alternating=True the reconstruction and the
    classifier are optimized in two separate steps per batch instead.
    Deterministic for a fixed seed.
    """
    if not pairs:
        raise DataError("empty pair manifest")
    labels_present = {p.label for p in pairs}
    if labels_present != {0, 1}:
        raise DataError(
            f"training needs both labels, manifest has only {sorted(labels_present)}"
        )
    if epochs < 1 or batch < 1:
        raise DataError(f"epochs and batch must be >= 1, got {epochs}, {batch}")

    img_cache: dict[str, np.ndarray] = {}
    paths = sorted({p.path_a for p in pairs} | {p.path_b for p in pairs})
    path_index = {p: i for i, p in enumerate(paths)}
    images = np.stack([_load_input(p, root, img_cache) for p in paths])
    ia = np.array([path_index[p.path_a] for p in pairs])
    ib = np.array([path_index[p.path_b] for p in pairs])
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    targets_all = 1 - labels  # class 0 = same writer
    hef_all = _gather_hef(config, pairs, root, img_cache, hef_cache)

    params = build_model(config, seed, lr=lr)
    params.hyper["epochs"] = epochs
    params.hyper["batch"] = batch
    params.hyper["alternating"] = bool(alternating)
    deep = feature_length(config.backbone)
    b_spec = branch_spec(config.backbone)
    h_spec = head_spec(config.head_widths)
    d_spec = decoder_spec() if config.backbone == "ae" else None

    state = nn.AdamState()
    alt_state = nn.AdamState() if alternating else None
    rng = np.random.default_rng([seed, 13])
    history: list[EpochStats] = []
    n = len(pairs)
    sim_rows = np.flatnonzero(labels == 1)
    dis_rows = np.flatnonzero(labels == 0)

    for epoch in range(1, epochs + 1):
        # stratified shuffle: interleave the classes proportionally so every
        # batch is near-balanced; unbalanced batches make the shared gradient
        # drift toward one class and stall training on near-constant inputs
        sim_sh = rng.permutation(sim_rows)
        dis_sh = rng.permutation(dis_rows)
        keys = np.concatenate(
            [
                (np.arange(sim_sh.size) + 0.5) / max(sim_sh.size, 1),
                (np.arange(dis_sh.size) + 0.5) / max(dis_sh.size, 1),
            ]
        )
        order = np.concatenate([sim_sh, dis_sh])[np.argsort(keys, kind="stable")]
        sum_total = 0.0
        sum_cce = 0.0
        sum_mae = 0.0
        for batch_no, lo in enumerate(range(0, n, batch)):
            idx = order[lo : lo + batch]
            bsz = idx.size
            x = np.concatenate([images[ia[idx]], images[ib[idx]]], axis=0)
            targets = targets_all[idx]
            hef_batch = hef_all[idx] if hef_all is not None else None

            feats, cache_b = nn.forward(b_spec, params, x, prefix="branch.")
            fi, fj = feats[:bsz], feats[bsz:]
            fused = fuse(fi, fj, config.fusion, hef_batch)
            probs, cache_h = nn.forward(h_spec, params, fused, prefix="head.")
            cce, dprobs = nn.cce_loss_mean(probs, targets)
            grads_h, dfused = nn.backward(cache_h, dprobs)

            if config.fusion == "concat":
                dfi = dfused[:, :deep]
                dfj = dfused[:, deep : 2 * deep]
            else:
                dfi = dfused[:, :deep]
                dfj = -dfi
            dfeats = np.concatenate([dfi, dfj], axis=0)

            mae_val = 0.0
            grads_d: dict[str, np.ndarray] = {}
            if config.backbone == "ae":
                recon, cache_d = nn.forward(d_spec, params, feats, prefix="decoder.")
                mae_val, drecon = nn.mae_loss_grad(recon, x)
                if alternating:
                    # step 1: reconstruction updates branch and decoder
                    grads_d, dlat = nn.backward(cache_d, drecon)
                    grads_b, _ = nn.backward(cache_b, dlat)
                    nn.adam_step(params.tensors, grads_d | grads_b, alt_state, lr)
                    # step 2: classifier updates the head on fresh features
                    feats2, _ = nn.forward(b_spec, params, x, prefix="branch.")
                    fused2 = fuse(feats2[:bsz], feats2[bsz:], config.fusion, hef_batch)
                    probs2, cache_h2 = nn.forward(h_spec, params, fused2, prefix="head.")
                    cce, dprobs2 = nn.cce_loss_mean(probs2, targets)
                    grads_h2, _ = nn.backward(cache_h2, dprobs2)
                    nn.adam_step(params.tensors, grads_h2, state, lr)
                    total = cce + config.lam * mae_val
                    if not np.isfinite(total):
                        raise TrainingDiverged(epoch, batch_no, total)
                    sum_total += total * bsz
                    sum_cce += cce * bsz
                    sum_mae += mae_val * bsz
                    continue
                grads_d, dlat = nn.backward(cache_d, config.lam * drecon)
                dfeats = dfeats + dlat

            grads_b, _ = nn.backward(cache_b, dfeats)
            total = cce + config.lam * mae_val if config.backbone == "ae" else cce
            if not np.isfinite(total):
                raise TrainingDiverged(epoch, batch_no, total)
            nn.adam_step(params.tensors, grads_h | grads_b | grads_d, state, lr)
            sum_total += total * bsz
            sum_cce += cce * bsz
            sum_mae += mae_val * bsz
        history.append(
            EpochStats(
                epoch=epoch,
                total=sum_total / n,
                cce=sum_cce / n,
                mae=sum_mae / n,
            )
        )
    return params, history


def _check_config(params: nn.ModelParams, config: BranchConfig) -> None:
    stored = config_from_hyper(params.hyper)
    if (
        stored.backbone != config.backbone
        or stored.fusion != config.fusion
        or stored.hef != config.hef
        or stored.sift_n != config.sift_n
    ):
        raise ContractError(
            f"model was trained as {stored.backbone}/{stored.fusion}/{stored.hef}, "
            f"requested {config.backbone}/{config.fusion}/{config.hef}"
        )


def _verify_chunk(
    params: nn.ModelParams,
    config: BranchConfig,
    chunk: list[PairRow],
    root,
    img_cache: dict,
    hef_cache: dict | None,
) -> list[VerificationRecord]:
    records: list[VerificationRecord] = []
    loadable: list[tuple[int, np.ndarray, np.ndarray]] = []
    for i, pair in enumerate(chunk):
        records.append(
            VerificationRecord(
                path_a=pair.path_a,
                path_b=pair.path_b,
                p_same=float("nan"),
                p_diff=float("nan"),
                llr=float("nan"),
                prediction=-1,
            )
        )
        try:
            a = _load_input(pair.path_a, root, img_cache)
            b = _load_input(pair.path_b, root, img_cache)
            loadable.append((i, a, b))
        except (VerifyError, OSError) as e:
            records[i].error = str(e)
    if not loadable:
        return records

    rows = [chunk[i] for i, _, _ in loadable]
    xa = np.stack([a for _, a, _ in loadable])
    xb = np.stack([b for _, _, b in loadable])
    feats, _ = nn.forward(
        branch_spec(config.backbone),
        params,
        np.concatenate([xa, xb], axis=0),
        prefix="branch.",
    )
    k = len(loadable)
    hef_block = _gather_hef(config, rows, root, img_cache, hef_cache)
    fused = fuse(feats[:k], feats[k:], config.fusion, hef_block)
    probs, _ = nn.forward(
        head_spec(config.head_widths), params, fused, prefix="head."
    )
    for j, (i, _, _) in enumerate(loadable):
        p_same = float(probs[j, 0])
        p_diff = float(probs[j, 1])
        llr = compute_llr(p_same, p_diff)
        records[i].p_same = p_same
        records[i].p_diff = p_diff
        records[i].llr = llr
        records[i].prediction = 1 if llr > 0 else 0
    return records


def verify_batch(
    params: nn.ModelParams,
    config: BranchConfig,
    pairs: list[PairRow],
    root=None,
    jobs: int = 1,
    hef_cache: dict | None = None,
) -> list[VerificationRecord]:
    """Score every pair; one record per manifest row, in manifest order.

    A pair whose images cannot be loaded becomes an error record (llr is
    NaN, prediction -1) and processing continues.
    """
    _check_config(params, config)
    if not pairs:
        return []
    chunk_size = 64
    chunks = [pairs[lo : lo + chunk_size] for lo in range(0, len(pairs), chunk_size)]
    img_cache: dict[str, np.ndarray] = {}
    if jobs <= 1 or len(chunks) == 1:
        results = [
            _verify_chunk(params, config, c, root, img_cache, hef_cache)
            for c in chunks
        ]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(
                    _verify_chunk, params, config, c, root, img_cache, hef_cache
                )
                for c in chunks
            ]
            results = [f.result() for f in futures]
    return [rec for chunk in results for rec in chunk]


def write_verification_csv(fh, records: list[VerificationRecord]) -> None:
    """Rows `path_a,path_b,llr,prediction` with llr at 6 decimal places."""
    fh.write("path_a,path_b,llr,prediction\n")
    for r in records:
        fh.write(f"{r.path_a},{r.path_b},{r.llr:.6f},{r.prediction}\n")


def read_verification_csv(fh) -> list[VerificationRecord]:
    import csv as _csv

    from .errors import FormatError

    reader = _csv.reader(fh)
    header = next(reader, None)
    if header != ["path_a", "path_b", "llr", "prediction"]:
        raise FormatError(f"bad verification header {header!r}")
    out = []
    for rec in reader:
        if not rec:
            continue
        if len(rec) != 4:
            raise FormatError(f"bad verification row {rec!r}")
        llr = float(rec[2])
        out.append(
            VerificationRecord(
                path_a=rec[0],
                path_b=rec[1],
                p_same=float("nan"),
                p_diff=float("nan"),
                llr=llr,
                prediction=int(rec[3]),
            )
        )
    return out


def evaluate(
    records: list[VerificationRecord],
    pairs: list[PairRow],
    scheme: str = "",
    hyper: dict | None = None,
) -> EvaluationReport:
    """Accuracy of llr signs against pair labels.

    A row is correct iff (llr > 0) == (label == 1); llr == 0 therefore
    counts as a dissimilar verdict. Error rows are always incorrect and
    are tallied separately.
    """
    if len(records) != len(pairs):
        raise ContractError(
            f"{len(records)} records vs {len(pairs)} manifest rows"
        )
    correct = 0
    errors = 0
    abs_llrs = []
    for rec, pair in zip(records, pairs):
        if rec.path_a != pair.path_a or rec.path_b != pair.path_b:
            raise ContractError(
                f"record ({rec.path_a}, {rec.path_b}) does not match manifest "
                f"row ({pair.path_a}, {pair.path_b})"
            )
        if rec.prediction < 0 or not math.isfinite(rec.llr):
            errors += 1
            continue
        abs_llrs.append(abs(rec.llr))
        if (rec.llr > 0) == (pair.label == 1):
            correct += 1
    hyper = hyper or {}
    row = EvaluationRow(
        backbone=str(hyper.get("backbone", "")),
        fusion=str(hyper.get("fusion", "")),
        hef=str(hyper.get("hef", "")),
        scheme=scheme,
        pairs=len(pairs),
        errors=errors,
        accuracy=correct / len(pairs) if pairs else 0.0,
        mean_abs_llr=float(np.mean(abs_llrs)) if abs_llrs else 0.0,
    )
    return EvaluationReport(rows=[row])
