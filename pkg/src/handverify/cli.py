"""Command-line surface: synthesize, preprocess, extract, train, verify, evaluate.

Exit codes: 0 success, 1 usage error (bad flags or subcommand), 2 data or
format error (unreadable files, malformed CSV, shape mismatches). Paths
inside manifests are resolved relative to the manifest's own directory
unless absolute or overridden with --root, so a corpus directory moves
as a unit.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import corpus as cp
from . import gsc as gf
from . import keypoints as kp
from . import neuralnet as nn
from . import verifier as vf
from .errors import DataError, VerifyError
from .imaging import load_pgm, preprocess, save_pgm


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this surface reserves 2
    for data problems, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="handverify", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a synthetic multi-writer corpus")
    p.add_argument("--writers", type=int, required=True)
    p.add_argument("--samples", type=int, required=True, help="samples per writer")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("preprocess", help="scale manifest images to 64x64")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("extract", help="compute feature caches")
    feat = p.add_subparsers(dest="feature", required=True, parser_class=_Parser)
    g = feat.add_parser("gsc", help="512-bit binary vectors per manifest image")
    g.add_argument("--manifest", required=True)
    g.add_argument("--out", required=True, help="cache CSV")
    g.add_argument("--threshold", type=int, default=None,
                   help="fixed binarization threshold (default: Otsu)")
    g.add_argument("--root", default=None, help="base directory for image paths")
    g.add_argument("--jobs", type=int, default=1)
    s = feat.add_parser("sift", help="matched-descriptor blocks per pair")
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True, help="cache CSV")
    s.add_argument("--n", type=int, default=16, help="matches kept per pair")
    s.add_argument("--contrast", type=float, default=0.03,
                   help="keypoint contrast threshold")
    s.add_argument("--root", default=None, help="base directory for image paths")
    s.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("pairs", help="partition a manifest and emit labeled pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scheme", choices=("unseen", "shuffled", "seen"), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--train-count", type=int, required=True)
    p.add_argument("--test-count", type=int, required=True)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)

    p = sub.add_parser("train", help="train a verification model on labeled pairs")
    p.add_argument("--backbone", choices=vf.BACKBONES, default="cnn")
    p.add_argument("--fusion", choices=vf.FUSION_MODES, default="concat")
    p.add_argument("--hef", choices=vf.HEF_MODES, default="none")
    p.add_argument("--pairs", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="reconstruction weight (ae backbone)")
    p.add_argument("--alternating", action="store_true",
                   help="separate reconstruction and classifier steps")
    p.add_argument("--sift-n", type=int, default=16)
    p.add_argument("--sift-contrast", type=float, default=0.03)
    p.add_argument("--root", default=None, help="base directory for pair paths")
    p.add_argument("--sift-cache", default=None, help="pair-feature cache CSV")
    p.add_argument("--model", required=True, help="output model file")

    p = sub.add_parser("verify", help="score pairs with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--root", default=None, help="base directory for pair paths")
    p.add_argument("--sift-cache", default=None, help="pair-feature cache CSV")

    p = sub.add_parser("evaluate", help="accuracy of verification output vs labels")
    p.add_argument("--results", required=True, help="verify output CSV")
    p.add_argument("--pairs", required=True, help="labeled pair manifest")
    p.add_argument("--scheme", default="", help="partition label for the report")
    p.add_argument("--model", default=None,
                   help="model file; fills the configuration columns")
    p.add_argument("--out", default=None, help="report CSV (default: stdout only)")

    return parser


def _root_for(csv_path: str, override) -> str:
    if override is not None:
        return override
    return os.path.dirname(os.path.abspath(csv_path))


def _cmd_synth(args) -> int:
    rows = cp.generate_corpus(args.writers, args.samples, args.seed, args.out)
    print(f"wrote {len(rows)} images and manifest.csv to {args.out}")
    return 0


def _cmd_preprocess(args) -> int:
    root = _root_for(args.manifest, None)
    with open(args.manifest, newline="") as fh:
        rows = cp.read_manifest(fh)
    os.makedirs(args.out, exist_ok=True)
    for row in rows:
        src = row.path if os.path.isabs(row.path) else os.path.join(root, row.path)
        img = preprocess(load_pgm(src))
        save_pgm(os.path.join(args.out, os.path.basename(row.path)), img)
    out_rows = [
        cp.ManifestRow(os.path.basename(r.path), r.writer_id, r.sample_id)
        for r in rows
    ]
    with open(os.path.join(args.out, "manifest.csv"), "w", newline="") as fh:
        cp.write_manifest(fh, out_rows)
    print(f"preprocessed {len(rows)} images to {args.out}")
    return 0


def _load_for_features(path: str, root: str) -> np.ndarray:
    full = path if os.path.isabs(path) else os.path.join(root, path)
    img = load_pgm(full)
    if img.shape != (64, 64):
        img = preprocess(img)
    return img


def _map_jobs(fn, items, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _cmd_extract_gsc(args) -> int:
    from .imaging import binarize_fixed, binarize_otsu

    root = _root_for(args.manifest, args.root)
    with open(args.manifest, newline="") as fh:
        rows = cp.read_manifest(fh)

    def one(row):
        img = _load_for_features(row.path, root)
        if args.threshold is None:
            mask = binarize_otsu(img)
        else:
            mask = binarize_fixed(img, args.threshold)
        return row.path, gf.extract_gsc(mask)

    entries = _map_jobs(one, rows, args.jobs)
    with open(args.out, "w", newline="") as fh:
        gf.write_feature_cache(fh, entries)
    print(f"wrote {len(entries)} feature rows to {args.out}")
    return 0


def _cmd_extract_sift(args) -> int:
    root = _root_for(args.pairs, args.root)
    with open(args.pairs, newline="") as fh:
        pairs = cp.read_pairs(fh)

    def one(pair):
        a = _load_for_features(pair.path_a, root)
        b = _load_for_features(pair.path_b, root)
        mv = kp.sift_pair_features(a, b, n=args.n, contrast_threshold=args.contrast)
        return pair.path_a, pair.path_b, mv

    entries = _map_jobs(one, pairs, args.jobs)
    with open(args.out, "w", newline="") as fh:
        kp.write_pair_cache(fh, entries, n=args.n)
    print(f"wrote {len(entries)} pair rows to {args.out}")
    return 0


def _cmd_pairs(args) -> int:
    with open(args.manifest, newline="") as fh:
        rows = cp.read_manifest(fh)
    part = cp.partition(rows, args.scheme, args.test_fraction, args.seed)
    train_rows = cp.make_pairs(part.train, args.train_count, args.seed)
    test_rows = cp.make_pairs(part.test, args.test_count, args.seed + 1)
    with open(args.train_out, "w", newline="") as fh:
        cp.write_pairs(fh, train_rows)
    with open(args.test_out, "w", newline="") as fh:
        cp.write_pairs(fh, test_rows)
    print(
        f"{args.scheme}: {len(part.train)} train / {len(part.test)} test samples, "
        f"{len(train_rows)} train / {len(test_rows)} test pairs"
    )
    return 0


def _load_sift_cache(path):
    if path is None:
        return None
    with open(path, newline="") as fh:
        return kp.read_pair_cache(fh)


def _cmd_train(args) -> int:
    config = vf.BranchConfig(
        backbone=args.backbone,
        fusion=args.fusion,
        hef=args.hef,
        lam=args.lam,
        sift_n=args.sift_n,
        sift_contrast=args.sift_contrast,
    )
    root = _root_for(args.pairs, args.root)
    with open(args.pairs, newline="") as fh:
        pairs = cp.read_pairs(fh)
    hef_cache = _load_sift_cache(args.sift_cache) if args.hef == "sift" else None
    params, history = vf.train(
        config,
        pairs,
        root=root,
        epochs=args.epochs,
        batch=args.batch,
        seed=args.seed,
        lr=args.lr,
        alternating=args.alternating,
        hef_cache=hef_cache,
    )
    for st in history:
        print(
            f"epoch {st.epoch:3d} total {st.total:.6f} "
            f"cce {st.cce:.6f} mae {st.mae:.6f}"
        )
    with open(args.model, "wb") as fh:
        fh.write(nn.save_model(params))
    print(f"saved model to {args.model}")
    return 0


def _cmd_verify(args) -> int:
    with open(args.model, "rb") as fh:
        params = nn.load_model(fh.read())
    config = vf.config_from_hyper(params.hyper)
    root = _root_for(args.pairs, args.root)
    with open(args.pairs, newline="") as fh:
        pairs = cp.read_pairs(fh)
    hef_cache = _load_sift_cache(args.sift_cache) if config.hef == "sift" else None
    records = vf.verify_batch(
        params, config, pairs, root=root, jobs=args.jobs, hef_cache=hef_cache
    )
    with open(args.out, "w", newline="") as fh:
        vf.write_verification_csv(fh, records)
    failed = sum(1 for r in records if r.prediction < 0)
    msg = f"scored {len(records)} pairs to {args.out}"
    if failed:
        msg += f" ({failed} unreadable)"
    print(msg)
    return 0


def _cmd_evaluate(args) -> int:
    with open(args.results, newline="") as fh:
        records = vf.read_verification_csv(fh)
    with open(args.pairs, newline="") as fh:
        pairs = cp.read_pairs(fh)
    hyper = None
    if args.model is not None:
        with open(args.model, "rb") as fh:
            hyper = nn.load_model(fh.read()).hyper
    report = vf.evaluate(records, pairs, scheme=args.scheme, hyper=hyper)
    header = "backbone,fusion,hef,scheme,pairs,errors,accuracy,mean_abs_llr"
    lines = [header]
    for row in report.rows:
        lines.append(
            f"{row.backbone},{row.fusion},{row.hef},{row.scheme},"
            f"{row.pairs},{row.errors},{row.accuracy:.6f},{row.mean_abs_llr:.6f}"
        )
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out is not None:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "preprocess": _cmd_preprocess,
    "pairs": _cmd_pairs,
    "train": _cmd_train,
    "verify": _cmd_verify,
    "evaluate": _cmd_evaluate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "extract":
            if args.feature == "gsc":
                return _cmd_extract_gsc(args)
            return _cmd_extract_sift(args)
        return _COMMANDS[args.command](args)
    except (VerifyError, OSError, ValueError) as e:
        print(f"handverify: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
