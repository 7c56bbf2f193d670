"""Handwriting verification: are two word images from the same writer?

Pipeline pieces, each usable on its own:

- imaging: PGM IO, 64x64 preprocessing, Otsu binarization
- gsc: 512-bit gradient/structural/concavity vectors on a 4x4 grid
- keypoints: scale-space keypoint detection, 128-d descriptors, matching
- neuralnet: small numpy network engine (forward/backward, Adam, model file)
- corpus: synthetic multi-writer word rendering, partitions, pair manifests
- verifier: two-channel models, feature fusion, training, LLR scoring
"""

from .corpus import (
    ManifestRow,
    PairRow,
    Partition,
    generate_corpus,
    make_pairs,
    partition,
    read_manifest,
    read_pairs,
    render_sample,
    write_manifest,
    write_pairs,
    writer_style,
)
from .errors import (
    ContractError,
    DataError,
    DimensionError,
    FormatError,
    ShapeError,
    TrainingDiverged,
    VerifyError,
)
from .gsc import extract_gsc, gsc_l1_diff
from .imaging import (
    binarize_fixed,
    binarize_otsu,
    load_pgm,
    otsu_threshold,
    preprocess,
    read_pgm,
    save_pgm,
    write_pgm,
)
from .keypoints import (
    detect_and_describe,
    detect_keypoints,
    gaussian_scale_space,
    knn_match,
    sift_pair_features,
)
from .neuralnet import (
    ModelParams,
    adam_step,
    backward,
    forward,
    load_model,
    save_model,
)
from .verifier import (
    BranchConfig,
    VerificationRecord,
    branch_forward,
    build_model,
    compute_llr,
    evaluate,
    fuse,
    train,
    verify_batch,
)

__version__ = "0.1.0"

__all__ = [
    "BranchConfig",
    "ContractError",
    "DataError",
    "DimensionError",
    "FormatError",
    "ManifestRow",
    "ModelParams",
    "PairRow",
    "Partition",
    "ShapeError",
    "TrainingDiverged",
    "VerificationRecord",
    "VerifyError",
    "adam_step",
    "backward",
    "binarize_fixed",
    "binarize_otsu",
    "branch_forward",
    "build_model",
    "compute_llr",
    "detect_and_describe",
    "detect_keypoints",
    "evaluate",
    "extract_gsc",
    "forward",
    "fuse",
    "gaussian_scale_space",
    "generate_corpus",
    "gsc_l1_diff",
    "knn_match",
    "load_model",
    "load_pgm",
    "make_pairs",
    "otsu_threshold",
    "partition",
    "preprocess",
    "read_manifest",
    "read_pairs",
    "read_pgm",
    "render_sample",
    "save_model",
    "save_pgm",
    "sift_pair_features",
    "train",
    "verify_batch",
    "write_manifest",
    "write_pairs",
    "write_pgm",
    "writer_style",
]
