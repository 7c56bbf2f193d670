"""Scale-space keypoints and descriptor matching between two samples.

Runs on the full-resolution renders: the 64x64 verifier inputs are too
coarse for stable keypoints, so the descriptor path works on the page
images directly. Anti-aliased strokes are low contrast, hence the
permissive contrast threshold.
"""

import numpy as np

from handverify.corpus import render_sample, writer_style
from handverify.keypoints import detect_and_describe, knn_match, sift_pair_features

style = writer_style(11, 0)
page_a = render_sample(style, 0)
page_b = render_sample(style, 1)

desc_a, kps_a = detect_and_describe(page_a, contrast_threshold=0.01)
desc_b, kps_b = detect_and_describe(page_b, contrast_threshold=0.01)
print(f"sample 0: {len(kps_a)} keypoints, sample 1: {len(kps_b)}")

octaves = np.bincount([k.octave for k in kps_a])
print("sample 0 keypoints per octave:", [int(v) for v in octaves])
scales = sorted({round(k.scale, 2) for k in kps_a})
print("distinct scales:", scales[:8])

# ratio-test matching, symmetric (cross-checked) variant alongside
matches = knn_match(desc_a, desc_b, ratio=0.75)
mutual = knn_match(desc_a, desc_b, ratio=0.75, cross_check=True)
print(f"ratio-test matches {len(matches)}, cross-checked {len(mutual)}")
if matches:
    d = np.array([m.distance for m in matches])
    print(f"match distance min {d.min():.3f} median {np.median(d):.3f} "
          f"max {d.max():.3f}")

# the fixed-size block the verifier appends to the deep features
block = sift_pair_features(page_a, page_b, n=16, contrast_threshold=0.01)
print(f"pair feature block {block.values.shape}, "
      f"{block.matched_count} real matches, rest zero padding")
