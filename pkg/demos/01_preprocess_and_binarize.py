"""Render one handwriting sample, squeeze it to 64x64, and binarize it.

Walks the imaging path every other stage depends on: margin trim, pad to
square, box-filter downscale, and Otsu thresholding.
"""

import os

import numpy as np

from handverify.corpus import render_sample, writer_style
from handverify.imaging import binarize_otsu, otsu_threshold, preprocess, save_pgm

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

# a full-page sample: 320x192, white background, anti-aliased ink
style = writer_style(corpus_seed=11, writer_id=0)
page = render_sample(style, sample_seed=0)
print(f"writer 0: slant {style.slant:+.1f} deg, stroke {style.stroke_width:.2f} px")
print(f"raw page {page.shape[1]}x{page.shape[0]}, "
      f"ink pixels {(page < 128).sum()}")
save_pgm(os.path.join(OUT, "raw_page.pgm"), page)

# preprocess: trim white margins, pad to square, average down to 64x64
small = preprocess(page)
print(f"preprocessed {small.shape[1]}x{small.shape[0]}, "
      f"gray range {small.min()}..{small.max()}")
save_pgm(os.path.join(OUT, "preprocessed.pgm"), small)

# Otsu picks the threshold maximizing between-class variance
t = otsu_threshold(small)
mask = binarize_otsu(small)
frac = mask.mean()
print(f"otsu threshold {t}, ink fraction {frac:.3f}")

# the mask is boolean; render it back to a viewable image
save_pgm(os.path.join(OUT, "ink_mask.pgm"),
         np.where(mask, 0, 255).astype(np.uint8))
print(f"wrote raw_page.pgm, preprocessed.pgm, ink_mask.pgm to {OUT}")
