"""End-to-end: synthesize a small corpus, train a verifier, score pairs.

Kept deliberately small so it finishes in about a minute; the full
experiment sizes live in the test suite. Every step is seeded, so the
numbers below reproduce exactly.
"""

import os

from handverify import corpus as cp
from handverify import verifier as vf
from handverify.imaging import load_pgm, preprocess, save_pgm

OUT = os.path.join(os.path.dirname(__file__), "out", "pipeline")
RAW = os.path.join(OUT, "raw")
PREP = os.path.join(OUT, "prep")

# 1. synthesize: 8 writers, 6 samples each
rows = cp.generate_corpus(8, 6, seed=21, out_dir=RAW)
print(f"rendered {len(rows)} samples into {RAW}")

# 2. preprocess every page to the 64x64 network input
os.makedirs(PREP, exist_ok=True)
for row in rows:
    img = preprocess(load_pgm(os.path.join(RAW, row.path)))
    save_pgm(os.path.join(PREP, row.path), img)

# 3. split writers into seen train/test and draw balanced pairs
part = cp.partition(rows, "seen", test_fraction=0.34, seed=3)
train_pairs = cp.make_pairs(part.train, 48, seed=3)
test_pairs = cp.make_pairs(part.test, 16, seed=4)
print(f"seen split: {len(part.train)} train / {len(part.test)} test samples, "
      f"{len(train_pairs)} train / {len(test_pairs)} test pairs")

# 4. train the convolutional two-channel model, difference fusion
config = vf.BranchConfig(backbone="cnn", fusion="diff")
params, history = vf.train(
    config, train_pairs, root=PREP, epochs=10, batch=16, seed=3
)
print(f"cross entropy epoch 1 {history[0].cce:.4f} "
      f"-> epoch {len(history)} {history[-1].cce:.4f}")

# 5. score the held-out pairs; positive LLR reads "same writer"
records = vf.verify_batch(params, config, test_pairs, root=PREP)
for rec in records[:5]:
    print(f"  {rec.path_a} vs {rec.path_b}: llr {rec.llr:+.3f} "
          f"-> {'same' if rec.prediction else 'different'}")

report = vf.evaluate(records, test_pairs, scheme="seen", hyper=params.hyper)
row = report.rows[0]
print(f"accuracy {row.accuracy:.3f} on {row.pairs} pairs, "
      f"mean |llr| {row.mean_abs_llr:.3f}")
