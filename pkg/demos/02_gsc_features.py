"""512-bit gradient/structural/concavity vectors on a few samples.

Two samples of the same writer should disagree on fewer bits than two
samples of different writers; the L1 distance over the bit families is
the human-engineered half of the verifier.
"""

from handverify.corpus import render_sample, writer_style
from handverify.gsc import extract_gsc, gsc_l1_diff
from handverify.imaging import binarize_otsu, preprocess


def bits_for(corpus_seed, writer_id, sample_seed):
    page = render_sample(writer_style(corpus_seed, writer_id), sample_seed)
    return extract_gsc(binarize_otsu(preprocess(page)))


a0 = bits_for(11, 0, 0)
a1 = bits_for(11, 0, 1)
b0 = bits_for(11, 1, 0)

print(f"vector length {a0.size} "
      f"(gradient 192, structural 192, concavity 128)")
print(f"set bits: writer0/s0 {int(a0.sum())}, writer0/s1 {int(a1.sum())}, "
      f"writer1/s0 {int(b0.sum())}")

# family-by-family disagreement (bit vectors, so L1 is just a mismatch count)
names = [("gradient", 0, 192), ("structural", 192, 384), ("concavity", 384, 512)]
for name, lo, hi in names:
    intra = int((a0[lo:hi] != a1[lo:hi]).sum())
    inter = int((a0[lo:hi] != b0[lo:hi]).sum())
    print(f"{name:>10}: same-writer bits differ {intra:3d}, "
          f"cross-writer {inter:3d}")

intra = int(gsc_l1_diff(a0, a1).sum())
inter = int(gsc_l1_diff(a0, b0).sum())
print(f"total disagreement: same writer {intra}, different writers {inter}")
