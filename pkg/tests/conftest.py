import numpy as np
import pytest

from handverify import corpus, imaging


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """6 writers x 4 samples rendered once, raw and preprocessed."""
    root = tmp_path_factory.mktemp("corpus")
    raw = root / "raw"
    raw.mkdir()
    rows = corpus.generate_corpus(6, 4, 11, str(raw))
    prep = root / "prep"
    prep.mkdir()
    prep_rows = []
    for row in rows:
        img = imaging.load_pgm(str(raw / row.path))
        imaging.save_pgm(str(prep / row.path), imaging.preprocess(img))
        prep_rows.append(row)
    with open(prep / "manifest.csv", "w") as fh:
        corpus.write_manifest(fh, prep_rows)
    return {"raw": str(raw), "prep": str(prep), "rows": prep_rows}


@pytest.fixture(scope="session")
def prep_images(small_corpus):
    """The preprocessed 64x64 images keyed by manifest path."""
    out = {}
    for row in small_corpus["rows"]:
        out[row.path] = imaging.load_pgm(f"{small_corpus['prep']}/{row.path}")
    return out
