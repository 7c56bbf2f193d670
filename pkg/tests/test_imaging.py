import numpy as np
import pytest

from handverify import imaging
from handverify.errors import DimensionError, FormatError

from oracles import box_downsample_reference, otsu_reference


def test_read_p5_example():
    data = b"P5 2 2 255\n" + bytes([0, 128, 255, 7])
    img = imaging.read_pgm(data)
    assert img.dtype == np.uint8
    assert img.tolist() == [[0, 128], [255, 7]]


def test_read_p2_example():
    img = imaging.read_pgm(b"P2 1 1 255\n42")
    assert img.tolist() == [[42]]


def test_read_rejects_color_magic():
    with pytest.raises(FormatError) as exc:
        imaging.read_pgm(b"P6 2 2 255\n" + bytes(12))
    assert exc.value.offset == 0


def test_read_skips_comments_and_whitespace():
    data = b"P5  # a comment\n 2\t3 # sizes\n255\n" + bytes(6)
    assert imaging.read_pgm(data).shape == (3, 2)
    ascii_data = b"P2 2 2 9\n1 # mid-sample comment\n2\n3 4"
    assert imaging.read_pgm(ascii_data).tolist() == [[1, 2], [3, 4]]


def test_read_maxval_error_offset():
    with pytest.raises(FormatError) as exc:
        imaging.read_pgm(b"P5 2 2 999\n" + bytes(4))
    assert exc.value.offset == 7
    assert "999" in str(exc.value)


def test_read_truncated_payload():
    data = b"P5 2 2 255\n" + bytes(3)
    with pytest.raises(FormatError) as exc:
        imaging.read_pgm(data)
    assert exc.value.offset == len(data)
    assert "truncated" in str(exc.value)


def test_read_p5_sample_above_maxval():
    data = b"P5 2 1 100\n" + bytes([5, 200])
    with pytest.raises(FormatError) as exc:
        imaging.read_pgm(data)
    assert exc.value.offset == 12


def test_read_p2_sample_out_of_range():
    with pytest.raises(FormatError):
        imaging.read_pgm(b"P2 1 2 255\n13 -1")
    with pytest.raises(FormatError):
        imaging.read_pgm(b"P2 1 1 100\n101")


def test_read_non_numeric_header():
    with pytest.raises(FormatError) as exc:
        imaging.read_pgm(b"P5 ab 2 255\n")
    assert exc.value.offset == 3


def test_read_empty_and_bare_header():
    with pytest.raises(FormatError):
        imaging.read_pgm(b"")
    with pytest.raises(FormatError):
        imaging.read_pgm(b"P5 4 4")


def test_write_single_pixel_exact_bytes():
    assert imaging.write_pgm(np.array([[42]], dtype=np.uint8)) == b"P5\n1 1\n255\n*"


def test_write_payload_row_major():
    img = np.array([[0, 128], [255, 7]], dtype=np.uint8)
    data = imaging.write_pgm(img)
    assert data == b"P5\n2 2\n255\n" + bytes([0, 128, 255, 7])


def test_round_trip_random_images():
    rng = np.random.default_rng(4021)
    for _ in range(200):
        h = int(rng.integers(1, 33))
        w = int(rng.integers(1, 33))
        img = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
        again = imaging.read_pgm(imaging.write_pgm(img))
        assert np.array_equal(again, img)


def test_round_trip_ascii_payload():
    rng = np.random.default_rng(77)
    for _ in range(50):
        img = rng.integers(0, 256, size=(5, 4), dtype=np.uint8)
        body = " ".join(str(v) for v in img.reshape(-1))
        data = f"P2 4 5 255\n{body}".encode()
        assert np.array_equal(imaging.read_pgm(data), img)


def test_preprocess_white_fixed_point():
    out = imaging.preprocess(np.full((384, 384), 255, dtype=np.uint8))
    assert out.shape == (64, 64)
    assert np.all(out == 255)
    small = imaging.preprocess(np.full((10, 17), 255, dtype=np.uint8))
    assert np.all(small == 255)


def test_preprocess_stated_margins():
    # 100x80 input: left margin (384-100)//2 = 142, top (384-80)//2 = 152.
    # A lone black pixel at (0, 0) lands at page (152, 142), inside the
    # 6x6 block (25, 23); its mean is (35*255)/36 = 247.9..., half-up 248.
    img = np.full((80, 100), 255, dtype=np.uint8)
    img[0, 0] = 0
    out = imaging.preprocess(img)
    assert out[25, 23] == 248
    assert np.count_nonzero(out != 255) == 1


def test_preprocess_block_mean_example():
    img = np.full((384, 384), 255, dtype=np.uint8)
    img[0:6, 0:6] = 0
    out = imaging.preprocess(img)
    assert out[0, 0] == 0
    assert np.count_nonzero(out == 0) == 1


def test_preprocess_matches_pad_and_box_reference():
    rng = np.random.default_rng(515)
    for _ in range(200):
        canvas, factor = 24, 3
        h = int(rng.integers(1, canvas + 1))
        w = int(rng.integers(1, canvas + 1))
        img = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
        top = (canvas - h) // 2
        left = (canvas - w) // 2
        page = np.pad(
            img,
            ((top, canvas - h - top), (left, canvas - w - left)),
            constant_values=255,
        )
        want = box_downsample_reference(page, factor)
        got = imaging.preprocess(img, canvas=canvas, factor=factor)
        assert np.array_equal(got, want)


def test_preprocess_default_scale_reference():
    rng = np.random.default_rng(516)
    for _ in range(3):
        h = int(rng.integers(40, 120))
        w = int(rng.integers(40, 120))
        img = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
        top = (384 - h) // 2
        left = (384 - w) // 2
        page = np.pad(
            img, ((top, 384 - h - top), (left, 384 - w - left)), constant_values=255
        )
        assert np.array_equal(imaging.preprocess(img), box_downsample_reference(page, 6))


def test_preprocess_oversize_input():
    with pytest.raises(DimensionError):
        imaging.preprocess(np.zeros((385, 10), dtype=np.uint8))
    with pytest.raises(DimensionError):
        imaging.preprocess(np.zeros((10, 385), dtype=np.uint8))


def test_preprocess_bad_canvas():
    img = np.zeros((8, 8), dtype=np.uint8)
    with pytest.raises(DimensionError):
        imaging.preprocess(img, canvas=10, factor=3)
    with pytest.raises(DimensionError):
        imaging.preprocess(img, canvas=0, factor=1)


def test_otsu_matches_exhaustive_scan():
    rng = np.random.default_rng(9218)
    for k in range(200):
        h = int(rng.integers(3, 13))
        w = int(rng.integers(3, 13))
        if k % 3 == 0:
            img = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
        elif k % 3 == 1:
            lo, hi = sorted(rng.integers(0, 256, size=2).tolist())
            img = np.where(rng.random((h, w)) < 0.5, lo, hi).astype(np.uint8)
        else:
            base = int(rng.integers(0, 200))
            img = (base + rng.integers(0, 40, size=(h, w))).astype(np.uint8)
        assert imaging.otsu_threshold(img) == otsu_reference(img)


def test_otsu_matches_scan_full_size():
    rng = np.random.default_rng(9219)
    for _ in range(3):
        img = rng.integers(0, 256, size=(64, 64), dtype=np.uint8)
        assert imaging.otsu_threshold(img) == otsu_reference(img)


def test_otsu_constant_image():
    img = np.full((8, 8), 128, dtype=np.uint8)
    assert imaging.otsu_threshold(img) is None
    assert np.all(imaging.binarize_otsu(img) == 0)


def test_otsu_bimodal_example():
    rng = np.random.default_rng(3)
    img = np.where(rng.random((16, 16)) < 0.5, 10, 240).astype(np.uint8)
    mask = imaging.binarize_otsu(img)
    assert np.array_equal(mask, (img == 10).astype(np.uint8))


def test_otsu_side_by_side_invariance():
    rng = np.random.default_rng(8787)
    for _ in range(200):
        img = rng.integers(0, 256, size=(6, 9), dtype=np.uint8)
        doubled = np.hstack([img, img])
        assert imaging.otsu_threshold(img) == imaging.otsu_threshold(doubled)


def test_binarize_fixed_law():
    rng = np.random.default_rng(551)
    for _ in range(200):
        img = rng.integers(0, 256, size=(7, 5), dtype=np.uint8)
        t = int(rng.integers(0, 256))
        mask = imaging.binarize_fixed(img, t)
        assert np.array_equal(mask, (img <= t).astype(np.uint8))
    with pytest.raises(DimensionError):
        imaging.binarize_fixed(img, 256)
    with pytest.raises(DimensionError):
        imaging.binarize_fixed(img, -1)


def test_as_gray_rejects_bad_inputs():
    with pytest.raises(DimensionError):
        imaging.as_gray(np.zeros((2, 2, 3), dtype=np.uint8))
    with pytest.raises(DimensionError):
        imaging.as_gray(np.zeros((0, 4), dtype=np.uint8))
    with pytest.raises(DimensionError):
        imaging.as_gray(np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(DimensionError):
        imaging.as_gray(np.full((4, 4), 300, dtype=np.int32))


def test_as_binary_rejects_bad_masks():
    with pytest.raises(DimensionError):
        imaging.as_binary(np.full((4, 4), 2, dtype=np.uint8))
    assert imaging.as_binary(np.ones((3, 3), dtype=bool)).dtype == np.uint8


def test_save_and_load_pgm(tmp_path):
    img = np.arange(64, dtype=np.uint8).reshape(8, 8)
    path = tmp_path / "img.pgm"
    imaging.save_pgm(str(path), img)
    assert np.array_equal(imaging.load_pgm(str(path)), img)
