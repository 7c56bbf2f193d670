"""Command-line surface: dispatch, exit codes, end-to-end pipeline."""

import os
import subprocess
import sys

import pytest

from handverify import cli


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_help_exits_zero(capsys):
    assert cli.main(["--help"]) == 0
    out = capsys.readouterr().out
    assert "synth" in out and "verify" in out


def test_usage_errors_exit_one(capsys):
    assert cli.main(["synth", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert cli.main(["frobnicate"]) == 1
    assert cli.main([]) == 1
    assert cli.main(["extract"]) == 1


def test_data_errors_exit_two(tmp_path, capsys):
    missing = str(tmp_path / "nope.csv")
    model = str(tmp_path / "m.hvnn")
    assert (
        cli.main(["verify", "--model", model, "--pairs", missing, "--out", "o"]) == 2
    )
    assert "handverify:" in capsys.readouterr().err
    bad = tmp_path / "manifest.csv"
    bad.write_text("wrong,header,row\n")
    assert cli.main(["preprocess", "--manifest", str(bad), "--out", "x"]) == 2


def test_pipeline_end_to_end(tmp_path, capsys):
    raw = str(tmp_path / "raw")
    prep = str(tmp_path / "prep")
    run = cli.main

    assert run(["synth", "--writers", "4", "--samples", "4",
                "--seed", "5", "--out", raw]) == 0
    assert len([f for f in os.listdir(raw) if f.endswith(".pgm")]) == 16

    assert run(["preprocess", "--manifest", f"{raw}/manifest.csv",
                "--out", prep]) == 0
    manifest = f"{prep}/manifest.csv"

    gsc_a = str(tmp_path / "gsc_a.csv")
    gsc_b = str(tmp_path / "gsc_b.csv")
    assert run(["extract", "gsc", "--manifest", manifest, "--out", gsc_a]) == 0
    assert run(["extract", "gsc", "--manifest", manifest, "--out", gsc_b,
                "--jobs", "2"]) == 0
    assert read_bytes(gsc_a) == read_bytes(gsc_b)

    train_csv = str(tmp_path / "train.csv")
    test_csv = str(tmp_path / "test.csv")
    assert run(["pairs", "--manifest", manifest, "--scheme", "seen",
                "--seed", "3", "--test-fraction", "0.5",
                "--train-count", "8", "--test-count", "8",
                "--train-out", train_csv, "--test-out", test_csv]) == 0
    assert "8 train / 8 test pairs" in capsys.readouterr().out

    model = str(tmp_path / "model.hvnn")
    assert run(["train", "--backbone", "cnn", "--fusion", "diff",
                "--pairs", train_csv, "--epochs", "1", "--batch", "4",
                "--seed", "3", "--root", prep, "--model", model]) == 0
    assert os.path.exists(model)
    assert "epoch   1" in capsys.readouterr().out

    out_a = str(tmp_path / "scores_a.csv")
    out_b = str(tmp_path / "scores_b.csv")
    assert run(["verify", "--model", model, "--pairs", test_csv,
                "--out", out_a, "--root", prep]) == 0
    assert run(["verify", "--model", model, "--pairs", test_csv,
                "--out", out_b, "--root", prep, "--jobs", "2"]) == 0
    assert read_bytes(out_a) == read_bytes(out_b)
    # idempotent rerun, byte for byte
    assert run(["verify", "--model", model, "--pairs", test_csv,
                "--out", out_b, "--root", prep]) == 0
    assert read_bytes(out_a) == read_bytes(out_b)

    report = str(tmp_path / "report.csv")
    capsys.readouterr()
    assert run(["evaluate", "--results", out_a, "--pairs", test_csv,
                "--scheme", "seen", "--model", model, "--out", report]) == 0
    text = capsys.readouterr().out
    header = "backbone,fusion,hef,scheme,pairs,errors,accuracy,mean_abs_llr"
    assert text.splitlines()[0] == header
    row = text.splitlines()[1].split(",")
    assert row[0] == "cnn" and row[3] == "seen" and row[4] == "8"
    assert 0.0 <= float(row[6]) <= 1.0
    with open(report) as fh:
        assert fh.read() == text


def test_pipeline_sift_cache(tmp_path, capsys):
    raw = str(tmp_path / "raw")
    prep = str(tmp_path / "prep")
    run = cli.main
    assert run(["synth", "--writers", "2", "--samples", "2",
                "--seed", "9", "--out", raw]) == 0
    assert run(["preprocess", "--manifest", f"{raw}/manifest.csv",
                "--out", prep]) == 0
    pairs_csv = str(tmp_path / "pairs.csv")
    with open(pairs_csv, "w") as fh:
        fh.write("path_a,path_b,label\n")
        fh.write("w000_s00.pgm,w000_s01.pgm,1\n")
        fh.write("w000_s00.pgm,w001_s01.pgm,0\n")
    cache = str(tmp_path / "sift.csv")
    assert run(["extract", "sift", "--pairs", pairs_csv, "--out", cache,
                "--n", "4", "--root", prep]) == 0
    model = str(tmp_path / "m.hvnn")
    assert run(["train", "--backbone", "cnn", "--fusion", "diff",
                "--hef", "sift", "--sift-n", "4", "--pairs", pairs_csv,
                "--epochs", "1", "--batch", "2", "--seed", "2",
                "--root", prep, "--sift-cache", cache, "--model", model]) == 0
    out_csv = str(tmp_path / "scores.csv")
    assert run(["verify", "--model", model, "--pairs", pairs_csv,
                "--out", out_csv, "--root", prep, "--sift-cache", cache]) == 0
    with open(out_csv) as fh:
        assert len(fh.read().splitlines()) == 3
    capsys.readouterr()


def test_pairs_impossible_count_exits_two(tmp_path, capsys):
    raw = str(tmp_path / "raw")
    assert cli.main(["synth", "--writers", "2", "--samples", "2",
                     "--seed", "4", "--out", raw]) == 0
    code = cli.main(["pairs", "--manifest", f"{raw}/manifest.csv",
                     "--scheme", "shuffled", "--seed", "0",
                     "--test-fraction", "0.5",
                     "--train-count", "500", "--test-count", "1",
                     "--train-out", str(tmp_path / "t.csv"),
                     "--test-out", str(tmp_path / "u.csv")])
    assert code == 2
    assert "handverify:" in capsys.readouterr().err


@pytest.mark.parametrize("argv,code", [(["--help"], 0), (["--bogus"], 1)])
def test_module_entry_point(argv, code):
    proc = subprocess.run(
        [sys.executable, "-m", "handverify.cli", *argv],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == code
