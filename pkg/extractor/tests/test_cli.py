import json
import subprocess
import sys


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "embed_extract.cli", *args],
        capture_output=True,
        text=True,
    )


def test_sequence_extraction_via_cli(token_file, tmp_path):
    dataset, _ = token_file
    out = tmp_path / "out"
    result = run_cli(
        "--model", "random-bert:layers=1,hidden=16,heads=2,seed=1",
        "--dataset", dataset, "--mode", "sequence-suffix",
        "--out-dir", str(out), "--vocab-size", "12",
    )
    assert result.returncode == 0, result.stderr
    manifest = json.load(open(out / "manifest.json"))
    assert manifest["rows"] == 4
    assert len(manifest["files"]) == 4


def test_model_load_failure_exits_nonzero(token_file, tmp_path):
    dataset, _ = token_file
    result = run_cli(
        "--model", "hf:/nonexistent/checkpoint",
        "--dataset", dataset, "--mode", "sequence-suffix",
        "--out-dir", str(tmp_path / "out"),
    )
    assert result.returncode != 0
    assert "model load failure" in result.stderr


def test_unknown_model_id_exits_nonzero(token_file, tmp_path):
    dataset, _ = token_file
    result = run_cli(
        "--model", "mystery-model",
        "--dataset", dataset, "--mode", "sequence-suffix",
        "--out-dir", str(tmp_path / "out"),
    )
    assert result.returncode != 0


def test_missing_dataset_is_data_error(tmp_path):
    result = run_cli(
        "--model", "random-bert:seed=1",
        "--dataset", str(tmp_path / "missing.txt"),
        "--mode", "sequence-suffix", "--out-dir", str(tmp_path / "out"),
    )
    assert result.returncode == 3


def test_patch_extraction_via_cli(image_file, tmp_path):
    dataset, _ = image_file
    out = tmp_path / "out"
    result = run_cli(
        "--model", "random-mae:layers=1,hidden=16,heads=2,seed=0",
        "--dataset", dataset, "--mode", "patch",
        "--patch-size", "1", "--height", "2", "--width", "2",
        "--pixel-card", "2", "--out-dir", str(out),
    )
    assert result.returncode == 0, result.stderr
    manifest = json.load(open(out / "manifest.json"))
    assert len(manifest["files"]) == 4
