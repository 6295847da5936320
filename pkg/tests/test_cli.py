import json
import os
import subprocess
import sys

import numpy as np
import pytest

from multikg.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from multikg.models import read_binary
from multikg.synthetic import write_single_kg

FAST = ["--dim", "8", "--epochs", "4", "-o", "train.batch_size=64"]


@pytest.fixture
def run_dir(tmp_path, single_kg_dir):
    out = tmp_path / "run1"
    assert main(["train", "--data", single_kg_dir, "--out", str(out)] + FAST) == EXIT_OK
    return out


def test_train_writes_run_directory(run_dir, capsys):
    names = set(os.listdir(run_dir))
    assert {"config.json", "train.log.jsonl", "report.json", "checkpoint.bin", "embeddings.tsv",
            "embeddings.bin"} <= names
    rep = json.loads((run_dir / "report.json").read_text())
    assert rep["task"] == "lp" and rep["filter"] == "train"
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["train.dim"] == 8 and cfg["train.batch_size"] == 64


def test_rerun_from_config_is_bitwise_identical(run_dir, tmp_path):
    out2 = tmp_path / "run2"
    assert main(["train", "-c", str(run_dir / "config.json"), "--out", str(out2)]) == EXIT_OK
    assert (out2 / "report.json").read_bytes() == (run_dir / "report.json").read_bytes()
    assert (out2 / "checkpoint.bin").read_bytes() == (run_dir / "checkpoint.bin").read_bytes()


def test_eval_regenerates_report(run_dir, tmp_path, capsys):
    out = tmp_path / "eval.json"
    assert main(["eval", "--checkpoint", str(run_dir / "checkpoint.bin"), "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text()) == json.loads((run_dir / "report.json").read_text())
    assert main(["eval", "--checkpoint", str(run_dir / "checkpoint.bin"), "--filter", "train+valid+test"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["filter"] == "train+valid+test"


def test_export(run_dir, tmp_path, capsys):
    out = tmp_path / "emb"
    assert main(["export", "--checkpoint", str(run_dir / "checkpoint.bin"), "--out", str(out),
                 "--format", "bin"]) == EXIT_OK
    E = read_binary(out / "embeddings.bin")
    np.testing.assert_array_equal(E, read_binary(run_dir / "embeddings.bin"))
    assert capsys.readouterr().out.strip().endswith("embeddings.bin")


def test_merge(multisource_dir, tmp_path, capsys):
    out = tmp_path / "merged"
    assert main(["merge", "--data", multisource_dir, "--out", str(out)]) == EXIT_OK
    stats = json.loads(capsys.readouterr().out)
    assert len((out / "triples.tsv").read_text().splitlines()) == stats["triples"]


def test_compare_multisource_report(multisource_dir, tmp_path, capsys):
    out = tmp_path / "ms-run"
    argv = ["train", "--task", "multi_lp", "--data", multisource_dir, "--out", str(out)] + FAST
    assert main(argv) == EXIT_OK
    capsys.readouterr()
    assert main(["compare", str(out / "report.json"), "--labels", "TransE"]) == EXIT_OK
    table = capsys.readouterr().out.splitlines()
    assert table[0].split() == ["run", "Hits@1", "Hits@10", "MRR", "MR"]
    assert [line.split()[1:3] for line in table[1:]] == [["joint", "KG1"], ["separate", "KG1"],
                                                          ["joint", "KG2"], ["separate", "KG2"]]


def test_compare_errors(tmp_path):
    bad = tmp_path / "r.json"
    bad.write_text("{}")
    assert main(["compare", str(bad)]) == EXIT_CONFIG
    assert main(["compare", str(tmp_path / "none.json")]) == EXIT_CONFIG
    bad.write_text("not json")
    assert main(["compare", str(bad)]) == EXIT_CONFIG
    assert main(["compare", str(bad), "--labels", "a,b"]) == EXIT_CONFIG


@pytest.mark.parametrize("argv,needle", [
    (["train", "--bogus"], "unrecognized"),
    (["frobnicate"], "invalid choice"),
    ([], "required"),
    (["train", "--data", "/no/such/dir"], "/no/such/dir"),
    (["train"], "no dataset"),
    (["train", "--data", ".", "-o", "train.dimm=3"], "train.dimm"),
    (["train", "--data", ".", "--task", "ea", "--model", "rescal-et"], "entity-typing"),
    (["eval", "--checkpoint", "/no/ckpt.bin"], "/no/ckpt.bin"),
    (["merge", "--data", "/no/such/dir", "--out", "x"], "/no/such/dir"),
])
def test_config_errors_exit_one(argv, needle, tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == EXIT_CONFIG
    assert needle in capsys.readouterr().err
    assert os.listdir(tmp_path) == []


def test_corrupt_checkpoint_is_a_config_error(tmp_path, capsys):
    p = tmp_path / "c.bin"
    p.write_bytes(b"garbage")
    assert main(["export", "--checkpoint", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_runtime_failure_exits_two_and_writes_nothing(tmp_path, capsys):
    # no test split: training succeeds, evaluation has nothing to rank
    d = write_single_kg(tmp_path / "kg", fracs=(0.1, 0.0))
    runs = tmp_path / "runs"
    runs.mkdir()
    assert main(["train", "--data", d, "--out", str(runs / "r")] + FAST) == EXIT_RUNTIME
    assert "runtime error" in capsys.readouterr().err
    assert os.listdir(runs) == []


def test_existing_run_directory_refused(run_dir, single_kg_dir, capsys):
    before = sorted(os.listdir(run_dir))
    assert main(["train", "--data", single_kg_dir, "--out", str(run_dir)] + FAST) == EXIT_CONFIG
    assert sorted(os.listdir(run_dir)) == before


def test_default_out_dir(single_kg_dir, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["train", "--data", single_kg_dir] + FAST) == EXIT_OK
    (run,) = os.listdir(tmp_path / "runs")
    assert run.count("-") == 2 and len(run.rsplit("-", 1)[1]) == 12


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "multikg", "compare", str(tmp_path / "missing.json")],
                       capture_output=True, text=True)
    assert r.returncode == EXIT_CONFIG and "cannot read report" in r.stderr
