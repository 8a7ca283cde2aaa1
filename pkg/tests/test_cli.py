import json
import os
import subprocess
import sys

import numpy as np
import pytest

from advmtl import cli
from advmtl import models as M


SYNTH_SPEC = """
tasks = 2
shared_tokens = 24
private_tokens = 6
filler_tokens = 12
sentences_per_task = 80
unlabeled_per_task = 10
min_len = 4
max_len = 6
seed = 11
"""


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "synth.cfg"
    spec.write_text(SYNTH_SPEC)
    out = root / "corpus"
    assert cli.main(["synth", "--spec", str(spec), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = cli.main(["train", "--scheme", "asp", "--data", str(corpus_dir),
                   "--out", str(out), "--seed", "7", "--max-epochs", "2",
                   "--patience", "2", "--hidden-size", "6", "--embed-size", "6"])
    assert rc == 0
    return out


class TestSynth:
    def test_creates_task_directories(self, corpus_dir):
        tasks = sorted(d for d in os.listdir(corpus_dir)
                       if os.path.isdir(corpus_dir / d))
        assert tasks == ["task00", "task01"]
        for t in tasks:
            for fname in ("train.tsv", "dev.tsv", "test.tsv", "unlabeled.tsv"):
                assert (corpus_dir / t / fname).is_file()
        assert (corpus_dir / "provenance.tsv").is_file()
        assert (corpus_dir / "manifest.json").is_file()

    def test_same_spec_identical_files(self, corpus_dir, tmp_path):
        spec = tmp_path / "synth.cfg"
        spec.write_text(SYNTH_SPEC)
        out = tmp_path / "again"
        assert cli.main(["synth", "--spec", str(spec), "--out", str(out)]) == 0
        for t in ("task00", "task01"):
            for fname in ("train.tsv", "dev.tsv", "test.tsv"):
                assert (out / t / fname).read_bytes() == \
                    (corpus_dir / t / fname).read_bytes()

    def test_invalid_spec_exits_3(self, tmp_path):
        spec = tmp_path / "bad.cfg"
        spec.write_text("tasks = 1\n")
        assert cli.main(["synth", "--spec", str(spec), "--out",
                         str(tmp_path / "x")]) == 3

    def test_unknown_key_exits_3(self, tmp_path):
        spec = tmp_path / "bad.cfg"
        spec.write_text("tasks = 2\nbananas = 4\n")
        assert cli.main(["synth", "--spec", str(spec), "--out",
                         str(tmp_path / "x")]) == 3


class TestTrain:
    def test_artifacts_written(self, trained_dir):
        for fname in ("checkpoint.bin", "history.csv", "manifest.json",
                      "config.resolved.cfg"):
            assert (trained_dir / fname).is_file()
        header = (trained_dir / "history.csv").read_text().splitlines()[0]
        assert header == "epoch,task,train_loss,dev_error,disc_acc,l_adv,l_diff"

    def test_lambda_meaningless_for_fs_exits_3(self, corpus_dir, tmp_path, capsys):
        rc = cli.main(["train", "--scheme", "fs", "--lambda", "0.05",
                       "--data", str(corpus_dir), "--out", str(tmp_path / "x")])
        assert rc == 3
        assert "lambda" in capsys.readouterr().err

    def test_gamma_meaningless_for_sp_exits_3(self, corpus_dir, tmp_path):
        rc = cli.main(["train", "--scheme", "sp", "--gamma", "0.01",
                       "--data", str(corpus_dir), "--out", str(tmp_path / "x")])
        assert rc == 3

    def test_missing_data_exits_2(self, tmp_path):
        rc = cli.main(["train", "--scheme", "fs", "--data",
                       str(tmp_path / "nowhere"), "--out", str(tmp_path / "x")])
        assert rc == 2

    def test_same_seed_identical_history(self, corpus_dir, tmp_path):
        outs = []
        for run in ("r1", "r2"):
            out = tmp_path / run
            rc = cli.main(["train", "--scheme", "sp", "--data", str(corpus_dir),
                           "--out", str(out), "--seed", "7", "--max-epochs", "2",
                           "--patience", "2", "--hidden-size", "5",
                           "--embed-size", "5"])
            assert rc == 0
            outs.append(out)
        assert (outs[0] / "history.csv").read_bytes() == \
            (outs[1] / "history.csv").read_bytes()
        assert (outs[0] / "checkpoint.bin").read_bytes() == \
            (outs[1] / "checkpoint.bin").read_bytes()

    def test_env_override_changes_seed(self, corpus_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("ADVMTL_SEED", "99")
        out = tmp_path / "env"
        rc = cli.main(["train", "--scheme", "fs", "--data", str(corpus_dir),
                       "--out", str(out), "--max-epochs", "1", "--patience", "1",
                       "--hidden-size", "4", "--embed-size", "4"])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 99

    def test_resolved_config_replays_bitwise(self, corpus_dir, tmp_path):
        first = tmp_path / "first"
        rc = cli.main(["train", "--scheme", "sp", "--data", str(corpus_dir),
                       "--out", str(first), "--seed", "3", "--max-epochs", "1",
                       "--patience", "1", "--hidden-size", "4", "--embed-size", "4"])
        assert rc == 0
        replay = tmp_path / "replay"
        rc = cli.main(["train", "--config", str(first / "config.resolved.cfg"),
                       "--data", str(corpus_dir), "--out", str(replay)])
        assert rc == 0
        assert (first / "history.csv").read_bytes() == (replay / "history.csv").read_bytes()
        assert (first / "checkpoint.bin").read_bytes() == \
            (replay / "checkpoint.bin").read_bytes()

    def test_grid_mode_writes_grid_csv(self, corpus_dir, tmp_path):
        out = tmp_path / "grid"
        rc = cli.main(["train", "--scheme", "sp", "--data", str(corpus_dir),
                       "--out", str(out), "--seed", "1", "--max-epochs", "1",
                       "--patience", "1", "--hidden-size", "4", "--embed-size", "4",
                       "--grid", "learning_rate=0.3,0.05"])
        assert rc == 0
        lines = (out / "grid.csv").read_text().splitlines()
        assert len(lines) == 3 and lines[0].startswith("cell,mean_dev_error")


class TestEval:
    def test_table_shape_and_avg(self, corpus_dir, trained_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        rc = cli.main(["eval", "--checkpoint", str(trained_dir / "checkpoint.bin"),
                       "--data", str(corpus_dir), "--split", "test",
                       "--out", str(out)])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "task,error"
        rows = [ln.split(",") for ln in lines[1:]]
        assert [r[0] for r in rows] == ["task00", "task01", "AVG"]
        errs = [float(r[1]) for r in rows]
        assert errs[2] == pytest.approx(np.mean(errs[:2]))
        assert (out / "eval_test.csv").is_file()

    def test_mismatched_data_exits_4(self, trained_dir, tmp_path):
        root = tmp_path / "other"
        tdir = root / "different_task"
        tdir.mkdir(parents=True)
        lines = [f"{i % 2}\tw{i} w{(i * 3) % 7}" for i in range(20)]
        (tdir / "labeled.tsv").write_text("\n".join(lines) + "\n")
        rc = cli.main(["eval", "--checkpoint", str(trained_dir / "checkpoint.bin"),
                       "--data", str(root)])
        assert rc == 4

    def test_missing_checkpoint_exits_2(self, corpus_dir, tmp_path):
        rc = cli.main(["eval", "--checkpoint", str(tmp_path / "none.bin"),
                       "--data", str(corpus_dir)])
        assert rc == 2


class TestTransfer:
    def test_all_targets_table(self, corpus_dir, trained_dir, tmp_path, capsys):
        out = tmp_path / "tr"
        rc = cli.main(["transfer", "--checkpoint", str(trained_dir / "checkpoint.bin"),
                       "--data", str(corpus_dir), "--all-targets", "--mode", "bc",
                       "--out", str(out), "--max-epochs", "1", "--patience", "1"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "task,error"
        assert len(lines) == 4  # 2 targets + AVG
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "transfer"
        ckpt = out / "transfer_bc_task00.bin"
        assert ckpt.is_file()
        params, config, extra = M.load_checkpoint(ckpt)
        assert extra["transfer_mode"] == "bc"
        assert extra["head_input_size"] == 2 * config.hidden_size
        assert extra["frozen_sha256"]

    def test_frozen_layer_hash_stable(self, corpus_dir, trained_dir, tmp_path):
        import hashlib
        out = tmp_path / "tr2"
        rc = cli.main(["transfer", "--checkpoint", str(trained_dir / "checkpoint.bin"),
                       "--data", str(corpus_dir), "--target", "task00",
                       "--mode", "sc", "--out", str(out), "--max-epochs", "1",
                       "--patience", "1"])
        assert rc == 0
        src, _, _ = M.load_checkpoint(trained_dir / "checkpoint.bin")
        want = hashlib.sha256(src.shared.W.tobytes() + src.shared.b.tobytes()).hexdigest()
        params, _, extra = M.load_checkpoint(out / "transfer_sc_task00.bin")
        got = hashlib.sha256(params.shared.W.tobytes() + params.shared.b.tobytes()).hexdigest()
        assert got == want == extra["frozen_sha256"]

    def test_unknown_target_exits_4(self, corpus_dir, trained_dir, tmp_path):
        rc = cli.main(["transfer", "--checkpoint", str(trained_dir / "checkpoint.bin"),
                       "--data", str(corpus_dir), "--target", "nope",
                       "--mode", "sc", "--out", str(tmp_path / "x")])
        assert rc == 4


class TestDumpActivations:
    def test_rows_columns_and_consistency(self, corpus_dir, trained_dir, tmp_path):
        sentences = tmp_path / "sents.txt"
        sentences.write_text("sh000 sh001 pv00_00\nsh002 sh003\n")
        out = tmp_path / "dump"
        rc = cli.main(["dump-activations", "--checkpoint",
                       str(trained_dir / "checkpoint.bin"), "--data", str(corpus_dir),
                       "--sentences", str(sentences), "--task", "task00",
                       "--out", str(out)])
        assert rc == 0
        lines = (out / "activations.csv").read_text().splitlines()
        header = lines[0].split(",")
        d = 6
        assert header[:3] == ["sentence", "t", "token"]
        assert sum(c.startswith("shared_") for c in header) == d
        assert sum(c.startswith("private_") for c in header) == d
        assert sum(c.startswith("prob_") for c in header) == 2
        assert len(lines) - 1 == 3 + 2  # T rows per sentence

        # final-row probabilities equal a fresh forward pass for that sentence
        from advmtl import data as D, train as T
        from advmtl.autodiff import Tape
        params, config, _ = M.load_checkpoint(trained_dir / "checkpoint.bin")
        datasets, vocab = D.load_corpus(corpus_dir)
        ids = vocab.encode(["sh000", "sh001", "pv00_00"])
        tape = Tape()
        res = M.forward(tape, params.bind(tape), config, ids, 0, want_disc=False)
        last = lines[3].split(",")
        got = [float(v) for v in last[-2:]]
        np.testing.assert_allclose(got, res.class_probs.value, rtol=0, atol=1e-12)


def test_console_entry_point(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("tasks = 1\n")
    rc = subprocess.run([sys.executable, "-m", "advmtl", "synth", "--spec",
                         str(bad), "--out", str(tmp_path / "x")],
                        capture_output=True)
    assert rc.returncode == 3
