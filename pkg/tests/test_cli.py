"""Command-line surface: subcommands, exit codes, artifacts, reproducibility."""

import json

import numpy as np
import pytest

from bcfusion.cli import run_command

SPEC_TEXT = """\
# tiny detection corpus
n_samples = 8
t_raw = 15
fps = 5
kind = redundant
noise = 0.05
seed = 9
task = detection
face_dim = 6
pose_dim = 4
val_frac = 0.25
"""

CONFIG_TEXT = """\
face_dim = 7
pose_dim = 5
d_face = 8
d_pose = 8
d_fused_face = 8
d_fused_pose = 2
d_cross = 8
ff_hidden = 8
epochs = 2
batch_size = 4
learning_rate = 0.01
"""


@pytest.fixture()
def corpus_dir(tmp_path):
    spec = tmp_path / "spec.cfg"
    spec.write_text(SPEC_TEXT)
    out = tmp_path / "corpus"
    assert run_command(["synth", "--spec", str(spec), "--out", str(out)]) == 0
    return out


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text(CONFIG_TEXT)
    return path


def train_args(corpus_dir, config_file, out_dir, **extra):
    args = ["train", "--manifest", str(corpus_dir / "manifest.csv"),
            "--topology", extra.pop("topology", "one_stream"), "--task", "detection",
            "--config", str(config_file), "--out", str(out_dir), "--seed", "0"]
    for key, value in extra.items():
        args += [f"--{key}", str(value)]
    return args


class TestSynth:
    def test_writes_manifest_and_samples(self, corpus_dir, capsys):
        assert (corpus_dir / "manifest.csv").exists()
        assert len(list(corpus_dir.glob("*_face.csv"))) == 8

    def test_seed_flag_overrides_spec(self, tmp_path):
        spec = tmp_path / "spec.cfg"
        spec.write_text(SPEC_TEXT)
        run_command(["synth", "--spec", str(spec), "--out", str(tmp_path / "a")])
        run_command(["synth", "--spec", str(spec), "--out", str(tmp_path / "b"),
                     "--seed", "1234"])
        a = (tmp_path / "a" / "manifest.csv").read_text()
        b = (tmp_path / "b" / "manifest.csv").read_text()
        assert a != b

    def test_missing_spec_file_is_io_error(self, tmp_path):
        assert run_command(["synth", "--spec", str(tmp_path / "nope.cfg"),
                            "--out", str(tmp_path / "o")]) == 2

    def test_invalid_spec_is_validation_error(self, tmp_path):
        spec = tmp_path / "spec.cfg"
        spec.write_text("n_samples = 3\nkind = xor-cross-modal\n")
        assert run_command(["synth", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 1


class TestTrain:
    def test_writes_artifacts_and_json_stdout(self, corpus_dir, config_file, tmp_path, capsys):
        out = tmp_path / "run"
        assert run_command(train_args(corpus_dir, config_file, out)) == 0
        record = json.loads(capsys.readouterr().out.strip())
        assert record["task"] == "detection" and record["topology"] == "one_stream"
        assert record["split"] == "validation" and record["n"] == 2
        assert (out / "checkpoint.npz").exists()
        assert (out / "history.csv").exists()
        assert (out / "metrics.json").exists()
        history = (out / "history.csv").read_text().splitlines()
        assert history[0] == "epoch,train_loss,val_metric" and len(history) == 3

    def test_seeded_runs_are_bitwise_identical(self, corpus_dir, config_file, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_command(train_args(corpus_dir, config_file, out_a)) == 0
        assert run_command(train_args(corpus_dir, config_file, out_b)) == 0
        assert (out_a / "history.csv").read_bytes() == (out_b / "history.csv").read_bytes()
        assert (out_a / "metrics.json").read_bytes() == (out_b / "metrics.json").read_bytes()

    def test_flag_overrides_config_file(self, corpus_dir, config_file, tmp_path, capsys):
        out = tmp_path / "run"
        args = train_args(corpus_dir, config_file, out, epochs=1)
        assert run_command(args) == 0
        capsys.readouterr()
        history = (out / "history.csv").read_text().splitlines()
        assert len(history) == 2  # header + single epoch

    def test_missing_manifest_is_io_error(self, config_file, tmp_path):
        args = ["train", "--manifest", str(tmp_path / "missing.csv"), "--topology",
                "one_stream", "--task", "detection", "--config", str(config_file),
                "--out", str(tmp_path / "o")]
        assert run_command(args) == 2

    def test_width_mismatch_is_validation_error(self, corpus_dir, tmp_path):
        args = ["train", "--manifest", str(corpus_dir / "manifest.csv"), "--topology",
                "one_stream", "--task", "detection", "--out", str(tmp_path / "o")]
        # no config: defaults expect 674/76-wide features
        assert run_command(args) == 1


class TestEval:
    def test_reproduces_training_metric(self, corpus_dir, config_file, tmp_path, capsys):
        out = tmp_path / "run"
        assert run_command(train_args(corpus_dir, config_file, out)) == 0
        trained = json.loads(capsys.readouterr().out.strip())
        assert run_command(["eval", "--checkpoint", str(out / "checkpoint.npz"),
                            "--manifest", str(corpus_dir / "manifest.csv"),
                            "--split", "validation"]) == 0
        evaluated = json.loads(capsys.readouterr().out.strip())
        assert evaluated["value"] == trained["value"]
        recorded = json.loads((out / "metrics.json").read_text())
        assert evaluated["value"] == recorded["value"]

    def test_empty_split_is_validation_error(self, corpus_dir, config_file, tmp_path, capsys):
        out = tmp_path / "run"
        assert run_command(train_args(corpus_dir, config_file, out)) == 0
        capsys.readouterr()
        assert run_command(["eval", "--checkpoint", str(out / "checkpoint.npz"),
                            "--manifest", str(corpus_dir / "manifest.csv"),
                            "--split", "test"]) == 1


class TestGradcheck:
    def test_single_topology_passes(self, capsys):
        assert run_command(["gradcheck", "--topology", "one_stream"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 1
        name, status, err = out[0].split()
        assert name == "one_stream" and status == "PASS" and float(err) <= 1e-4

    def test_failing_tolerance_returns_exit_3(self, capsys):
        assert run_command(["gradcheck", "--topology", "one_stream", "--tol", "0"]) == 3
        out = capsys.readouterr().out
        assert "FAIL" in out


class TestSweep:
    def test_emits_eight_row_table(self, corpus_dir, config_file, tmp_path, capsys):
        out = tmp_path / "sweep"
        args = ["sweep", "--manifest", str(corpus_dir / "manifest.csv"), "--task",
                "detection", "--config", str(config_file), "--out", str(out),
                "--seed", "0", "--epochs", "1"]
        assert run_command(args) == 0
        csv_lines = (out / "results.csv").read_text().splitlines()
        assert csv_lines[0] == "topology,metric,params,seconds"
        assert len(csv_lines) == 9
        names = [line.split(",")[0] for line in csv_lines[1:]]
        assert names == ["one_stream", "one_to_one", "one_to_two", "two_to_one",
                         "cross_attention", "cross_to_one", "face_only", "pose_only"]
        for line in csv_lines[1:]:
            _, metric, params, seconds = line.split(",")
            assert 0.0 <= float(metric) <= 1.0
            assert int(params) > 0 and float(seconds) >= 0.0
        assert (out / "results.txt").exists()
        stdout_lines = capsys.readouterr().out.strip().splitlines()
        assert stdout_lines == csv_lines


class TestUsage:
    def test_unknown_subcommand_exits_1(self, capsys):
        assert run_command(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag_exits_1(self, capsys):
        assert run_command(["gradcheck", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_required_flag_exits_1(self, capsys):
        assert run_command(["train", "--topology", "one_stream"]) == 1
