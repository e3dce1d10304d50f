"""End-to-end command tests driven through main(), pinned to exit codes
0 success / 1 usage / 2 data / 3 verification / 4 divergence."""

import io
import json
from contextlib import redirect_stderr, redirect_stdout

import numpy as np
import pytest

from skelstream.cli import main, parse_arm
from skelstream.data import generate_dataset, save_jsonl
from skelstream.errors import ConfigError

TINY = [
    "--num-joints", "4", "--hidden-dim", "8", "--num-layers", "1",
    "--graph-heads", "2", "--temporal-heads", "2", "--future-steps", "1",
    "--num-classes", "3", "--max-frames", "6", "--target-frames", "6",
]
TRAIN = TINY + ["--max-epochs", "2", "--batch-size", "4",
                "--decay-epochs", "1", "--lr", "0.05"]


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    seqs = generate_dataset(3, 4, 6, 4, seed=0)
    save_jsonl(root / "data.jsonl", seqs)
    return root


@pytest.fixture(scope="module")
def checkpoint(workdir):
    ckpt = workdir / "model.ckpt"
    code, out, _ = run(["train", "--data", str(workdir / "data.jsonl"),
                        "--out", str(ckpt)] + TRAIN)
    assert code == 0, f"training exited {code}"
    return ckpt


class TestUsageErrors:
    def test_no_command(self):
        code, _, err = run([])
        assert code == 1
        assert "command" in err

    def test_unknown_flag(self):
        code, _, _ = run(["train", "--data", "x.jsonl", "--frobnicate", "1"])
        assert code == 1

    def test_missing_data_file(self, tmp_path):
        code, _, err = run(["train", "--data", str(tmp_path / "nope.jsonl"),
                            "--out", str(tmp_path / "m.ckpt")] + TRAIN)
        assert code == 1
        assert "not found" in err

    def test_bad_solver_value(self, workdir):
        code, _, _ = run(["train", "--data", str(workdir / "data.jsonl"),
                          "--out", str(workdir / "x.ckpt"),
                          "--solver", "dormand"] + TRAIN)
        assert code == 1


class TestTrain:
    def test_checkpoint_log_and_summary(self, workdir, checkpoint):
        assert checkpoint.exists()
        log = checkpoint.parent / (checkpoint.name + ".log")
        lines = log.read_text().splitlines()
        assert len(lines) == 2, "one log line per epoch"
        for i, line in enumerate(lines):
            rec = json.loads(line)
            assert rec["epoch"] == i
            assert {"loss", "cls", "pred", "feat", "lr", "seconds"} <= set(rec)

    def test_summary_json_on_stdout(self, workdir):
        ckpt = workdir / "fresh.ckpt"
        code, out, err = run(["train", "--data", str(workdir / "data.jsonl"),
                              "--out", str(ckpt)] + TRAIN)
        assert code == 0
        summary = json.loads(out.strip().splitlines()[-1])
        assert summary["checkpoint"] == str(ckpt)
        assert summary["epochs"] == 2
        assert 0.0 <= summary["train_accuracy"] <= 1.0
        assert "epoch" in err, "progress goes to stderr"

    def test_flag_beats_config_file(self, workdir):
        cfg = workdir / "cfg.json"
        cfg.write_text(json.dumps({"train": {"max_epochs": 5}}))
        ckpt = workdir / "layered.ckpt"
        code, _, _ = run(["train", "--data", str(workdir / "data.jsonl"),
                          "--out", str(ckpt), "--config", str(cfg)]
                         + TRAIN)  # TRAIN carries --max-epochs 2
        assert code == 0
        log = ckpt.parent / (ckpt.name + ".log")
        assert len(log.read_text().splitlines()) == 2

    def test_labels_outside_classes_is_data_error(self, workdir, tmp_path):
        code, _, err = run(["train", "--data", str(workdir / "data.jsonl"),
                            "--out", str(tmp_path / "m.ckpt")]
                           + TRAIN[:-10]
                           + ["--num-joints", "4", "--num-classes", "2",
                              "--max-epochs", "1"])
        assert code == 2
        assert "label" in err

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    def test_runaway_lr_is_divergence(self, workdir, tmp_path):
        argv = ["train", "--data", str(workdir / "data.jsonl"),
                "--out", str(tmp_path / "m.ckpt")] + TINY
        code, _, _ = run(argv + ["--max-epochs", "5", "--batch-size", "4",
                                 "--lr", "1e9"])
        assert code == 4


class TestStream:
    def test_record_per_frame(self, workdir, checkpoint):
        code, out, _ = run(["stream", "--checkpoint", str(checkpoint),
                            "--data", str(workdir / "data.jsonl")])
        assert code == 0
        records = [json.loads(l) for l in out.splitlines()]
        assert len(records) == 12 * 6, "12 sequences x 6 frames"
        first = records[:6]
        assert [r["frame"] for r in first] == list(range(6))
        for r in records:
            probs = np.asarray(r["probs"])
            assert len(probs) == 3
            assert abs(probs.sum() - 1.0) < 1e-6
            assert r["label"] == int(np.argmax(probs))
            assert r["latency_ms"] >= 0

    def test_reads_stdin(self, workdir, checkpoint, monkeypatch):
        text = (workdir / "data.jsonl").read_text().splitlines()[0] + "\n"
        monkeypatch.setattr("sys.stdin", io.StringIO(text))
        code, out, _ = run(["stream", "--checkpoint", str(checkpoint),
                            "--data", "-"])
        assert code == 0
        assert len(out.splitlines()) == 6

    def test_joint_mismatch_is_data_error(self, checkpoint, tmp_path):
        wide = tmp_path / "wide.jsonl"
        save_jsonl(wide, generate_dataset(3, 1, 6, 5, seed=1))
        code, _, err = run(["stream", "--checkpoint", str(checkpoint),
                            "--data", str(wide)])
        assert code == 2
        assert "joints" in err


class TestEval:
    def test_csv_curve_on_stdout(self, workdir, checkpoint):
        code, out, err = run(["eval", "--checkpoint", str(checkpoint),
                              "--data", str(workdir / "data.jsonl"),
                              "--ratio-step", "0.25"])
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "ratio,accuracy"
        assert len(lines) == 5
        ratios = [float(l.split(",")[0]) for l in lines[1:]]
        assert ratios == pytest.approx([0.25, 0.5, 0.75, 1.0])
        for l in lines[1:]:
            acc = float(l.split(",")[1])
            assert 0.0 <= acc <= 1.0
        assert "AUC" in err

    def test_csv_to_file_summary_to_stdout(self, workdir, checkpoint):
        path = workdir / "curve.csv"
        code, out, _ = run(["eval", "--checkpoint", str(checkpoint),
                            "--data", str(workdir / "data.jsonl"),
                            "--csv", str(path)])
        assert code == 0
        assert len(path.read_text().splitlines()) == 11
        summary = json.loads(out)
        assert len(summary["ratios"]) == 10
        assert 0.0 <= summary["auc"] <= 1.0


class TestDumpAttention:
    def test_lower_triangular_rows_sum_to_one(self, workdir, checkpoint):
        code, out, _ = run(["dump-attention", "--checkpoint", str(checkpoint),
                            "--data", str(workdir / "data.jsonl")])
        assert code == 0
        grid = np.array([[float(v) for v in line.split(",")]
                         for line in out.strip().splitlines()])
        assert grid.shape == (6, 6)
        assert np.allclose(grid.sum(axis=1), 1.0, atol=1e-9)
        upper = np.triu_indices(6, k=1)
        assert np.all(grid[upper] == 0.0), "future columns must be exactly 0"

    def test_head_out_of_range_is_usage(self, workdir, checkpoint):
        code, _, err = run(["dump-attention", "--checkpoint", str(checkpoint),
                            "--data", str(workdir / "data.jsonl"),
                            "--head", "9"])
        assert code == 1
        assert "head" in err

    def test_index_out_of_range_is_usage(self, workdir, checkpoint):
        code, _, _ = run(["dump-attention", "--checkpoint", str(checkpoint),
                          "--data", str(workdir / "data.jsonl"),
                          "--index", "99"])
        assert code == 1


class TestVerifyCommand:
    def test_count_mode(self):
        code, out, _ = run(["verify", "count"])
        assert code == 0
        rec = json.loads(out.strip().splitlines()[0])
        assert rec["check"] == "loss-bookkeeping"
        assert rec["passed"] is True
        assert "N=2,T=16" in rec["values"]["pair_counts"]

    def test_two_modes_two_reports(self):
        code, out, _ = run(["verify", "count", "ode"])
        assert code == 0
        checks = [json.loads(l)["check"] for l in out.strip().splitlines()]
        assert len(checks) == 2

    def test_unknown_mode_is_usage(self):
        code, _, err = run(["verify", "entropy"])
        assert code == 1
        assert "entropy" in err


class TestAblate:
    def test_single_arm_report(self, workdir):
        code, out, _ = run(["ablate", "--data", str(workdir / "data.jsonl"),
                            "--arms", "cls-only", "--seeds", "0,1",
                            "--ratio-step", "0.5"] + TRAIN)
        assert code == 0
        recs = [json.loads(l) for l in out.strip().splitlines()]
        assert len(recs) == 1
        rec = recs[0]
        assert rec["arm"] == "cls-only"
        assert rec["seeds"] == [0, 1]
        assert len(rec["auc"]) == 2
        assert rec["median_auc"] == pytest.approx(
            float(np.median(rec["auc"])))

    def test_unknown_arm_is_usage(self, workdir):
        code, _, _ = run(["ablate", "--data", str(workdir / "data.jsonl"),
                          "--arms", "everything"] + TRAIN)
        assert code == 1


class TestParseArm:
    def test_bases_and_modifiers(self):
        name, model_over, train_over = parse_arm("cls-only")
        assert model_over == {"future_steps": 0}
        assert train_over == {"lambda_pred": 0.0, "lambda_feat": 0.0}
        _, model_over, train_over = parse_arm("cls+pred:n=3")
        assert model_over == {"future_steps": 3}
        assert train_over == {"lambda_feat": 0.0}
        _, model_over, _ = parse_arm("full:predictor=none")
        assert model_over == {"predictor": "none"}

    def test_rejects_bad_specs(self):
        for spec in ("mystery", "full:n=9", "full:predictor=magic",
                     "full:n"):
            with pytest.raises(ConfigError):
                parse_arm(spec)
