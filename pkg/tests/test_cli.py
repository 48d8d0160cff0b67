import json
import os

import numpy as np
import pytest

from cwkd.cli import main
from cwkd.data import load_dataset
from cwkd.models import forward, init_toynet, load_checkpoint, save_checkpoint
from cwkd.rng import Rng
from cwkd.tensor_core import read_cwt1
from cwkd.trainer import DataConfig, ExperimentConfig, OptimConfig
from cwkd.losses import LossSpec


@pytest.fixture(scope="module")
def tiny_cfg_path(tmp_path_factory):
    cfg = ExperimentConfig(
        data=DataConfig(seed=0, count=14, height=16, width=16, classes=4,
                        train=10, val=4),
        teacher_width=8,
        student_width=4,
        losses=[LossSpec("ce"), LossSpec("cw_kl", alpha=35.0)],
        optim=OptimConfig(lr=0.05, momentum=0.9, steps=16, batch_size=4,
                          val_every=8),
        seeds=[0],
    )
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2))
    return str(path)


@pytest.fixture(scope="module")
def teacher_dir(tiny_cfg_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("teacher")
    rc = main(["train-teacher", "--config", tiny_cfg_path, "--out", str(out)])
    assert rc == 0
    return str(out / "teacher_best")


def _tree_bytes(root):
    snapshot = {}
    for base, _, files in os.walk(root):
        for name in files:
            path = os.path.join(base, name)
            snapshot[os.path.relpath(path, root)] = open(path, "rb").read()
    return snapshot


class TestGenData:
    def test_writes_dataset_and_manifest(self, tiny_cfg_path, tmp_path):
        out = tmp_path / "data"
        assert main(["gen-data", "--config", tiny_cfg_path, "--out", str(out)]) == 0
        ds = load_dataset(out)
        assert len(ds) == 14
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "gen-data"
        assert manifest["versions"]["dump_format"] == "CWT1"
        assert manifest["config"]["data"]["count"] == 14

    def test_idempotent_byte_identical(self, tiny_cfg_path, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["gen-data", "--config", tiny_cfg_path, "--out", str(a)])
        main(["gen-data", "--config", tiny_cfg_path, "--out", str(b)])
        assert _tree_bytes(a) == _tree_bytes(b)


class TestGradcheckCommand:
    def test_passes_and_writes_report(self, tmp_path, capsys):
        out = tmp_path / "gc"
        rc = main(["gradcheck", "--out", str(out), "--seed", "0"])
        assert rc == 0
        report = json.loads((out / "gradcheck.json").read_text())
        assert report["passed"] is True
        assert len(report["losses"]) == 10
        assert "passed" in capsys.readouterr().out

    def test_impossible_tolerance_fails(self, capsys):
        rc = main(["gradcheck", "--tolerance", "0"])
        assert rc == 1
        capsys.readouterr()


class TestTrainAndDistill:
    def test_teacher_checkpoints_exist(self, teacher_dir):
        net = load_checkpoint(teacher_dir)
        assert net.width == 8 and net.classes == 4

    def test_distill_outputs(self, tiny_cfg_path, teacher_dir, tmp_path, capsys):
        out = tmp_path / "student"
        rc = main(["distill", "--config", tiny_cfg_path, "--teacher",
                   teacher_dir, "--out", str(out)])
        assert rc == 0
        capsys.readouterr()
        student = load_checkpoint(out / "student_best")
        assert student.width == 4
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "step,ce,cw_kl_f,total,val_miou"
        assert len(lines) == 17
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "distill"
        assert "best_val_miou" in manifest

    def test_distill_missing_teacher_usage_error(self, tiny_cfg_path, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["distill", "--config", tiny_cfg_path, "--teacher",
                  str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
        assert exc.value.code == 2

    def test_teacher_flag_required(self, tiny_cfg_path, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["distill", "--config", tiny_cfg_path, "--out", str(tmp_path)])
        assert exc.value.code == 2


class TestCompare:
    def test_outputs_and_determinism(self, tiny_cfg_path, teacher_dir,
                                      tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            rc = main(["compare", "--config", tiny_cfg_path, "--teacher",
                       teacher_dir, "--losses", "cw_kl,mimic", "--out", str(out)])
            assert rc == 0
        capsys.readouterr()
        assert _tree_bytes(a) == _tree_bytes(b)
        lines = (a / "comparison.csv").read_text().splitlines()
        assert lines[0] == ("loss,target,val_miou_mean,val_miou_std,"
                            "delta_vs_baseline,complexity")
        assert len(lines) == 4  # header + baseline + 2 losses
        runs = (a / "comparison_runs.csv").read_text().splitlines()
        assert len(runs) == 4  # header + 1 seed x (baseline + 2)
        base_row = lines[1].split(",")
        assert base_row[0] == "baseline"
        assert float(base_row[4]) == 0.0

    def test_unknown_loss_rejected(self, tiny_cfg_path, teacher_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["compare", "--config", tiny_cfg_path, "--teacher",
                  teacher_dir, "--losses", "bogus", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_parallel_matches_serial(self, tiny_cfg_path, teacher_dir,
                                     tmp_path, capsys, monkeypatch):
        serial, parallel = tmp_path / "s", tmp_path / "p"
        monkeypatch.setenv("CWKD_THREADS", "1")
        main(["compare", "--config", tiny_cfg_path, "--teacher", teacher_dir,
              "--losses", "cw_kl", "--out", str(serial)])
        monkeypatch.setenv("CWKD_THREADS", "2")
        main(["compare", "--config", tiny_cfg_path, "--teacher", teacher_dir,
              "--losses", "cw_kl", "--out", str(parallel)])
        capsys.readouterr()
        assert _tree_bytes(serial) == _tree_bytes(parallel)


class TestAblate:
    def test_small_grid(self, tiny_cfg_path, teacher_dir, tmp_path, capsys):
        out = tmp_path / "abl"
        rc = main(["ablate", "--config", tiny_cfg_path, "--teacher",
                   teacher_dir, "--grid-T", "0.5,1", "--grid-alpha", "0,35",
                   "--out", str(out)])
        assert rc == 0
        capsys.readouterr()
        runs = (out / "ablation_runs.csv").read_text().splitlines()
        assert runs[0] == "sweep,temperature,alpha,seed,val_miou,final_miou"
        assert len(runs) == 5  # header + (2 T + 2 alpha) x 1 seed
        summary = (out / "ablation.csv").read_text().splitlines()
        assert len(summary) == 5


class TestComplexityCommand:
    def test_prints_table(self, capsys):
        rc = main(["complexity", "--height", "64", "--width", "64",
                   "--channels", "32", "--classes", "4", "--p", "2"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "131072" in out          # h*w*c
        assert "536870912" in out       # (h*w)^2*c
        assert "4194304" in out         # h*w*c^p

    def test_csv_output(self, tmp_path, capsys):
        out = tmp_path / "cx"
        rc = main(["complexity", "--out", str(out)])
        assert rc == 0
        capsys.readouterr()
        lines = (out / "complexity.csv").read_text().splitlines()
        assert lines[0] == "loss,term,value"
        assert len(lines) == 10  # 9 distillation kinds


class TestDumpChannels:
    def test_distributions_sum_to_one(self, tiny_cfg_path, tmp_path, capsys):
        ckpt = tmp_path / "net"
        save_checkpoint(init_toynet(Rng(3), 8, 4), ckpt)
        out = tmp_path / "dump"
        rc = main(["dump-channels", "--config", tiny_cfg_path, "--checkpoint",
                   str(ckpt), "--count", "3", "--out", str(out)])
        assert rc == 0
        capsys.readouterr()
        for tap in ("feature", "score"):
            dist = read_cwt1(out / f"{tap}_dist.cwt")
            assert dist.shape[0] == 3
            sums = dist.reshape(dist.shape[0], dist.shape[1], -1).sum(axis=2)
            np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_constant_activations_give_uniform_distribution(self):
        # zero-weight net: every activation map is a constant (its bias),
        # so each per-channel distribution must be uniform
        net = init_toynet(Rng(3), 8, 4, scale=0.0)
        net.conv3_b[:] = [0.3, -1.0, 2.0, 0.0]
        images = np.full((2, 3, 16, 16), 0.5)
        taps = forward(net, images)
        from cwkd.losses import channel_distribution
        for tap in (taps.feature, taps.score):
            dist = channel_distribution(tap, 1.0)
            np.testing.assert_allclose(dist, 1.0 / 256.0, atol=1e-12)

    def test_deterministic(self, tiny_cfg_path, tmp_path, capsys):
        ckpt = tmp_path / "net"
        save_checkpoint(init_toynet(Rng(3), 8, 4), ckpt)
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            main(["dump-channels", "--config", tiny_cfg_path, "--checkpoint",
                  str(ckpt), "--out", str(out)])
        capsys.readouterr()
        assert _tree_bytes(a) == _tree_bytes(b)


def test_unknown_flag_rejected(tiny_cfg_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--config", tiny_cfg_path, "--frobnicate"])
    assert exc.value.code == 2


def test_unknown_command_rejected():
    with pytest.raises(SystemExit) as exc:
        main(["transmogrify"])
    assert exc.value.code == 2
