"""Command-line behavior: exit codes, output contracts, error reporting."""

import json
import re

import pytest

from depthgate.cli import main
from depthgate.config import schema_keys
from depthgate.datasets import load_dataset
from depthgate.geometry import read_ply

MICRO = [
    "-o", "data.n_train=4", "-o", "data.n_eval=2", "-o", "data.image_size=8",
    "-o", "data.focal=8.0", "-o", "model.patch_size=4", "-o", "pipeline.n_points=4",
    "-o", "model.d_main=16", "-o", "model.n_layers=2", "-o", "model.horizon=3",
    "-o", "model.state_dim=5", "-o", "model.encoder_dims=6 8", "-o", "model.k_steps=4",
    "-o", "model.k_aux=2", "-o", "model.d_aux=8", "-o", "model.aux_hidden=12",
    "-o", "model.injection_hidden=6", "-o", "model.injection_dim=8",
    "-o", "model.mlp_ratio=2", "-o", "model.ratio_max=0.5",
    "-o", "train.steps=2", "-o", "train.batch_size=2", "-o", "train.eval_every=2",
    "-o", "train.eval_subset=2",
]


def test_no_command_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_command_is_usage_error(capsys):
    assert main(["frobnicate"]) == 2


def test_keys_lists_full_schema(capsys):
    assert main(["keys"]) == 0
    out = capsys.readouterr().out
    for dotted in schema_keys():
        section, name = dotted.split(".")
        assert f"[{section}]" in out
        assert name in out


def test_unknown_override_key(capsys):
    assert main(["train", "-o", "data.nope=1"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("depthgate: config:")
    assert "data.nope" in err


def test_malformed_override(capsys):
    assert main(["keys"]) == 0  # sanity: same parser path
    assert main(["train", "-o", "no_dot_here"]) == 1
    assert "section.key=value" in capsys.readouterr().err


class TestGenData:
    def test_writes_both_splits(self, tmp_path, capsys):
        assert main(["gen-data", *MICRO, "--out", str(tmp_path / "d")]) == 0
        out = capsys.readouterr().out
        assert "ambiguity floor" in out
        assert len(load_dataset(tmp_path / "d" / "train")) == 4
        assert len(load_dataset(tmp_path / "d" / "eval")) == 2

    def test_no_destination_is_an_error(self, capsys):
        assert main(["gen-data", *MICRO]) == 1
        assert "--out" in capsys.readouterr().err

    def all_bytes(self, root):
        return {str(p.relative_to(root)): p.read_bytes()
                for p in sorted(root.rglob("*")) if p.is_file()}

    def test_worker_count_does_not_change_bytes(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DEPTHGATE_WORKERS", "1")
        assert main(["gen-data", *MICRO, "--out", str(tmp_path / "serial")]) == 0
        monkeypatch.setenv("DEPTHGATE_WORKERS", "2")
        assert main(["gen-data", *MICRO, "--out", str(tmp_path / "pooled")]) == 0
        assert self.all_bytes(tmp_path / "serial") == self.all_bytes(tmp_path / "pooled")

    def test_bad_worker_env(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("DEPTHGATE_WORKERS", "many")
        assert main(["gen-data", *MICRO, "--out", str(tmp_path / "d")]) == 1
        assert "DEPTHGATE_WORKERS" in capsys.readouterr().err


class TestTrainEval:
    def test_train_then_eval(self, tmp_path, capsys):
        run = tmp_path / "run"
        assert main(["train", *MICRO, "--run-dir", str(run)]) == 0
        last = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert last["step"] == 2
        assert (run / "ckpt_000002.bin").exists()

        assert main(["eval", str(run / "ckpt_000002.bin"), "--subset", "1"]) == 0
        scored = json.loads(capsys.readouterr().out)
        assert set(scored) == {"checkpoint_step", "n", "mse", "mse_depth", "depth_floor"}
        assert scored["checkpoint_step"] == 2
        assert scored["n"] == 1
        assert scored["depth_floor"] == 0.5625

    def test_eval_missing_checkpoint(self, tmp_path, capsys):
        assert main(["eval", str(tmp_path / "nope.bin")]) == 1
        assert capsys.readouterr().err.startswith("depthgate: parse:")


def test_ablate_prints_table(tmp_path, capsys):
    root = tmp_path / "ab"
    args = ["ablate", *MICRO, "--run-root", str(root), "--variants", "full,no_injection"]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert "ambiguity floor" in out
    assert "no_injection" in out
    assert (root / "ablation.json").exists()


def test_ablate_unknown_variant(tmp_path, capsys):
    args = ["ablate", *MICRO, "--run-root", str(tmp_path / "ab"), "--variants", "half"]
    assert main(args) == 1
    assert "depthgate: config:" in capsys.readouterr().err


class TestExportCloud:
    def test_raw_cloud_covers_the_raster(self, tmp_path, capsys):
        out = tmp_path / "c.ply"
        assert main(["export-cloud", *MICRO, "--index", "1", "--out", str(out)]) == 0
        cloud = read_ply(out)
        assert len(cloud) == 64  # every pixel of the 8x8 view is valid
        assert cloud.points[:, 2].max() == 5.0  # background plane depth

    def test_fps_subsampling(self, tmp_path):
        out = tmp_path / "c.ply"
        args = ["export-cloud", *MICRO, "--normalize", "--sample", "fps",
                "--out", str(out)]
        assert main(args) == 0
        assert len(read_ply(out)) == 4

    def test_filter_needs_enough_points(self, tmp_path, capsys):
        args = ["export-cloud", *MICRO, "-o", "pipeline.filter_k=70",
                "--filter", "--out", str(tmp_path / "c.ply")]
        assert main(args) == 1
        assert capsys.readouterr().err.startswith("depthgate: insufficient-points:")


class TestGradCheck:
    def test_selected_ops_pass(self, capsys):
        assert main(["grad-check", "--ops", "add,mul", "--instances", "3"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2
        pat = re.compile(r"^(add|mul)\s+max_rel_err=\d\.\d{3}e[-+]\d+ instances=3 PASS$")
        assert all(pat.match(l) for l in lines)

    def test_unknown_op_is_config_error(self, capsys):
        assert main(["grad-check", "--ops", "frobnicate"]) == 1
        assert "depthgate: config:" in capsys.readouterr().err


def test_config_file_plus_override(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[data]\nn_train = 6\nn_eval = 2\n")
    args = ["gen-data", "--config", str(ini), *MICRO, "--out", str(tmp_path / "d")]
    # MICRO's n_train=4 override beats the file value
    assert main(args) == 0
    assert len(load_dataset(tmp_path / "d" / "train")) == 4
