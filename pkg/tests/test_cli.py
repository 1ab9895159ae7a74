"""CLI tests: config validation, stage addressing, reruns, exit codes."""

import json

import numpy as np
import pytest

from spikelink.cli import (
    EXIT_CONFIG,
    EXIT_NUMERIC,
    EXIT_OK,
    config_hash,
    doppler_from_speed,
    main,
)


GRID = {"symbols": 4, "subcarriers": 3, "dmrs_symbols": [1]}


def write_cfg(tmp_path, name, payload):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


def gen_cfg(**kw):
    cfg = {"grid": GRID, "slots": 4, "profiles": ["B"],
           "delay_ns_range": [50, 150], "doppler_hz_range": [0, 100],
           "ebno_db_range": [5, 15], "seed": 3}
    cfg.update(kw)
    return cfg


def train_cfg(steps=3, **kw):
    cfg = {"grid": GRID,
           "model": {"filters": 4, "blocks": 1, "time_steps": 1},
           "train": {"steps": steps, "batch_size": 2, "checkpoint_every": 2,
                     "seed": 1}}
    cfg.update(kw)
    return cfg


def run(tmp_path, command, cfg, *extra, out="runs"):
    path = write_cfg(tmp_path, f"{command}-{config_hash(cfg)}.json", cfg)
    return main([command, "--config", path, "--out", str(tmp_path / out),
                 *extra])


def stage(tmp_path, prefix, out="runs"):
    dirs = sorted((tmp_path / out).glob(f"{prefix}-*"))
    assert len(dirs) == 1, dirs
    return dirs[0]


class TestHelpers:
    def test_doppler_from_speed_pins(self):
        assert doppler_from_speed(3.6) == pytest.approx(13.3333, abs=1e-3)
        assert doppler_from_speed(36.0) == pytest.approx(133.333, abs=1e-2)
        assert doppler_from_speed(108.0) == pytest.approx(400.0)

    def test_config_hash_ignores_key_order(self):
        assert config_hash({"a": 1, "b": [2, 3]}) == config_hash({"b": [2, 3], "a": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})


class TestArgumentErrors:
    def test_missing_config_flag(self, capsys):
        assert main(["train"]) == EXIT_CONFIG
        assert "--config" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == EXIT_CONFIG

    def test_config_file_missing(self, tmp_path, capsys):
        rc = main(["train", "--config", str(tmp_path / "nope.json")])
        assert rc == EXIT_CONFIG
        assert "not found" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{nope")
        assert main(["train", "--config", str(p)]) == EXIT_CONFIG
        assert "JSON" in capsys.readouterr().err


class TestGenData:
    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = gen_cfg()
        assert run(tmp_path, "gen-data", cfg) == EXIT_OK
        sdir = stage(tmp_path, "gen-data")
        first = (sdir / "slots.bin").read_bytes()
        assert run(tmp_path, "gen-data", cfg) == EXIT_OK
        assert (sdir / "slots.bin").read_bytes() == first

    def test_sidecar_count_matches_binary(self, tmp_path):
        from spikelink.datasets import read_dataset
        assert run(tmp_path, "gen-data", gen_cfg(slots=5)) == EXIT_OK
        sdir = stage(tmp_path, "gen-data")
        _, records, meta = read_dataset(sdir / "slots.bin")
        assert meta["records"] == len(records) == 5

    def test_unknown_key_named(self, tmp_path, capsys):
        rc = run(tmp_path, "gen-data", gen_cfg(dopler_hz_range=[0, 1]))
        assert rc == EXIT_CONFIG
        assert "dopler_hz_range" in capsys.readouterr().err

    def test_negative_doppler_names_field(self, tmp_path, capsys):
        rc = run(tmp_path, "gen-data", gen_cfg(doppler_hz_range=[-5, 10]))
        assert rc == EXIT_CONFIG
        assert "doppler_hz_range" in capsys.readouterr().err

    def test_unknown_profile_rejected(self, tmp_path, capsys):
        rc = run(tmp_path, "gen-data", gen_cfg(profiles=["Q"]))
        assert rc == EXIT_CONFIG
        assert "profile" in capsys.readouterr().err

    def test_seed_flag_changes_stage(self, tmp_path):
        cfg = gen_cfg()
        assert run(tmp_path, "gen-data", cfg) == EXIT_OK
        assert run(tmp_path, "gen-data", cfg, "--seed", "99") == EXIT_OK
        assert len(list((tmp_path / "runs").glob("gen-data-*"))) == 2

    def test_env_seed_override(self, tmp_path, monkeypatch):
        cfg = gen_cfg()
        monkeypatch.setenv("SPIKELINK_SEED", "7")
        assert run(tmp_path, "gen-data", cfg) == EXIT_OK
        sdir = stage(tmp_path, "gen-data")
        assert json.loads((sdir / "config.json").read_text())["seed"] == 7


class TestTrain:
    def test_log_lines_equal_steps(self, tmp_path):
        assert run(tmp_path, "train", train_cfg(steps=3)) == EXIT_OK
        sdir = stage(tmp_path, "train")
        lines = (sdir / "log.jsonl").read_text().splitlines()
        assert len(lines) == 3
        assert [json.loads(l)["step"] for l in lines] == [0, 1, 2]

    def test_rerun_is_idempotent(self, tmp_path, capsys):
        cfg = train_cfg(steps=2)
        assert run(tmp_path, "train", cfg) == EXIT_OK
        before = (stage(tmp_path, "train") / "checkpoint.bin").read_bytes()
        assert run(tmp_path, "train", cfg) == EXIT_OK
        assert "nothing to do" in capsys.readouterr().out
        assert (stage(tmp_path, "train") / "checkpoint.bin").read_bytes() == before

    def test_resume_equals_straight_run(self, tmp_path):
        # steps live outside the stage hash, so the longer run continues in
        # place; its artifacts must match a from-scratch run bitwise
        assert run(tmp_path, "train", train_cfg(steps=2)) == EXIT_OK
        assert run(tmp_path, "train", train_cfg(steps=4)) == EXIT_OK
        resumed = stage(tmp_path, "train")
        assert run(tmp_path, "train", train_cfg(steps=4), out="fresh") == EXIT_OK
        direct = stage(tmp_path, "train", out="fresh")
        assert ((resumed / "checkpoint.bin").read_bytes()
                == (direct / "checkpoint.bin").read_bytes())
        assert ((resumed / "log.jsonl").read_text()
                == (direct / "log.jsonl").read_text())

    def test_resume_with_other_model_rejected(self, tmp_path, capsys):
        assert run(tmp_path, "train", train_cfg(steps=2)) == EXIT_OK
        ckpt = stage(tmp_path, "train") / "checkpoint.bin"
        other = train_cfg(steps=4)
        other["model"]["filters"] = 8
        rc = run(tmp_path, "train", other, "--resume-from", str(ckpt))
        assert rc == EXIT_CONFIG
        assert "different model config" in capsys.readouterr().err

    def test_resume_with_other_lr_rejected(self, tmp_path, capsys):
        assert run(tmp_path, "train", train_cfg(steps=2)) == EXIT_OK
        ckpt = stage(tmp_path, "train") / "checkpoint.bin"
        other = train_cfg(steps=4)
        other["train"]["lr"] = 5e-3
        rc = run(tmp_path, "train", other, "--resume-from", str(ckpt))
        assert rc == EXIT_CONFIG
        assert "different train config" in capsys.readouterr().err

    def test_nan_exits_numeric_and_keeps_checkpoint(self, tmp_path, capsys):
        from spikelink.models import load_checkpoint, save_checkpoint
        assert run(tmp_path, "train", train_cfg(steps=2)) == EXIT_OK
        ckpt = stage(tmp_path, "train") / "checkpoint.bin"
        saved = load_checkpoint(ckpt)
        blocks = dict(saved.blocks)
        blocks["head.conv.bias"] = np.full_like(blocks["head.conv.bias"], np.nan)
        save_checkpoint(ckpt, saved.config, blocks, saved.meta)
        poisoned = ckpt.read_bytes()

        rc = run(tmp_path, "train", train_cfg(steps=5))
        assert rc == EXIT_NUMERIC
        assert "non-finite" in capsys.readouterr().err
        # the failing step never overwrites the last checkpoint
        assert ckpt.read_bytes() == poisoned

    def test_unknown_model_key_named(self, tmp_path, capsys):
        cfg = train_cfg()
        cfg["model"]["dropout"] = 0.5
        assert run(tmp_path, "train", cfg) == EXIT_CONFIG
        assert "dropout" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One tiny trained checkpoint shared by the read-only command tests."""
    root = tmp_path_factory.mktemp("ckpt")
    path = write_cfg(root, "train.json", train_cfg(steps=3))
    assert main(["train", "--config", path, "--out", str(root / "runs")]) == EXIT_OK
    return stage(root, "train") / "checkpoint.bin"


def eval_cfg(ckpt=None, **kw):
    cfg = {"grid": GRID,
           "cells": [{"profile": "B", "delay_ns": 100, "doppler_hz": 30,
                      "ebno_db": 10}],
           "slots_per_cell": 4, "baselines": ["ls", "genie"], "seed": 0}
    if ckpt is not None:
        cfg["checkpoints"] = {"snn": str(ckpt)}
    cfg.update(kw)
    return cfg


class TestEval:
    def test_csv_schema_and_rerun(self, tmp_path, trained):
        cfg = eval_cfg(trained)
        assert run(tmp_path, "eval", cfg) == EXIT_OK
        sdir = stage(tmp_path, "eval")
        first = (sdir / "results.csv").read_text()
        lines = first.splitlines()
        assert lines[0] == "ebno_db,doppler_hz,delay_ns,receiver,ber,bce,slots"
        assert [l.split(",")[3] for l in lines[1:]] == ["snn", "ls", "genie"]
        assert run(tmp_path, "eval", cfg) == EXIT_OK
        assert (sdir / "results.csv").read_text() == first

    def test_genie_dominates_ls(self, tmp_path, trained):
        cfg = eval_cfg(trained, slots_per_cell=12,
                       cells=[{"profile": "B", "delay_ns": 100,
                               "doppler_hz": 200, "ebno_db": 8}])
        assert run(tmp_path, "eval", cfg) == EXIT_OK
        rows = (stage(tmp_path, "eval") / "results.csv").read_text().splitlines()
        by_rx = {l.split(",")[3]: float(l.split(",")[4]) for l in rows[1:]}
        assert by_rx["genie"] <= by_rx["ls"]

    def test_speed_mapped_to_doppler(self, tmp_path):
        cfg = eval_cfg(cells=[{"profile": "B", "delay_ns": 100,
                               "speed_kmh": 108, "ebno_db": 10}],
                       baselines=["genie"])
        assert run(tmp_path, "eval", cfg) == EXIT_OK
        rows = (stage(tmp_path, "eval") / "results.csv").read_text().splitlines()
        assert rows[1].split(",")[1] == "400"

    def test_missing_checkpoint(self, tmp_path, capsys):
        cfg = eval_cfg("does/not/exist.bin")
        assert run(tmp_path, "eval", cfg) == EXIT_CONFIG
        assert "checkpoint not found" in capsys.readouterr().err

    def test_cell_requires_one_doppler_form(self, tmp_path, capsys):
        cfg = eval_cfg(cells=[{"profile": "B", "doppler_hz": 10,
                               "speed_kmh": 36, "ebno_db": 10}])
        assert run(tmp_path, "eval", cfg) == EXIT_CONFIG
        assert "not both" in capsys.readouterr().err


class TestQuantize:
    def test_ptq_lands_on_grid(self, tmp_path, trained):
        from spikelink.models import load_checkpoint
        from spikelink.quantization import QuantSpec, on_grid
        cfg = {"checkpoint": str(trained), "bits": 8, "mode": "ptq"}
        assert run(tmp_path, "quantize", cfg) == EXIT_OK
        sdir = stage(tmp_path, "quantize")
        report = json.loads((sdir / "report.json").read_text())
        ckpt = load_checkpoint(sdir / "checkpoint.bin")
        spec = QuantSpec(8)
        for name, scale in report["scales"].items():
            assert on_grid(ckpt.blocks[name], scale, spec, atol=0.0), name

    def test_bad_bits_rejected(self, tmp_path, trained, capsys):
        cfg = {"checkpoint": str(trained), "bits": 1}
        assert run(tmp_path, "quantize", cfg) == EXIT_CONFIG
        assert "bits" in capsys.readouterr().err

    def test_qat_mode_runs(self, tmp_path, trained):
        cfg = {"checkpoint": str(trained), "bits": 4, "mode": "qat",
               "grid": GRID,
               "train": {"steps": 2, "batch_size": 2, "seed": 0}}
        assert run(tmp_path, "quantize", cfg) == EXIT_OK
        report = json.loads(
            (stage(tmp_path, "quantize") / "report.json").read_text())
        assert report["mode"] == "qat"
        assert report["steps"] == 2
        assert np.isfinite(report["final_loss"])


class TestEnergy:
    def test_report_files(self, tmp_path, trained):
        cfg = {"checkpoint": str(trained), "grid": GRID,
               "cell": {"profile": "B", "doppler_hz": 50, "ebno_db": 10},
               "slots": 3, "bits": 32, "seed": 0}
        assert run(tmp_path, "energy", cfg) == EXIT_OK
        sdir = stage(tmp_path, "energy")
        csv_lines = (sdir / "energy.csv").read_text().splitlines()
        assert csv_lines[0] == "layer,kind,flops,rate,ann_pj,snn_pj"
        summary = json.loads((sdir / "energy.json").read_text())
        assert summary["snn_total_pj"] > 0
        assert summary["ann_total_pj"] > summary["snn_total_pj"]
        assert set(summary["activation_pct"]) == {
            "stem.lif", "block0.lif1", "block0.lif2"}

    def test_grid_mismatch_rejected(self, tmp_path, trained, capsys):
        cfg = {"checkpoint": str(trained),
               "grid": {"symbols": 6, "subcarriers": 3, "dmrs_symbols": [1]},
               "slots": 2}
        assert run(tmp_path, "energy", cfg) == EXIT_CONFIG
        assert "does not match" in capsys.readouterr().err


class TestAblate:
    def ablate_cfg(self, axis, **kw):
        cfg = {"axis": axis, "grid": GRID,
               "model": {"filters": 4, "blocks": 1},
               "train": {"steps": 2, "batch_size": 2, "seed": 2},
               "cell": {"profile": "B", "doppler_hz": 50, "ebno_db": 10},
               "slots_per_cell": 2, "seed": 2}
        cfg.update(kw)
        return cfg

    def test_combine_op_rows(self, tmp_path):
        assert run(tmp_path, "ablate", self.ablate_cfg("combine-op")) == EXIT_OK
        sdir = stage(tmp_path, "ablate")
        lines = (sdir / "results.csv").read_text().splitlines()
        assert lines[0] == "axis,value,final_loss,ber,activation_pct,ann_pj,snn_pj"
        assert [l.split(",")[1] for l in lines[1:]] == ["add", "and", "iand"]
        spikes = json.loads((sdir / "spikes.json").read_text())
        assert set(spikes) == {"add", "and", "iand"}
        assert "stem.lif" in spikes["add"]["activation_pct"]

    def test_time_steps_values(self, tmp_path):
        cfg = self.ablate_cfg("time-steps")
        assert run(tmp_path, "ablate", cfg) == EXIT_OK
        lines = (stage(tmp_path, "ablate") / "results.csv").read_text().splitlines()
        assert [l.split(",")[1] for l in lines[1:]] == ["1", "2", "10"]

    def test_unknown_axis(self, tmp_path, capsys):
        assert run(tmp_path, "ablate", self.ablate_cfg("widths")) == EXIT_CONFIG
        assert "axis" in capsys.readouterr().err

    def test_swept_field_cannot_be_pinned(self, tmp_path, capsys):
        cfg = self.ablate_cfg("blocks")
        cfg["model"]["blocks"] = 2
        assert run(tmp_path, "ablate", cfg) == EXIT_CONFIG
        assert "swept" in capsys.readouterr().err
