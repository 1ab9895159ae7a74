"""Command-line front end: dataset generation, training, sweeps, energy.

Every command reads one JSON config and writes its artifacts under
<out>/<stage>-<hash>/, where the hash covers the effective config. Rerunning
with the same config regenerates the same bytes in the same place instead of
scattering new files; the train hash deliberately excludes the step count so
a rerun asking for more steps resumes in place from the stage's checkpoint.

numpy and the numerical modules are imported inside the commands, after the
thread cap and allocator tuning are applied. Importing this module stays
cheap (--help is instant) and BLAS pools get sized before they spin up.

Exit codes: 0 ok, 1 config error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import perf

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2

LIGHT_SPEED_M_S = 3.0e8

GRID_KEYS = ("symbols", "subcarriers", "modulation", "dmrs_symbols",
             "subcarrier_spacing_hz", "carrier_freq_hz", "pilot_seed")
CELL_KEYS = ("profile", "delay_ns", "doppler_hz", "speed_kmh", "ebno_db")
GEN_KEYS = ("grid", "slots", "profiles", "delay_ns_range", "doppler_hz_range",
            "ebno_db_range", "seed")
TRAIN_KEYS = ("grid", "model", "train", "seed")
EVAL_KEYS = ("grid", "cells", "slots_per_cell", "checkpoints", "baselines", "seed")
QUANT_KEYS = ("checkpoint", "bits", "mode", "grid", "train", "seed")
ENERGY_KEYS = ("checkpoint", "grid", "cell", "slots", "bits", "seed")
ABLATE_KEYS = ("axis", "grid", "model", "train", "cell", "slots_per_cell", "seed")

# axis name -> (model config field, values swept)
ABLATION_AXES = {
    "time-steps": ("time_steps", (1, 2, 10)),
    "combine-op": ("combine", ("add", "and", "iand")),
    "surrogate": ("surrogate", ("arctan", "fast_sigmoid", "sigmoid")),
    "blocks": ("blocks", (1, 2, 3)),
}

ABLATION_CSV_HEADER = "axis,value,final_loss,ber,activation_pct,ann_pj,snn_pj"


class ConfigError(ValueError):
    """Bad config file, flag, or referenced artifact; maps to exit code 1."""


def config_hash(payload: dict) -> str:
    """12 hex chars addressing a stage by its canonical config."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def canonical(d: dict) -> dict:
    """JSON round trip, so tuples compare equal to checkpointed lists."""
    return json.loads(json.dumps(d, sort_keys=True))


def doppler_from_speed(speed_kmh: float, carrier_freq_hz: float = 4e9) -> float:
    """Max Doppler f_d = v * f_c / c for a terminal at speed_kmh."""
    return speed_kmh / 3.6 * carrier_freq_hz / LIGHT_SPEED_M_S


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{p}: top level must be a JSON object")
    return d


def check_keys(d: dict, allowed, where: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(
            f"{where}: unknown keys {unknown} (allowed: {sorted(allowed)})"
        )


def get_range(d: dict, key: str, default, where: str, floor=None) -> tuple:
    pair = d.get(key, default)
    try:
        lo, hi = (float(v) for v in pair)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: {key} must be a [lo, hi] pair, "
                          f"got {pair!r}") from None
    if not lo <= hi:
        raise ConfigError(f"{where}: {key} must satisfy lo <= hi, got {pair}")
    if floor is not None and lo < floor:
        raise ConfigError(f"{where}: {key}: values must be >= {floor:g}, got {pair}")
    return lo, hi


def resolve_seed(args, cfg: dict) -> int:
    """--seed beats SPIKELINK_SEED beats the config file."""
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("SPIKELINK_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(
                f"SPIKELINK_SEED must be an integer, got '{env}'") from None
    return int(cfg.get("seed", 0))


def grid_from_config(d: dict, where: str):
    from . import ofdm
    check_keys(d, GRID_KEYS, where)
    kw = dict(d)
    if "dmrs_symbols" in kw:
        kw["dmrs_symbols"] = tuple(kw["dmrs_symbols"])
    try:
        return ofdm.GridConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def model_from_config(d: dict, grid, where: str):
    from .models import ModelConfig
    try:
        return ModelConfig.from_grid(grid, **d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def train_from_config(d: dict, where: str):
    from .training import TrainConfig
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_cell(d: dict, where: str, carrier_freq_hz: float = 4e9):
    from .evaluation import EvalCell
    check_keys(d, CELL_KEYS, where)
    if "doppler_hz" in d and "speed_kmh" in d:
        raise ConfigError(f"{where}: give doppler_hz or speed_kmh, not both")
    if "speed_kmh" in d:
        doppler = doppler_from_speed(float(d["speed_kmh"]), carrier_freq_hz)
    else:
        doppler = float(d.get("doppler_hz", 0.0))
    if doppler < 0:
        raise ConfigError(f"{where}: doppler_hz must be non-negative, got {doppler}")
    delay = float(d.get("delay_ns", 100.0))
    if delay < 0:
        raise ConfigError(f"{where}: delay_ns must be non-negative, got {delay}")
    try:
        return EvalCell(profile=str(d.get("profile", "B")), delay_ns=delay,
                        doppler_hz=doppler, ebno_db=float(d.get("ebno_db", 10.0)))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def cell_to_dict(cell) -> dict:
    return {"profile": cell.profile, "delay_ns": cell.delay_ns,
            "doppler_hz": cell.doppler_hz, "ebno_db": cell.ebno_db}


def stage_dir(out, stage: str, payload: dict) -> Path:
    d = Path(out) / f"{stage}-{config_hash(payload)}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_stage_config(sdir: Path, payload: dict) -> None:
    (sdir / "config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_model_checkpoint(path, where: str):
    from .models import Receiver, load_checkpoint
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{where}: checkpoint not found: {p}")
    try:
        ckpt = load_checkpoint(p)
    except ValueError as exc:
        raise ConfigError(f"{where}: {p}: {exc}") from None
    return Receiver.from_checkpoint(ckpt), ckpt


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from . import channel, datasets

    where = str(args.config)
    cfg = load_config(args.config)
    check_keys(cfg, GEN_KEYS, where)
    grid = grid_from_config(cfg.get("grid", {}), f"{where}: grid")
    if "slots" not in cfg:
        raise ConfigError(f"{where}: missing required key 'slots'")
    slots = int(cfg["slots"])
    if slots < 1:
        raise ConfigError(f"{where}: slots must be >= 1, got {slots}")
    profiles = tuple(cfg.get("profiles", ["B", "D"]))
    for p in profiles:
        try:
            channel.get_profile(p)
        except ValueError as exc:
            raise ConfigError(f"{where}: profiles: {exc}") from None
    delay = get_range(cfg, "delay_ns_range", (10.0, 300.0), where, floor=0.0)
    doppler = get_range(cfg, "doppler_hz_range", (0.0, 500.0), where, floor=0.0)
    ebno = get_range(cfg, "ebno_db_range", (0.0, 20.0), where)
    seed = resolve_seed(args, cfg)

    payload = {"stage": "gen-data", "grid": grid.to_dict(), "slots": slots,
               "profiles": list(profiles), "delay_ns_range": delay,
               "doppler_hz_range": doppler, "ebno_db_range": ebno, "seed": seed}
    sdir = stage_dir(args.out, "gen-data", payload)
    write_stage_config(sdir, payload)
    meta = datasets.generate_dataset(
        sdir / "slots.bin", grid, slots, profiles=profiles,
        delay_ns_range=delay, doppler_hz_range=doppler, ebno_db_range=ebno,
        seed=seed)
    print(f"wrote {meta['records']} slots to {sdir / 'slots.bin'}")
    print(f"stage {sdir}")
    return EXIT_OK


def cmd_train(args) -> int:
    import numpy as np

    from . import training as tr
    from .models import Receiver, load_checkpoint
    from .quantization import QuantSpec, Quantizer

    where = str(args.config)
    cfg = load_config(args.config)
    check_keys(cfg, TRAIN_KEYS, where)
    grid = grid_from_config(cfg.get("grid", {}), f"{where}: grid")
    model_cfg = model_from_config(cfg.get("model", {}), grid, f"{where}: model")
    seed = resolve_seed(args, cfg)
    tsec = dict(cfg.get("train", {}))
    tsec.setdefault("seed", seed)
    tc = train_from_config(tsec, f"{where}: train")

    resumable = {k: v for k, v in tc.to_dict().items() if k != "steps"}
    payload = {"stage": "train", "grid": grid.to_dict(),
               "model": model_cfg.to_dict(), "train": resumable}
    sdir = stage_dir(args.out, "train", payload)
    write_stage_config(sdir, {"grid": grid.to_dict(),
                              "model": model_cfg.to_dict(),
                              "train": tc.to_dict()})
    ckpt_path = sdir / "checkpoint.bin"
    log_path = sdir / "log.jsonl"

    model = Receiver(model_cfg, seed=tc.seed)
    optimizer = tr.AdamW.from_config(model.named_params(), tc)
    rng = np.random.default_rng(tc.seed)
    quantizer = None
    start_step = 0

    resume_from = getattr(args, "resume_from", None)
    if resume_from is None and ckpt_path.is_file():
        resume_from = ckpt_path
    if resume_from is not None:
        rp = Path(resume_from)
        if not rp.is_file():
            raise ConfigError(f"resume checkpoint not found: {rp}")
        saved = load_checkpoint(rp)
        if saved.config.to_dict() != model_cfg.to_dict():
            raise ConfigError(
                f"{rp}: checkpoint was trained with a different model config; "
                "refusing to resume")
        stored = {k: v for k, v in saved.meta.get("train", {}).items()
                  if k != "steps"}
        if canonical(stored) != canonical(resumable):
            raise ConfigError(
                f"{rp}: checkpoint was trained with a different train config; "
                "refusing to resume")
        start_step = int(saved.meta["step"])
        model.load_params(saved.blocks)
        opt_blocks = {k: v for k, v in saved.blocks.items()
                      if k.startswith("opt.")}
        optimizer.load_state_blocks(opt_blocks, t=start_step)
        rng = tr.rng_from_json(saved.meta["rng"])
        if "quantizer" in saved.meta:
            quantizer = Quantizer.from_state(saved.meta["quantizer"])
    if tc.qat_bits and quantizer is None:
        quantizer = Quantizer(QuantSpec(tc.qat_bits), tc.qat_refresh_every)

    if start_step >= tc.steps:
        print(f"checkpoint already at step {start_step} >= {tc.steps}; nothing to do")
        print(f"stage {sdir}")
        return EXIT_OK

    def save_ckpt(step: int) -> None:
        meta = {"step": step, "rng": tr.rng_state_to_json(rng),
                "train": tc.to_dict()}
        if quantizer is not None:
            meta["quantizer"] = quantizer.state()
        tmp = ckpt_path.with_name(ckpt_path.name + ".tmp")
        model.save(tmp, meta=meta, extra_blocks=optimizer.state_blocks())
        os.replace(tmp, ckpt_path)

    with open(log_path, "a" if start_step else "w") as logf:
        def log(rec: dict) -> None:
            logf.write(json.dumps(rec) + "\n")

        try:
            result = tr.train(model, grid, tc, optimizer=optimizer, rng=rng,
                              start_step=start_step, log=log,
                              checkpoint_fn=save_ckpt, quantizer=quantizer)
        except tr.TrainingDiverged as exc:
            print(f"error: {exc}; last good checkpoint kept at {ckpt_path}",
                  file=sys.stderr)
            return EXIT_NUMERIC
    if quantizer is not None:
        save_ckpt(tc.steps)  # masters were snapped to the grid after the loop
    print(f"trained to step {tc.steps}, final loss {result.final_loss:.6f}")
    print(f"stage {sdir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    import numpy as np

    from . import evaluation as ev

    where = str(args.config)
    cfg = load_config(args.config)
    check_keys(cfg, EVAL_KEYS, where)
    grid = grid_from_config(cfg.get("grid", {}), f"{where}: grid")
    cells_cfg = cfg.get("cells")
    if not cells_cfg or not isinstance(cells_cfg, list):
        raise ConfigError(f"{where}: 'cells' must be a non-empty list")
    cells = [parse_cell(c, f"{where}: cells[{i}]", grid.carrier_freq_hz)
             for i, c in enumerate(cells_cfg)]
    slots_per_cell = int(cfg.get("slots_per_cell", 100))
    if slots_per_cell < 1:
        raise ConfigError(f"{where}: slots_per_cell must be >= 1")
    seed = resolve_seed(args, cfg)

    receivers = []
    for name, path in dict(cfg.get("checkpoints", {})).items():
        model, _ = load_model_checkpoint(path, f"{where}: checkpoints[{name}]")
        receivers.append(ev.ModelReceiver(model, name=name))
    baselines = cfg.get("baselines", ["ls", "genie"])
    for b in baselines:
        if b == "ls":
            receivers.append(ev.LsReceiver())
        elif b == "genie":
            receivers.append(ev.GenieReceiver())
        else:
            raise ConfigError(f"{where}: baselines: unknown receiver '{b}' "
                              "(expected ls, genie)")
    if not receivers:
        raise ConfigError(f"{where}: nothing to evaluate: no checkpoints, "
                          "no baselines")

    payload = {"stage": "eval", "grid": grid.to_dict(),
               "cells": [cell_to_dict(c) for c in cells],
               "slots_per_cell": slots_per_cell,
               "checkpoints": {k: str(v) for k, v in
                               dict(cfg.get("checkpoints", {})).items()},
               "baselines": list(baselines), "seed": seed}
    sdir = stage_dir(args.out, "eval", payload)
    write_stage_config(sdir, payload)

    rows = ev.sweep(receivers, grid, cells, slots_per_cell, seed)
    csv_text = ev.rows_to_csv(rows)
    (sdir / "results.csv").write_text(csv_text)
    print(csv_text, end="")
    print(f"stage {sdir}")
    if not all(np.isfinite(r["ber"]) and np.isfinite(r["bce"]) for r in rows):
        print("error: non-finite metric in sweep results", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_quantize(args) -> int:
    from . import training as tr
    from .quantization import QuantSpec, post_training_quantize

    where = str(args.config)
    cfg = load_config(args.config)
    check_keys(cfg, QUANT_KEYS, where)
    if "checkpoint" not in cfg:
        raise ConfigError(f"{where}: missing required key 'checkpoint'")
    bits = int(cfg.get("bits", 8))
    try:
        spec = QuantSpec(bits)
    except ValueError as exc:
        raise ConfigError(f"{where}: bits: {exc}") from None
    mode = cfg.get("mode", "ptq")
    if mode not in ("ptq", "qat"):
        raise ConfigError(f"{where}: mode must be 'ptq' or 'qat', got '{mode}'")
    seed = resolve_seed(args, cfg)

    model, src = load_model_checkpoint(cfg["checkpoint"], where)
    payload = {"stage": "quantize", "checkpoint": str(cfg["checkpoint"]),
               "bits": bits, "mode": mode, "seed": seed}
    report = {"bits": bits, "mode": mode}

    if mode == "ptq":
        quantizer = post_training_quantize(model, spec)
    else:
        grid = grid_from_config(cfg.get("grid", {}), f"{where}: grid")
        tsec = dict(cfg.get("train", {}))
        tsec.setdefault("seed", seed)
        tsec["qat_bits"] = bits
        tc = train_from_config(tsec, f"{where}: train")
        payload["grid"] = grid.to_dict()
        payload["train"] = tc.to_dict()
        result = tr.train(model, grid, tc)
        quantizer = result.quantizer
        report["final_loss"] = result.final_loss
        report["steps"] = result.steps_run
    report["scales"] = dict(quantizer.scales)

    sdir = stage_dir(args.out, "quantize", payload)
    write_stage_config(sdir, payload)
    model.save(sdir / "checkpoint.bin",
               meta={"quantized": report, "source": str(cfg["checkpoint"])})
    (sdir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=1) + "\n")
    print(f"quantized to {bits} bits ({mode}), wrote {sdir / 'checkpoint.bin'}")
    print(f"stage {sdir}")
    return EXIT_OK


def _check_grid_matches_model(grid, model_cfg, where: str) -> None:
    mismatches = []
    if grid.symbols != model_cfg.symbols:
        mismatches.append("symbols")
    if grid.subcarriers != model_cfg.subcarriers:
        mismatches.append("subcarriers")
    if tuple(grid.dmrs_symbols) != tuple(model_cfg.dmrs_symbols):
        mismatches.append("dmrs_symbols")
    if grid.bits_per_symbol != model_cfg.bits_per_symbol:
        mismatches.append("modulation")
    if mismatches:
        raise ConfigError(f"{where}: grid does not match the checkpointed "
                          f"model on {mismatches}")


def cmd_energy(args) -> int:
    from . import evaluation as ev
    from .energy import (SpikeTrace, activation_probability, energy_report,
                         model_layers)

    where = str(args.config)
    cfg = load_config(args.config)
    check_keys(cfg, ENERGY_KEYS, where)
    if "checkpoint" not in cfg:
        raise ConfigError(f"{where}: missing required key 'checkpoint'")
    model, _ = load_model_checkpoint(cfg["checkpoint"], where)
    grid = grid_from_config(cfg.get("grid", {}), f"{where}: grid")
    _check_grid_matches_model(grid, model.config, where)
    cell = parse_cell(cfg.get("cell", {}), f"{where}: cell", grid.carrier_freq_hz)
    slots = int(cfg.get("slots", 10))
    if slots < 1:
        raise ConfigError(f"{where}: slots must be >= 1")
    bits = int(cfg.get("bits", 32))
    seed = resolve_seed(args, cfg)

    payload = {"stage": "energy", "checkpoint": str(cfg["checkpoint"]),
               "grid": grid.to_dict(), "cell": cell_to_dict(cell),
               "slots": slots, "bits": bits, "seed": seed}
    sdir = stage_dir(args.out, "energy", payload)
    write_stage_config(sdir, payload)

    trace = SpikeTrace()
    metrics = ev.evaluate(ev.ModelReceiver(model), grid, cell, slots, seed,
                          trace=trace)
    steps = model.config.time_steps
    rep = energy_report(model_layers(model), trace, bits=bits, time_steps=steps)
    (sdir / "energy.csv").write_text(rep.to_csv())
    summary = rep.to_dict()
    summary["ber"] = metrics.ber
    summary["bce"] = metrics.bce
    summary["activation_pct"] = activation_probability(trace)
    (sdir / "energy.json").write_text(
        json.dumps(summary, sort_keys=True, indent=1) + "\n")
    print(rep.format_table())
    print(f"stage {sdir}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from . import evaluation as ev
    from . import training as tr
    from .energy import (SpikeTrace, activation_probability, energy_report,
                         model_layers)
    from .models import Receiver

    where = str(args.config)
    cfg = load_config(args.config)
    check_keys(cfg, ABLATE_KEYS, where)
    axis = cfg.get("axis")
    if axis not in ABLATION_AXES:
        raise ConfigError(f"{where}: axis must be one of "
                          f"{sorted(ABLATION_AXES)}, got '{axis}'")
    field_name, values = ABLATION_AXES[axis]
    grid = grid_from_config(cfg.get("grid", {}), f"{where}: grid")
    msec = dict(cfg.get("model", {}))
    if field_name in msec:
        raise ConfigError(f"{where}: model: '{field_name}' is swept by this "
                          "ablation and cannot be pinned")
    seed = resolve_seed(args, cfg)
    tsec = dict(cfg.get("train", {}))
    tsec.setdefault("seed", seed)
    tc = train_from_config(tsec, f"{where}: train")
    cell = parse_cell(cfg.get("cell", {}), f"{where}: cell", grid.carrier_freq_hz)
    slots_per_cell = int(cfg.get("slots_per_cell", 20))

    payload = {"stage": "ablate", "axis": axis, "grid": grid.to_dict(),
               "model": msec, "train": tc.to_dict(),
               "cell": cell_to_dict(cell), "slots_per_cell": slots_per_cell,
               "seed": seed}
    sdir = stage_dir(args.out, "ablate", payload)
    write_stage_config(sdir, payload)

    lines = [ABLATION_CSV_HEADER]
    spikes = {}
    for value in values:
        model_cfg = model_from_config({**msec, field_name: value}, grid,
                                      f"{where}: model[{field_name}={value}]")
        model = Receiver(model_cfg, seed=seed)
        result = tr.train(model, grid, tc)
        # the eval pass records the spike trace once; the energy report is
        # computed from that same trace rather than a second run
        trace = SpikeTrace()
        metrics = ev.evaluate(ev.ModelReceiver(model), grid, cell,
                              slots_per_cell, seed, trace=trace)
        act = activation_probability(trace)
        rep = energy_report(model_layers(model), trace, bits=32,
                            time_steps=model_cfg.time_steps)
        mean_act = sum(act.values()) / len(act)
        lines.append(f"{axis},{value},{result.final_loss:.8g},{metrics.ber:.8g},"
                     f"{mean_act:.8g},{rep.ann_total_pj:.8g},{rep.snn_total_pj:.8g}")
        spikes[str(value)] = {"activation_pct": act,
                              "spike_rates": metrics.spike_rates,
                              "snn_total_pj": rep.snn_total_pj,
                              "ann_total_pj": rep.ann_total_pj}
        print(lines[-1])
    csv_text = "\n".join(lines) + "\n"
    (sdir / "results.csv").write_text(csv_text)
    (sdir / "spikes.json").write_text(
        json.dumps(spikes, sort_keys=True, indent=1) + "\n")
    print(f"stage {sdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and entry
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; remap to the config exit code
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, type=Path,
                        help="JSON config for this stage")
    common.add_argument("--out", type=Path, default=Path("runs"),
                        help="experiment directory (default: runs)")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--threads", type=int, default=1,
                        help="BLAS thread cap (default: 1)")
    common.add_argument("--deterministic", action="store_true",
                        help="force single-thread numerics")

    parser = _Parser(prog="spikelink",
                     description="OFDM receiver experiments: spiking and "
                                 "analog neural receivers vs classical DSP")
    sub = parser.add_subparsers(dest="command", required=True)

    commands = [
        ("gen-data", cmd_gen_data, "sample a slot dataset to disk"),
        ("train", cmd_train, "train a receiver, checkpointing as it goes"),
        ("eval", cmd_eval, "sweep receivers over cells, emit CSV"),
        ("quantize", cmd_quantize, "post-training or QAT weight quantization"),
        ("energy", cmd_energy, "spike-gated energy report for a checkpoint"),
        ("ablate", cmd_ablate, "sweep one architecture axis, report per value"),
    ]
    for name, fn, help_text in commands:
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.set_defaults(func=fn)
        if name == "train":
            sp.add_argument("--resume-from", type=Path, default=None,
                            help="checkpoint to continue from (defaults to "
                                 "the stage's own checkpoint when present)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        threads = 1 if args.deterministic else max(1, args.threads)
        perf.limit_blas_threads(threads)
        perf.tune_allocator()
        return int(args.func(args))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        from .training import TrainingDiverged
        if isinstance(exc, TrainingDiverged):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        raise


def entry() -> None:
    sys.exit(main())
