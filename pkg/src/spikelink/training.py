"""Surrogate-gradient training over randomized channel realizations.

Every batch is generated fresh: each slot draws a channel profile, delay
spread, Doppler shift and Eb/N0 uniformly from the configured ranges, so one
"epoch" is simply a gradient step. The loss is per-element binary cross
entropy between predicted bit probabilities and the transmitted payload.
Updates use Adam-W with decoupled weight decay.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import channel, ofdm
from .autodiff import Tensor
from .models import Receiver, pack_inputs
from .quantization import QuantSpec, Quantizer


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; carries the failing step."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ebno_db_range: tuple = (0.0, 20.0)
    delay_ns_range: tuple = (10.0, 300.0)
    doppler_hz_range: tuple = (0.0, 500.0)
    train_profiles: tuple = ("A", "C", "E")
    test_profiles: tuple = ("B", "D")
    seed: int = 0
    checkpoint_every: int = 1000
    qat_bits: int = 0  # 0 disables quantization-aware training
    qat_refresh_every: int = 100
    lr_schedule: str = "constant"  # or "cosine" (decay to lr_min by cfg.steps)
    warmup_steps: int = 0
    decay_start: int = 0  # cosine only: hold peak lr until this step
    lr_min: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "ebno_db_range", tuple(self.ebno_db_range))
        object.__setattr__(self, "delay_ns_range", tuple(self.delay_ns_range))
        object.__setattr__(self, "doppler_hz_range", tuple(self.doppler_hz_range))
        object.__setattr__(self, "train_profiles", tuple(self.train_profiles))
        object.__setattr__(self, "test_profiles", tuple(self.test_profiles))
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be at least 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        for name in ("ebno_db_range", "delay_ns_range", "doppler_hz_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} must satisfy lo <= hi, got ({lo}, {hi})")
        for p in self.train_profiles + self.test_profiles:
            channel.get_profile(p)  # validates the name
        if not self.train_profiles:
            raise ValueError("train_profiles must be non-empty")
        overlap = set(self.train_profiles) & set(self.test_profiles)
        if overlap:
            raise ValueError(f"train/test profiles must be disjoint, both have {sorted(overlap)}")
        if self.qat_bits and not 2 <= self.qat_bits <= 32:
            raise ValueError(f"qat_bits must be 0 or in [2, 32], got {self.qat_bits}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule '{self.lr_schedule}'")
        if not 0 <= self.warmup_steps < self.steps:
            raise ValueError(f"warmup_steps must be in [0, steps), got {self.warmup_steps}")
        if not 0 <= self.decay_start < self.steps:
            raise ValueError(f"decay_start must be in [0, steps), got {self.decay_start}")
        if not 0.0 <= self.lr_min <= self.lr:
            raise ValueError(f"lr_min must be in [0, lr], got {self.lr_min}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SlotDraw:
    """Channel conditions drawn for one training slot."""

    profile: str
    delay_ns: float
    doppler_hz: float
    ebno_db: float


def _uniform(rng, lo_hi) -> float:
    lo, hi = lo_hi
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def generate_batch(grid: ofdm.GridConfig, cfg: TrainConfig, rng: np.random.Generator):
    """Fresh (inputs, labels, draws) for one step.

    inputs: (B, 4, M, N) float32; labels: (B, Bt, M', N) float32 payload bits.
    """
    b = cfg.batch_size
    xs = np.empty((b, 4, grid.symbols, grid.subcarriers), dtype=ad.DEFAULT_DTYPE)
    ys = np.empty((b, grid.bits_per_symbol, grid.n_data_symbols, grid.subcarriers),
                  dtype=ad.DEFAULT_DTYPE)
    draws = []
    for i in range(b):
        draw = SlotDraw(
            profile=cfg.train_profiles[int(rng.integers(len(cfg.train_profiles)))],
            delay_ns=_uniform(rng, cfg.delay_ns_range),
            doppler_hz=_uniform(rng, cfg.doppler_hz_range),
            ebno_db=_uniform(rng, cfg.ebno_db_range),
        )
        bits = ofdm.random_payload(grid, rng)
        slot = ofdm.build_slot(grid, bits, rng)
        n0 = ofdm.ebno_to_n0(draw.ebno_db, grid.bits_per_symbol)
        chan = channel.sample_channel(grid, draw.profile, draw.delay_ns,
                                      draw.doppler_hz, n0, rng)
        received = ofdm.transmit(slot, chan, rng)
        xs[i] = pack_inputs(received, slot.pilot_grid)
        ys[i] = bits.reshape(grid.n_data_symbols, grid.subcarriers,
                             grid.bits_per_symbol).transpose(2, 0, 1)
        draws.append(draw)
    return Tensor(xs), Tensor(ys), draws


class AdamW:
    """Adam with decoupled weight decay: p -= lr * (mhat/(sqrt(vhat)+eps) + wd*p).

    Zero gradient still shrinks a parameter by lr * wd * p per step, which is
    what separates this from L2-regularized Adam.
    """

    def __init__(self, params: dict, lr: float = 1e-4, weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    @classmethod
    def from_config(cls, params: dict, cfg: TrainConfig) -> "AdamW":
        return cls(params, lr=cfg.lr, weight_decay=cfg.weight_decay,
                   beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            upd = mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p.data
            p.data = (p.data - self.lr * upd).astype(p.data.dtype, copy=False)

    def state_blocks(self) -> dict:
        out = {}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state_blocks(self, blocks: dict, t: int) -> None:
        for name, p in self.params.items():
            for store, key in ((self.m, f"opt.m.{name}"), (self.v, f"opt.v.{name}")):
                if key not in blocks:
                    raise ValueError(f"checkpoint is missing optimizer state '{key}'")
                arr = np.asarray(blocks[key])
                if arr.shape != p.data.shape:
                    raise ValueError(
                        f"optimizer state '{key}': shape {arr.shape} does not "
                        f"match parameter shape {p.data.shape}"
                    )
                store[name] = arr.astype(p.data.dtype, copy=True)
        self.t = int(t)


def lr_at(cfg: TrainConfig, step: int) -> float:
    """Learning rate for 0-based ``step``: linear warmup, then the schedule."""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    if cfg.lr_schedule == "constant":
        return cfg.lr
    start = max(cfg.decay_start, cfg.warmup_steps)
    if step < start:
        return cfg.lr
    span = max(cfg.steps - start, 1)
    frac = (step - start) / span
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + math.cos(math.pi * frac))


def train_step(model: Receiver, optimizer: AdamW, batch, qfn=None) -> float:
    """One forward/backward/update. Returns the scalar loss."""
    x, labels = batch[0], batch[1]
    model.zero_grad()
    with ad.GradTape() as tape:
        probs = model.forward(x, qfn=qfn)
        loss = ad.bce_loss(probs, labels)
        tape.backward(loss)
    value = float(loss.data)
    if not np.isfinite(value):
        return value  # caller decides; train() raises TrainingDiverged
    optimizer.step()
    return value


@dataclass
class TrainResult:
    steps_run: int
    final_loss: float
    losses: list = field(default_factory=list)
    quantizer: Quantizer | None = None


def train(model: Receiver, grid: ofdm.GridConfig, cfg: TrainConfig, *,
          optimizer: AdamW | None = None, rng: np.random.Generator | None = None,
          start_step: int = 0, log=None, checkpoint_fn=None,
          quantizer: Quantizer | None = None) -> TrainResult:
    """Run steps [start_step, cfg.steps), generating data online.

    log(record: dict) is called once per step; checkpoint_fn(step) after every
    cfg.checkpoint_every steps and at the end. Resume by passing the restored
    optimizer, rng and start_step. A non-finite loss raises TrainingDiverged
    before the parameters are touched by the failing step.
    """
    if optimizer is None:
        optimizer = AdamW.from_config(model.named_params(), cfg)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if cfg.qat_bits and quantizer is None:
        quantizer = Quantizer(QuantSpec(cfg.qat_bits), cfg.qat_refresh_every)
    losses = []
    for step in range(start_step, cfg.steps):
        if quantizer is not None and step % quantizer.refresh_every == 0:
            quantizer.refresh(model.named_params())
        optimizer.lr = lr_at(cfg, step)
        batch = generate_batch(grid, cfg, rng)
        value = train_step(model, optimizer, batch, qfn=quantizer)
        if not np.isfinite(value):
            raise TrainingDiverged(step, value)
        losses.append(value)
        if log is not None:
            log({"step": step, "loss": value, "lr": optimizer.lr})
        if checkpoint_fn is not None and (step + 1) % cfg.checkpoint_every == 0:
            checkpoint_fn(step + 1)
    if checkpoint_fn is not None and cfg.steps % cfg.checkpoint_every != 0:
        checkpoint_fn(cfg.steps)
    if quantizer is not None:
        quantizer.snap_model(model)
    final = losses[-1] if losses else float("nan")
    return TrainResult(steps_run=len(losses), final_loss=final, losses=losses,
                       quantizer=quantizer)


def rng_state_to_json(rng: np.random.Generator) -> dict:
    """Bit-generator state as a JSON-safe dict (ints survive exactly)."""
    return json.loads(json.dumps(rng.bit_generator.state))


def rng_from_json(state: dict) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)
