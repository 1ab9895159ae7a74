"""Neural receivers over the resource grid: a spiking CNN and its analog twin.

Both variants share one topology: a 3x3 stem conv, a stack of residual blocks,
and a 1x1 head that emits per-bit logits on every resource element. The
spiking variant ("snn") uses LIF activations and spike-element-wise residual
blocks, runs T time steps on the same input with persistent membrane state,
and averages the per-step head outputs. The analog twin ("ann") uses ReLU and
plain additive residual blocks with a single step.

Checkpoints are a small self-describing binary format: magic, version, a JSON
header carrying the model config and arbitrary metadata, then named float32
blocks. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .spiking import (
    COMBINE_OPS,
    LifParams,
    LifState,
    SewBlock,
    SewBlockConfig,
    TraditionalBlock,
    get_surrogate,
    he_conv,
    lif_step,
)

VARIANTS = ("snn", "ann")
HEAD_MEANS = ("probs", "logits")

CHECKPOINT_MAGIC = b"SLRX"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Receiver hyperparameters plus the grid geometry the model is bound to.

    Desk-scale defaults (16 filters, 3 blocks) train on a single CPU core in
    minutes; the full-scale configuration (128 filters, 7 blocks) is reached
    by overriding fields, nothing else changes.
    """

    variant: str = "snn"
    filters: int = 16
    blocks: int = 3
    kernel: int = 3
    time_steps: int = 2
    combine: str = "add"
    surrogate: str = "arctan"
    slope: float = 25.0
    beta: float = 0.95
    threshold: float = 1.0
    head_mean: str = "probs"
    symbols: int = 14
    subcarriers: int = 24
    dmrs_symbols: tuple = (3,)
    bits_per_symbol: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got '{self.variant}'")
        if self.filters < 1 or self.blocks < 1:
            raise ValueError("filters and blocks must be at least 1")
        if self.time_steps < 1:
            raise ValueError(f"time_steps must be at least 1, got {self.time_steps}")
        if self.variant == "ann" and self.time_steps != 1:
            raise ValueError("the ann variant has no temporal axis; set time_steps=1")
        if self.head_mean not in HEAD_MEANS:
            raise ValueError(f"head_mean must be one of {HEAD_MEANS}, got '{self.head_mean}'")
        if self.combine not in COMBINE_OPS:
            raise ValueError(f"combine must be one of {COMBINE_OPS}, got '{self.combine}'")
        if self.bits_per_symbol not in (2, 4):
            raise ValueError(f"bits_per_symbol must be 2 or 4, got {self.bits_per_symbol}")
        if self.kernel % 2 != 1:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        get_surrogate(self.surrogate, self.slope)  # validates the name
        object.__setattr__(self, "dmrs_symbols", tuple(int(m) for m in self.dmrs_symbols))
        dmrs = self.dmrs_symbols
        if not dmrs or len(set(dmrs)) != len(dmrs):
            raise ValueError("dmrs_symbols must be non-empty and unique")
        if min(dmrs) < 0 or max(dmrs) >= self.symbols:
            raise ValueError(f"dmrs_symbols {dmrs} out of range for {self.symbols} symbols")
        if len(dmrs) >= self.symbols:
            raise ValueError("grid has no data symbols left")

    @property
    def data_rows(self) -> tuple:
        return tuple(m for m in range(self.symbols) if m not in self.dmrs_symbols)

    @property
    def n_data_symbols(self) -> int:
        return self.symbols - len(self.dmrs_symbols)

    @property
    def output_shape(self) -> tuple:
        return (self.n_data_symbols, self.subcarriers, self.bits_per_symbol)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dmrs_symbols"] = list(self.dmrs_symbols)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "dmrs_symbols" in d:
            d["dmrs_symbols"] = tuple(d["dmrs_symbols"])
        return cls(**d)

    @classmethod
    def from_grid(cls, grid, **overrides) -> "ModelConfig":
        """Bind the model geometry to an ofdm.GridConfig."""
        return cls(symbols=grid.symbols, subcarriers=grid.subcarriers,
                   dmrs_symbols=grid.dmrs_symbols,
                   bits_per_symbol=grid.bits_per_symbol, **overrides)


def pack_inputs(received: np.ndarray, pilot_grid: np.ndarray,
                dtype=ad.DEFAULT_DTYPE) -> np.ndarray:
    """Split complex grids into the 4 real input channels (Re/Im Y, Re/Im P)."""
    y = np.asarray(received)
    p = np.asarray(pilot_grid)
    if y.shape != p.shape or y.ndim != 2:
        raise ValueError(
            f"received and pilot grids must share one (M, N) shape, "
            f"got {y.shape} and {p.shape}"
        )
    return np.stack([y.real, y.imag, p.real, p.imag]).astype(dtype)


class Receiver:
    """Grid-in, bit-probabilities-out receiver, spiking or analog.

    forward() takes a batched 4-channel Tensor (B, 4, M, N) and returns bit
    probabilities (B, Bt, M', N) with DMRS rows dropped; infer() is the
    single-slot convenience that accepts the complex grids directly.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        dt = ad.DEFAULT_DTYPE
        f, k, bt = config.filters, config.kernel, config.bits_per_symbol
        snn = config.variant == "snn"
        self.lif_params = LifParams(config.beta, config.threshold,
                                    config.surrogate, config.slope) if snn else None
        self.stem_w = Tensor(he_conv(rng, f, 4, k, dt), requires_grad=True)
        self.stem_b = Tensor(np.zeros(f, dtype=dt), requires_grad=True)
        self.stem_g = Tensor(np.ones(f, dtype=dt), requires_grad=True)
        self.stem_beta = Tensor(np.zeros(f, dtype=dt), requires_grad=True)
        if snn:
            bcfg = SewBlockConfig(channels=f, kernel=k, combine=config.combine)
            self.blocks = [SewBlock(bcfg, self.lif_params, rng, dt)
                           for _ in range(config.blocks)]
        else:
            self.blocks = [TraditionalBlock(f, k, None, rng, activation="relu", dtype=dt)
                           for _ in range(config.blocks)]
        self.head_w = Tensor(he_conv(rng, bt, f, 1, dt), requires_grad=True)
        self.head_b = Tensor(np.zeros(bt, dtype=dt), requires_grad=True)

    def named_params(self) -> dict:
        out = {
            "stem.conv.weight": self.stem_w, "stem.conv.bias": self.stem_b,
            "stem.norm.gamma": self.stem_g, "stem.norm.beta": self.stem_beta,
        }
        for i, blk in enumerate(self.blocks):
            for name, t in blk.named_params().items():
                out[f"block{i}.{name}"] = t
        out["head.conv.weight"] = self.head_w
        out["head.conv.bias"] = self.head_b
        return out

    def zero_grad(self) -> None:
        for t in self.named_params().values():
            t.zero_grad()

    def forward(self, x: Tensor, relaxed: bool = False, trace=None, qfn=None) -> Tensor:
        cfg = self.config
        expect = (4, cfg.symbols, cfg.subcarriers)
        if x.data.ndim != 4 or x.data.shape[1:] != expect:
            raise ValueError(
                f"input must be (B,) + {expect}, got {x.data.shape}"
            )
        b = x.data.shape[0]
        snn = cfg.variant == "snn"
        if trace is not None and hasattr(trace, "begin_batch"):
            trace.begin_batch()  # slot boundary for ever-fired accounting
        state_shape = (b, cfg.filters, cfg.symbols, cfg.subcarriers)
        stem_state = LifState.zeros(state_shape, x.dtype) if snn else None
        block_states = [blk.init_states(state_shape, x.dtype) for blk in self.blocks]
        acc = None
        for _ in range(cfg.time_steps):
            sw = qfn("stem.conv.weight", self.stem_w) if qfn else self.stem_w
            h = ad.conv2d(x, sw, self.stem_b)
            h = ad.layer_norm(h, self.stem_g, self.stem_beta)
            if snn:
                s, stem_state = lif_step(h, stem_state, self.lif_params,
                                         relaxed=relaxed, trace=trace, site="stem.lif")
            else:
                s = ad.relu(h)
                if trace is not None:
                    trace.record("stem.act", s.data)
            for i, blk in enumerate(self.blocks):
                s, block_states[i] = blk.forward(s, block_states[i], relaxed=relaxed,
                                                 trace=trace, prefix=f"block{i}",
                                                 qfn=qfn)
            hw = qfn("head.conv.weight", self.head_w) if qfn else self.head_w
            logits = ad.conv2d(s, hw, self.head_b)
            logits = ad.take_rows(logits, cfg.data_rows, axis=2)
            step_out = ad.sigmoid(logits) if cfg.head_mean == "probs" else logits
            acc = step_out if acc is None else ad.add(acc, step_out)
        if cfg.time_steps > 1:
            acc = ad.scale(acc, 1.0 / cfg.time_steps)
        return acc if cfg.head_mean == "probs" else ad.sigmoid(acc)

    def infer(self, received: np.ndarray, pilot_grid: np.ndarray,
              trace=None) -> np.ndarray:
        """Bit probabilities (M', N, Bt) for one slot, no gradients."""
        x = Tensor(pack_inputs(received, pilot_grid)[None])
        probs = self.forward(x, trace=trace)
        return np.transpose(probs.data[0], (1, 2, 0))

    def infer_llr(self, received: np.ndarray, pilot_grid: np.ndarray,
                  trace=None) -> np.ndarray:
        return llr_from_probs(self.infer(received, pilot_grid, trace=trace))

    def load_params(self, blocks: dict) -> None:
        """Copy named arrays into the model, validating name and shape."""
        for name, t in self.named_params().items():
            if name not in blocks:
                raise ValueError(f"checkpoint is missing parameter '{name}'")
            arr = np.asarray(blocks[name])
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"parameter '{name}': checkpoint shape {arr.shape} does not "
                    f"match model shape {t.data.shape}"
                )
            t.data = arr.astype(t.data.dtype, copy=True)

    def save(self, path, meta: dict | None = None,
             extra_blocks: dict | None = None) -> None:
        blocks = {name: t.data for name, t in self.named_params().items()}
        if extra_blocks:
            dup = set(blocks) & set(extra_blocks)
            if dup:
                raise ValueError(f"extra block names collide with parameters: {sorted(dup)}")
            blocks.update(extra_blocks)
        save_checkpoint(path, self.config, blocks, meta)

    @classmethod
    def from_checkpoint(cls, source) -> "Receiver":
        ckpt = source if isinstance(source, Checkpoint) else load_checkpoint(source)
        model = cls(ckpt.config)
        model.load_params(ckpt.blocks)
        return model


def llr_from_probs(probs: np.ndarray) -> np.ndarray:
    """logit(p) = log(p / (1-p)), clamped so the result is always finite.

    With the convention used throughout: positive means bit 1.
    """
    p = np.clip(np.asarray(probs, dtype=np.float64), ad.BCE_CLAMP, 1.0 - ad.BCE_CLAMP)
    return np.log(p) - np.log1p(-p)


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: ModelConfig
    blocks: dict
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, config: ModelConfig, blocks: dict,
                    meta: dict | None = None) -> None:
    """Write magic, version, JSON header, then named float32 tensor blocks."""
    header = json.dumps(
        {"config": config.to_dict(), "meta": meta or {}},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks.items():
            a = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", a.ndim))
            if a.ndim:
                f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise ValueError(f"checkpoint truncated while reading {what}")
    return b


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != CHECKPOINT_MAGIC:
            raise ValueError("not a receiver checkpoint (bad magic bytes)")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {version} "
                f"(this build reads {CHECKPOINT_VERSION})"
            )
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        header = json.loads(_read_exact(f, hlen, "header"))
        config = ModelConfig.from_dict(header["config"])
        (count,) = struct.unpack("<I", _read_exact(f, 4, "block count"))
        blocks = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(f, 2, "block name length"))
            name = _read_exact(f, nlen, "block name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, f"rank of '{name}'"))
            shape = struct.unpack(f"<{ndim}I",
                                  _read_exact(f, 4 * ndim, f"shape of '{name}'")) if ndim else ()
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            raw = _read_exact(f, 4 * size, f"tensor '{name}'")
            blocks[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        if f.read(1):
            raise ValueError("checkpoint has trailing bytes after the last block")
    return Checkpoint(config=config, blocks=blocks, meta=header["meta"])
