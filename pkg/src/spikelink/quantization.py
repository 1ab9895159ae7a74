"""Per-tensor symmetric weight quantization with straight-through gradients.

Fake quantization runs in the forward pass only: weights are snapped to a
Q-bit integer grid (scale * clip(round(w / scale))) while the stored master
weights stay float32. The backward rule passes gradients through unchanged
wherever w / scale lies inside the clip bounds and zeroes them outside, so
training can move weights across grid cells.

Scales are calibrated per tensor as max|w| / (2^(Q-1) - 1) and refreshed
periodically from the drifting master weights. Spikes are already one bit and
activations are never quantized; only named conv kernels pass through here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class QuantSpec:
    """Q-bit symmetric integer grid: levels in [-2^(Q-1), 2^(Q-1) - 1]."""

    bits: int = 8

    def __post_init__(self):
        if not 2 <= self.bits <= 32:
            raise ValueError(f"bits must be in [2, 32], got {self.bits}")

    @property
    def clip_lo(self) -> int:
        return -(2 ** (self.bits - 1))

    @property
    def clip_hi(self) -> int:
        return 2 ** (self.bits - 1) - 1


def calibrate_scale(w: np.ndarray, spec: QuantSpec) -> float:
    """max|w| / top level; an all-zero tensor gets scale 1 (already on grid)."""
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    if peak == 0.0:
        return 1.0
    return peak / spec.clip_hi


def fake_quantize(w: Tensor, scale: float, spec: QuantSpec) -> Tensor:
    if scale <= 0:
        raise ValueError(f"quantization scale must be positive, got {scale}")
    dt = w.dtype.type
    s = dt(scale)
    ratio = w.data / s
    q = np.clip(np.round(ratio), spec.clip_lo, spec.clip_hi)
    out = Tensor(s * q)

    def bwd(g):
        # straight-through: identity inside the clip range, dead outside;
        # the indicator uses the raw ratio, not the rounded one
        inside = (ratio >= spec.clip_lo) & (ratio <= spec.clip_hi)
        return (g * inside,)

    return ad.record(out, (w,), bwd)


def snap_to_grid(w: np.ndarray, scale: float, spec: QuantSpec) -> np.ndarray:
    """The forward of fake_quantize on a raw array."""
    if scale <= 0:
        raise ValueError(f"quantization scale must be positive, got {scale}")
    q = np.clip(np.round(w / scale), spec.clip_lo, spec.clip_hi)
    return (scale * q).astype(w.dtype, copy=False)


def on_grid(w: np.ndarray, scale: float, spec: QuantSpec, atol: float = 0.0) -> bool:
    """True when every entry equals scale * k for an integer k in range."""
    k = np.round(w / scale)
    if np.any(k < spec.clip_lo) or np.any(k > spec.clip_hi):
        return False
    return bool(np.all(np.abs(w - scale * k.astype(w.dtype)) <= atol))


class Quantizer:
    """Weight-transformer hook threaded through model forward passes.

    Calling refresh() recalibrates one scale per named tensor; __call__ then
    fake-quantizes any tensor it has a scale for. Models invoke the hook on
    conv kernels only.
    """

    def __init__(self, spec: QuantSpec, refresh_every: int = 100):
        if refresh_every < 1:
            raise ValueError(f"refresh_every must be >= 1, got {refresh_every}")
        self.spec = spec
        self.refresh_every = refresh_every
        self.scales: dict = {}

    def refresh(self, named: dict) -> None:
        for name, t in named.items():
            if name.endswith(".weight"):
                self.scales[name] = calibrate_scale(t.data, self.spec)

    def __call__(self, name: str, w: Tensor) -> Tensor:
        if name not in self.scales:
            raise ValueError(f"no calibrated scale for '{name}'; call refresh() first")
        return fake_quantize(w, self.scales[name], self.spec)

    def snap_model(self, model) -> None:
        """Overwrite master weights with their grid projections (QAT finalize)."""
        named = model.named_params()
        self.refresh(named)
        for name, scale in self.scales.items():
            t = named[name]
            t.data = snap_to_grid(t.data, scale, self.spec)

    def state(self) -> dict:
        return {"bits": self.spec.bits, "refresh_every": self.refresh_every,
                "scales": dict(self.scales)}

    @classmethod
    def from_state(cls, state: dict) -> "Quantizer":
        q = cls(QuantSpec(bits=state["bits"]),
                refresh_every=state.get("refresh_every", 100))
        q.scales = dict(state["scales"])
        return q


def post_training_quantize(model, spec: QuantSpec) -> Quantizer:
    """Snap a finished model's weights to the grid, no retraining."""
    q = Quantizer(spec)
    q.snap_model(model)
    return q
