"""Spiking layers: LIF neurons, surrogate gradients, residual spiking blocks.

The spike nonlinearity is a strict Heaviside in the forward pass; its backward
rule is a surrogate derivative registered on the tape (the forward's true
derivative is zero almost everywhere and is deliberately overridden). For
gradient validation there is a relaxed mode that replaces the Heaviside with a
smooth stand-in whose exact derivative equals the surrogate rule; in that mode
the membrane reset path is not detached, so the whole unrolled network is a
consistent differentiable function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


# ---------------------------------------------------------------------------
# surrogate gradient rules
# ---------------------------------------------------------------------------


class Surrogate:
    """Backward rule g(x) at x = u - threshold, plus a smooth relaxed forward
    whose true derivative is exactly g(x)."""

    name = "base"

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def relaxed(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SigmoidSurrogate(Surrogate):
    """g(x) = exp(-x) / (1 + exp(-x))^2, the shifted sigmoid derivative."""

    name = "sigmoid"

    def grad(self, x):
        s = _stable_sigmoid(x)
        return s * (1.0 - s)

    def relaxed(self, x):
        return _stable_sigmoid(x)


class FastSigmoidSurrogate(Surrogate):
    """g(x) = 1 / (1 + k |x|)^2 with slope k."""

    name = "fast_sigmoid"

    def __init__(self, slope: float = 25.0):
        if slope <= 0:
            raise ValueError(f"fast_sigmoid slope must be positive, got {slope}")
        self.slope = float(slope)

    def grad(self, x):
        den = 1.0 + self.slope * np.abs(x)
        return 1.0 / (den * den)

    def relaxed(self, x):
        # d/dx [x / (1 + k|x|)] = 1 / (1 + k|x|)^2 exactly
        return 0.5 + x / (1.0 + self.slope * np.abs(x))


class ArcTanSurrogate(Surrogate):
    """g(x) = 1 / (1 + pi^2 x^2)."""

    name = "arctan"

    def grad(self, x):
        px = np.pi * x
        return 1.0 / (1.0 + px * px)

    def relaxed(self, x):
        return 0.5 + np.arctan(np.pi * x) / np.pi


def _stable_sigmoid(x):
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y


def get_surrogate(name: str, slope: float = 25.0) -> Surrogate:
    if name == "sigmoid":
        return SigmoidSurrogate()
    if name == "fast_sigmoid":
        return FastSigmoidSurrogate(slope)
    if name == "arctan":
        return ArcTanSurrogate()
    raise ValueError(f"unknown surrogate '{name}' (expected sigmoid, fast_sigmoid, arctan)")


# ---------------------------------------------------------------------------
# LIF neuron
# ---------------------------------------------------------------------------


@dataclass
class LifParams:
    """Leaky integrate-and-fire configuration.

    beta is the membrane decay per step (fixed by default; a scalar Tensor can
    be threaded through lif_step for the learnable variant), threshold the
    firing level, reset is by subtraction of threshold at the step after a
    spike.
    """

    beta: float = 0.95
    threshold: float = 1.0
    surrogate: str = "arctan"
    slope: float = 25.0
    learnable_beta: bool = False

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if self.threshold <= 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        self.surrogate_fn = get_surrogate(self.surrogate, self.slope)


@dataclass
class LifState:
    """Membrane potential and previous spikes for one neuron population."""

    u: Tensor
    s: Tensor

    @staticmethod
    def zeros(shape, dtype=np.float32) -> "LifState":
        return LifState(Tensor(np.zeros(shape, dtype=dtype)),
                        Tensor(np.zeros(shape, dtype=dtype)))


def membrane_update(inp: Tensor, u_prev: Tensor, s_prev: Tensor,
                    params: LifParams, beta_tensor: Tensor | None = None,
                    detach_reset: bool = True) -> Tensor:
    """u = beta * u_prev + inp - threshold * s_prev.

    The reset term is detached in the backward pass unless detach_reset is
    False (relaxed validation mode).
    """
    theta = params.threshold
    if beta_tensor is not None:
        beta = float(beta_tensor.data)
    else:
        beta = params.beta
    dt = inp.dtype.type
    u = dt(beta) * u_prev.data + inp.data - dt(theta) * s_prev.data
    out = Tensor(u)

    def bwd(g):
        g_in = g
        g_u = g * dt(beta)
        g_s = None if detach_reset else -g * dt(theta)
        if beta_tensor is None:
            return (g_in, g_u, g_s)
        g_beta = np.asarray((g * u_prev.data).sum(), dtype=inp.dtype)
        return (g_in, g_u, g_s, g_beta)

    inputs = (inp, u_prev, s_prev)
    if beta_tensor is not None:
        inputs = inputs + (beta_tensor,)
    return ad.record(out, inputs, bwd)


def spike(u: Tensor, params: LifParams, relaxed: bool = False) -> Tensor:
    """Strict threshold: 1 where u > threshold, else 0.

    Backward uses the configured surrogate derivative at u - threshold. In
    relaxed mode the forward is the smooth surrogate stand-in instead, making
    the op genuinely differentiable.
    """
    theta = u.dtype.type(params.threshold)
    surr = params.surrogate_fn
    if relaxed:
        s = surr.relaxed(u.data - theta)
    else:
        s = (u.data > theta).astype(u.dtype)
    out = Tensor(s)

    def bwd(g):
        return (g * surr.grad(u.data - theta),)

    return ad.record(out, (u,), bwd)


def lif_step(inp: Tensor, state: LifState, params: LifParams,
             beta_tensor: Tensor | None = None, relaxed: bool = False,
             trace=None, site: str = "lif"):
    """One LIF step. Returns (spikes, new_state).

    State is threaded by the caller; gradients propagate through the membrane
    across steps (BPTT), while the spike-reset path is a straight-through
    constant unless relaxed.
    """
    u = membrane_update(inp, state.u, state.s, params, beta_tensor,
                        detach_reset=not relaxed)
    s = spike(u, params, relaxed=relaxed)
    if trace is not None:
        trace.record(site, s.data)
    return s, LifState(u, s)


# ---------------------------------------------------------------------------
# residual spiking blocks
# ---------------------------------------------------------------------------

COMBINE_OPS = ("add", "and", "iand")


@dataclass
class SewBlockConfig:
    channels: int
    kernel: int = 3
    combine: str = "add"

    def __post_init__(self):
        if self.combine not in COMBINE_OPS:
            raise ValueError(f"combine must be one of {COMBINE_OPS}, got '{self.combine}'")
        if self.kernel % 2 != 1:
            raise ValueError(f"kernel must be odd, got {self.kernel}")


def he_conv(rng: np.random.Generator, cout: int, cin: int, k: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / (cin * k * k))
    return (rng.normal(size=(cout, cin, k, k)) * std).astype(dtype)


class SewBlock:
    """Spike-element-wise residual block.

    O = LIF(Norm(Conv(LIF(Norm(Conv(I)))))), output g = combine(I, O) with
    combine in {add, and, iand} implemented arithmetically so gradients flow.
    """

    def __init__(self, config: SewBlockConfig, lif_params: LifParams,
                 rng: np.random.Generator, dtype=np.float32):
        c, k = config.channels, config.kernel
        self.config = config
        self.lif_params = lif_params
        self.conv1_w = Tensor(he_conv(rng, c, c, k, dtype), requires_grad=True)
        self.conv1_b = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.norm1_g = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.norm1_b = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.conv2_w = Tensor(he_conv(rng, c, c, k, dtype), requires_grad=True)
        self.conv2_b = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.norm2_g = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.norm2_b = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)

    def named_params(self) -> dict[str, Tensor]:
        return {
            "conv1.weight": self.conv1_w, "conv1.bias": self.conv1_b,
            "norm1.gamma": self.norm1_g, "norm1.beta": self.norm1_b,
            "conv2.weight": self.conv2_w, "conv2.bias": self.conv2_b,
            "norm2.gamma": self.norm2_g, "norm2.beta": self.norm2_b,
        }

    def init_states(self, shape, dtype=np.float32):
        return (LifState.zeros(shape, dtype), LifState.zeros(shape, dtype))

    def forward(self, x: Tensor, states, relaxed: bool = False, trace=None,
                prefix: str = "block", qfn=None):
        w1 = qfn(f"{prefix}.conv1.weight", self.conv1_w) if qfn else self.conv1_w
        w2 = qfn(f"{prefix}.conv2.weight", self.conv2_w) if qfn else self.conv2_w
        h = ad.conv2d(x, w1, self.conv1_b)
        h = ad.layer_norm(h, self.norm1_g, self.norm1_b)
        s1, st1 = lif_step(h, states[0], self.lif_params, relaxed=relaxed,
                           trace=trace, site=f"{prefix}.lif1")
        h = ad.conv2d(s1, w2, self.conv2_b)
        h = ad.layer_norm(h, self.norm2_g, self.norm2_b)
        s2, st2 = lif_step(h, states[1], self.lif_params, relaxed=relaxed,
                           trace=trace, site=f"{prefix}.lif2")
        out = combine(x, s2, self.config.combine, validate=not relaxed)
        return out, (st1, st2)


def combine(i: Tensor, o: Tensor, op: str, validate: bool = True) -> Tensor:
    if op == "add":
        return ad.add(i, o)
    if op == "and":
        return ad.logical_and(i, o, validate=validate)
    if op == "iand":
        return ad.logical_iand(i, o, validate=validate)
    raise ValueError(f"combine must be one of {COMBINE_OPS}, got '{op}'")


def sew_block_forward(x: Tensor, block: SewBlock, states, **kw):
    """Functional alias for SewBlock.forward."""
    return block.forward(x, states, **kw)


class TraditionalBlock:
    """Pre-activation residual block: x + Conv(Act(Norm(Conv(Act(Norm(x)))))).

    Activation is LIF (spiking) or ReLU (the analog twin). With zero conv
    weights the block is the identity on its input.
    """

    def __init__(self, channels: int, kernel: int, lif_params: LifParams | None,
                 rng: np.random.Generator, activation: str = "lif", dtype=np.float32):
        if activation not in ("lif", "relu"):
            raise ValueError(f"activation must be lif or relu, got '{activation}'")
        if activation == "lif" and lif_params is None:
            raise ValueError("lif activation needs LifParams")
        c, k = channels, kernel
        self.channels = channels
        self.kernel = kernel
        self.activation = activation
        self.lif_params = lif_params
        self.norm1_g = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.norm1_b = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.conv1_w = Tensor(he_conv(rng, c, c, k, dtype), requires_grad=True)
        self.conv1_b = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.norm2_g = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.norm2_b = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.conv2_w = Tensor(he_conv(rng, c, c, k, dtype), requires_grad=True)
        self.conv2_b = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)

    def named_params(self) -> dict[str, Tensor]:
        return {
            "norm1.gamma": self.norm1_g, "norm1.beta": self.norm1_b,
            "conv1.weight": self.conv1_w, "conv1.bias": self.conv1_b,
            "norm2.gamma": self.norm2_g, "norm2.beta": self.norm2_b,
            "conv2.weight": self.conv2_w, "conv2.bias": self.conv2_b,
        }

    def init_states(self, shape, dtype=np.float32):
        if self.activation != "lif":
            return (None, None)
        return (LifState.zeros(shape, dtype), LifState.zeros(shape, dtype))

    def _act(self, h, state, relaxed, trace, site):
        if self.activation == "relu":
            out = ad.relu(h)
            if trace is not None:
                trace.record(site, out.data)
            return out, None
        return lif_step(h, state, self.lif_params, relaxed=relaxed,
                        trace=trace, site=site)

    def forward(self, x: Tensor, states, relaxed: bool = False, trace=None,
                prefix: str = "block", qfn=None):
        w1 = qfn(f"{prefix}.conv1.weight", self.conv1_w) if qfn else self.conv1_w
        w2 = qfn(f"{prefix}.conv2.weight", self.conv2_w) if qfn else self.conv2_w
        h = ad.layer_norm(x, self.norm1_g, self.norm1_b)
        a1, st1 = self._act(h, states[0], relaxed, trace, f"{prefix}.act1")
        h = ad.conv2d(a1, w1, self.conv1_b)
        h = ad.layer_norm(h, self.norm2_g, self.norm2_b)
        a2, st2 = self._act(h, states[1], relaxed, trace, f"{prefix}.act2")
        h = ad.conv2d(a2, w2, self.conv2_b)
        out = ad.add(x, h)
        return out, (st1, st2)


def traditional_block_forward(x: Tensor, block: TraditionalBlock, states, **kw):
    """Functional alias for TraditionalBlock.forward."""
    return block.forward(x, states, **kw)
