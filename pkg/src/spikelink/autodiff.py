"""Reverse-mode automatic differentiation on numpy arrays.

Small tape-based engine sized for the receiver models in this package: float32
by default, single-threaded, stride-1 same-padding convolutions, channel-wise
layer norm, and the elementwise/reduction ops the spiking layers need. Custom
backward rules (surrogate spike gradients, straight-through quantization) are
registered through :func:`record`, which lets a module override the analytic
derivative of its forward function.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

# Probabilities fed to the BCE loss are clamped to [CLAMP, 1 - CLAMP].
BCE_CLAMP = 1e-7

_TAPE_STACK: list["GradTape"] = []


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None and arr.dtype != dtype:
        arr = arr.astype(dtype)
    elif not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(DEFAULT_DTYPE)
    if arr.ndim > 0 and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """A numpy array plus gradient bookkeeping.

    Tensors preserve the floating dtype they are built from (float32 is the
    package default; float64 is used by the finite-difference checks).
    Gradients accumulate additively into ``.grad``; call :meth:`zero_grad`
    between steps. Once an op involving the tensor has been recorded on a
    tape, its data must not be mutated until the tape is discarded.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A view of the same data cut off from any recorded graph."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # Operator sugar used by tests and small scripts. Elementwise tensor ops
    # require identical shapes; scalars go through scale/shift.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


class _Node:
    """One recorded op: output, inputs, and the rule producing input grads."""

    __slots__ = ("out", "inputs", "backward_fn", "visits", "tape")

    def __init__(self, out, inputs, backward_fn, tape):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.visits = 0
        self.tape = tape


class GradTape:
    """Ordered record of executed ops for one forward pass.

    Recording happens only inside ``with GradTape() as tape:`` and only for
    ops whose inputs require gradients; everything else runs as plain numpy.
    ``backward`` replays the record in reverse execution order (a valid
    reverse topological order, since ops are appended as they execute) and
    visits each recorded op at most once; ops that received no upstream
    gradient are skipped.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self):
        return len(self._nodes)

    @property
    def nodes(self):
        return tuple(self._nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss)


def active_tape() -> GradTape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(out: Tensor, inputs: tuple, backward_fn) -> Tensor:
    """Attach a backward rule for ``out`` computed from ``inputs``.

    ``backward_fn(grad_out) -> tuple[np.ndarray | None, ...]`` returns one
    gradient per input (None for inputs that take no gradient). The rule
    recorded here is what backward replays, whatever the forward did; this is
    the hook surrogate-gradient and straight-through ops use.
    """
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    node = _Node(out, inputs, backward_fn, tape)
    out._node = node
    tape._nodes.append(node)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dx into ``.grad`` of every reachable tensor.

    ``loss`` must be a scalar recorded on a tape. Repeated calls without
    zeroing grads accumulate, by design. Gradient arrays are never mutated
    in place (accumulation allocates), so shared references stay safe.
    """
    if loss._node is None:
        raise ValueError("backward: loss tensor was not recorded on a tape")
    if loss.data.size != 1:
        raise ValueError(
            f"backward: loss must be a scalar, got shape {loss.data.shape}"
        )
    tape = loss._node.tape
    # Per-call gradients flowing to each not-yet-visited producer node;
    # .grad on tensors is the cross-call accumulator.
    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape._nodes):
        g = flow.pop(id(node.out), None)
        if g is None:
            continue
        node.visits += 1
        out = node.out
        out.grad = g if out.grad is None else out.grad + g
        for t, gt in zip(node.inputs, node.backward_fn(g)):
            if gt is None or not t.requires_grad:
                continue
            if t._node is not None and t._node.tape is tape:
                prev = flow.get(id(t))
                flow[id(t)] = gt if prev is None else prev + gt
            else:
                # leaf (or produced on another tape): deposit directly
                t.grad = gt if t.grad is None else t.grad + gt


# ---------------------------------------------------------------------------
# elementwise ops (identical shapes; no broadcasting)
# ---------------------------------------------------------------------------


def _check_same_shape(opname, a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(
            f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}"
        )


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)
    return record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)
    return record(out, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * x.dtype.type(c))
    return record(out, (x,), lambda g: (g * x.dtype.type(c),))


def shift(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data + x.dtype.type(c))
    return record(out, (x,), lambda g: (g,))


def _check_binary(opname, t):
    d = t.data
    if not np.all((d == 0) | (d == 1)):
        raise ValueError(f"{opname}: inputs must take values in {{0, 1}}")


def logical_and(a: Tensor, b: Tensor, validate: bool = True) -> Tensor:
    """Differentiable AND on {0,1} tensors: a * b."""
    _check_same_shape("logical_and", a, b)
    if validate:
        _check_binary("logical_and", a)
        _check_binary("logical_and", b)
    out = Tensor(a.data * b.data)
    return record(out, (a, b), lambda g: (g * b.data, g * a.data))


def logical_iand(a: Tensor, b: Tensor, validate: bool = True) -> Tensor:
    """Differentiable inverted-AND on {0,1} tensors: (1 - a) * b."""
    _check_same_shape("logical_iand", a, b)
    if validate:
        _check_binary("logical_iand", a)
        _check_binary("logical_iand", b)
    out = Tensor((1.0 - a.data) * b.data)
    return record(out, (a, b), lambda g: (-g * b.data, g * (1.0 - a.data)))


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    return record(out, (x,), lambda g: (g * (x.data > 0),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    return record(out, (x,), lambda g: (g * y * (1.0 - y),))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(np.mean(x.data, axis=axis))
    n = x.data.size if axis is None else x.data.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.full_like(x.data, 1.0 / n) * g,)
        return (np.expand_dims(g, axis) * np.asarray(1.0 / n, x.dtype) * np.ones_like(x.data),)

    return record(out, (x,), bwd)


def take_rows(x: Tensor, rows, axis: int) -> Tensor:
    """Gather unique indices along one axis (used to drop pilot rows)."""
    rows = np.asarray(rows, dtype=np.intp)
    if len(np.unique(rows)) != len(rows):
        raise ValueError("take_rows: indices must be unique")
    out = Tensor(np.take(x.data, rows, axis=axis))

    def bwd(g):
        gx = np.zeros_like(x.data)
        idx = [slice(None)] * x.data.ndim
        idx[axis] = rows
        gx[tuple(idx)] = g
        return (gx,)

    return record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# conv2d, layer norm
# ---------------------------------------------------------------------------


def _im2col(xp: np.ndarray, k: int):
    # xp: padded (B, C, Hp, Wp) -> (C*k*k, B*H*W) with columns ordered (b,h,w)
    b, c, hp, wp = xp.shape
    h, w = hp - k + 1, wp - k + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, b * h * w)
    return np.ascontiguousarray(cols), h, w


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """2-D cross-correlation, stride 1, odd kernel, same zero padding.

    ``x`` is (C_in, H, W) or (B, C_in, H, W); ``kernel`` is
    (C_out, C_in, K, K); ``bias`` is (C_out,) or None.
    """
    kd = kernel.data
    if kd.ndim != 4 or kd.shape[2] != kd.shape[3]:
        raise ValueError(f"conv2d: kernel must be (C_out, C_in, K, K), got {kd.shape}")
    k = kd.shape[2]
    if k % 2 != 1:
        raise ValueError(f"conv2d: kernel size must be odd for same padding, got {k}")
    unbatched = x.data.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d: input must be (C,H,W) or (B,C,H,W), got {x.data.shape}")
    if xd.shape[1] != kd.shape[1]:
        raise ValueError(
            f"conv2d: kernel expects {kd.shape[1]} input channels, "
            f"got input shape {x.data.shape} vs kernel shape {kd.shape}"
        )
    if bias is not None and bias.data.shape != (kd.shape[0],):
        raise ValueError(
            f"conv2d: bias shape {bias.data.shape} does not match C_out={kd.shape[0]}"
        )
    bsz, cin, h, w = xd.shape
    cout = kd.shape[0]
    p = k // 2
    cols, _, _ = _im2col(np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))), k)
    wmat = kd.reshape(cout, cin * k * k)
    out_mat = wmat @ cols  # (C_out, B*H*W)
    y = out_mat.reshape(cout, bsz, h, w).transpose(1, 0, 2, 3)
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    else:
        y = np.ascontiguousarray(y)
    out = Tensor(y[0] if unbatched else y)

    def bwd(g):
        gd = g[None] if unbatched else g
        g_mat = gd.transpose(1, 0, 2, 3).reshape(cout, bsz * h * w)
        # im2col of x is recomputed rather than kept from the forward: the
        # tape holds every intermediate alive, and dropping these buffers
        # (the largest per-op state) is a net win on CPU
        xd2 = x.data[None] if unbatched else x.data
        xcols, _, _ = _im2col(np.pad(xd2, ((0, 0), (0, 0), (p, p), (p, p))), k)
        gw = (g_mat @ xcols.T).reshape(kd.shape)
        gb = None if bias is None else gd.sum(axis=(0, 2, 3))
        # input grad: full correlation with the flipped kernel
        gpad = np.pad(gd, ((0, 0), (0, 0), (p, p), (p, p)))
        gcols, _, _ = _im2col(gpad, k)
        wrot = kd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, cout * k * k)
        gx = (wrot @ gcols).reshape(cin, bsz, h, w).transpose(1, 0, 2, 3)
        gx = gx[0] if unbatched else gx
        if bias is None:
            return (gx, gw)
        return (gx, gw, gb)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record(out, inputs, bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta_shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the channel axis at each spatial position.

    ``x`` is (C, H, W) or (B, C, H, W); ``gamma``/``beta_shift`` are (C,).
    """
    unbatched = x.data.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4:
        raise ValueError(f"layer_norm: input must be (C,H,W) or (B,C,H,W), got {x.data.shape}")
    c = xd.shape[1]
    if gamma.data.shape != (c,) or beta_shift.data.shape != (c,):
        raise ValueError(
            f"layer_norm: gamma/beta must have shape ({c},), got "
            f"{gamma.data.shape} and {beta_shift.data.shape}"
        )
    dt = xd.dtype.type
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + dt(eps))
    xhat = xc * inv
    y = xhat * gamma.data[None, :, None, None] + beta_shift.data[None, :, None, None]
    out = Tensor(y[0] if unbatched else y)

    def bwd(g):
        gd = g[None] if unbatched else g
        gxh = gd * gamma.data[None, :, None, None]
        m1 = gxh.mean(axis=1, keepdims=True)
        m2 = np.mean(gxh * xhat, axis=1, keepdims=True)
        gx = inv * (gxh - m1 - xhat * m2)
        ggamma = (gd * xhat).sum(axis=(0, 2, 3))
        gbeta = gd.sum(axis=(0, 2, 3))
        gx = gx[0] if unbatched else gx
        return (gx, ggamma, gbeta)

    return record(out, (x, gamma, beta_shift), bwd)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def bce_loss(p: Tensor, labels: Tensor) -> Tensor:
    """Binary cross-entropy, averaged over every element.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs, so the
    per-element loss is bounded by -log(1e-7) ~= 16.12. Labels must be 0/1
    and take no gradient.
    """
    _check_same_shape("bce_loss", p, labels)
    y = labels.data
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce_loss: labels must take values in {0, 1}")
    dt = p.dtype.type
    lo, hi = dt(BCE_CLAMP), dt(1.0 - BCE_CLAMP)
    pc = np.clip(p.data, lo, hi)
    terms = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    out = Tensor(np.asarray(terms.mean(), dtype=p.dtype))
    n = p.data.size

    def bwd(g):
        # clamp saturations take zero gradient
        inside = (p.data > lo) & (p.data < hi)
        gp = g * (pc - y) / (pc * (1.0 - pc)) / dt(n) * inside
        return (gp.astype(p.dtype, copy=False), None)

    return record(out, (p, labels), bwd)
