"""Tape-based reverse-mode automatic differentiation on dense numpy arrays.

Design notes:
  * Define-by-run: a fresh ``Tape`` is opened per forward pass; primitives
    record themselves on the innermost active tape whenever an input
    requires gradients.  Without an active tape, ops run untracked
    (inference mode).
  * All float data is 64-bit.  Gradient accumulation is additive: calling
    ``backward`` twice without resetting grads doubles them.
  * Randomness never enters a primitive.  Dropout takes a precomputed mask
    so every primitive is a pure function of its inputs.
  * ``stop_gradient`` and ``straight_through`` are the two gradient hooks;
    everything else has an analytic backward checked against central
    finite differences.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractViolation

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "affine",
    "matmul",
    "softmax",
    "log",
    "clip",
    "relu",
    "gelu",
    "layer_norm",
    "embedding_lookup",
    "gather_last",
    "concat",
    "slice_axis",
    "reshape",
    "transpose",
    "mean_pool",
    "masked_mean_vec",
    "masked_slice_norm_mean",
    "smoothed_cross_entropy",
    "dropout_apply",
    "sum_all",
    "stop_gradient",
    "straight_through",
]


class Tensor:
    """Dense float64 array plus an additive gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray, transfer: bool = False):
        """Add g into the gradient accumulator.

        ``transfer=True`` promises the caller will never touch g again, so
        it can be adopted (or added in place) without a defensive copy.
        """
        if self.grad is None:
            self.grad = g if transfer else np.array(g, dtype=np.float64, copy=True)
        elif transfer:
            self.grad += g
        else:
            self.grad = self.grad + g

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = self.name or "tensor"
        return f"<{tag} shape={self.data.shape} grad={'yes' if self.requires_grad else 'no'}>"

    # Light operator sugar; the named functions below are the primary API.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class _Record:
    __slots__ = ("out", "inputs", "backward_fn", "op")

    def __init__(self, out, inputs, backward_fn, op):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Walking the records in reverse order is a valid topological order of
    the define-by-run graph, so backward is a single deterministic sweep.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._records)

    def _record(self, out, inputs, backward_fn, op):
        self._records.append(_Record(out, inputs, backward_fn, op))

    def backward(self, loss: Tensor):
        """Populate ``grad`` on every requires-grad tensor reachable from loss.

        Propagation uses private per-call buffers, then adds them into the
        tensors' accumulators, so repeated calls add (never rescale) grads.
        """
        if loss.data.ndim != 0 and loss.data.size != 1:
            raise ContractViolation(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        deltas: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        touched: dict[int, Tensor] = {id(loss): loss}
        # Buffers this call allocated itself may be mutated in place and
        # handed to tensors without copying; first-contribution buffers may
        # alias a backward function's output (e.g. a reshape view), so they
        # are added out-of-place and copied on handover.
        owned: set[int] = {id(loss)}
        for rec in reversed(self._records):
            g = deltas.get(id(rec.out))
            if g is None:
                continue
            grads = rec.backward_fn(g)
            for t, gi in zip(rec.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key not in deltas:
                    deltas[key] = np.asarray(gi, dtype=np.float64)
                    touched[key] = t
                elif key in owned:
                    deltas[key] += gi
                else:
                    deltas[key] = deltas[key] + gi
                    owned.add(key)
        for key, t in touched.items():
            t.accumulate_grad(deltas[key], transfer=key in owned)


def backward(loss: Tensor, tape: Tape | None = None):
    """Run reverse-mode accumulation from a scalar loss."""
    if tape is None:
        if not _TAPE_STACK:
            raise ContractViolation("backward called with no active tape")
        tape = _TAPE_STACK[-1]
    tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    track = bool(_TAPE_STACK) and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        _TAPE_STACK[-1]._record(out, inputs, backward_fn, op)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over the axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _apply("add", out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _apply("sub", out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _apply("mul", out, (a, b), bw)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = x.data * c

    def bw(g):
        return (g * c,)

    return _apply("scale", out, (x,), bw)


def affine(x: Tensor, mult: float, shift: float) -> Tensor:
    """mult * x + shift with python-float coefficients."""
    mult, shift = float(mult), float(shift)
    out = x.data * mult + shift

    def bw(g):
        return (g * mult,)

    return _apply("affine", out, (x,), bw)


def matmul(a, b) -> Tensor:
    """numpy-semantics matmul: (..., m, k) @ (..., k, n) with broadcast batch dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ContractViolation(
            f"matmul requires >=2-d operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ContractViolation(
            f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}"
        )
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _apply("matmul", out, (a, b), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _apply("softmax", s, (x,), bw)


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)

    def bw(g):
        return (g / x.data,)

    return _apply("log", out, (x,), bw)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp with zero gradient outside [lo, hi]."""
    out = np.clip(x.data, lo, hi)
    inside = ((x.data >= lo) & (x.data <= hi)).astype(np.float64)

    def bw(g):
        return (g * inside,)

    return _apply("clip", out, (x,), bw)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    pos = (x.data > 0.0).astype(np.float64)

    def bw(g):
        return (g * pos,)

    return _apply("relu", out, (x,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU (smooth, finite-difference friendly)."""
    xd = x.data
    x2 = xd * xd
    u = x2 * xd
    u *= 0.044715
    u += xd
    u *= _GELU_C
    t = np.tanh(u)
    half_1pt = t + 1.0
    half_1pt *= 0.5
    out = half_1pt * xd

    def bw(g):
        du = x2 * (3.0 * 0.044715)
        du += 1.0
        du *= _GELU_C * 0.5
        dt = t * t
        np.subtract(1.0, dt, out=dt)
        dt *= du  # 0.5 * (1 - t^2) * C * (1 + 3*0.044715*x^2)
        dt *= xd
        dt += half_1pt
        return (g * dt,)

    return _apply("gelu", out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis; a constant vector maps to exact zeros pre-gain/bias."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ContractViolation(
            f"layer_norm gain/bias must have shape ({d},), got {gain.data.shape}/{bias.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gg = g * gain.data
        # d xhat / d x folded analytically
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gg - m1 - xhat * m2)
        ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        gbias = g.reshape(-1, d).sum(axis=0)
        return gx, ggain, gbias

    return _apply("layer_norm", out, (x, gain, bias), bw)


# ---------------------------------------------------------------------------
# indexing / shape primitives
# ---------------------------------------------------------------------------


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ContractViolation(
            f"embedding_lookup id out of range [0, {table.data.shape[0]}): "
            f"min={ids.min()} max={ids.max()}"
        )
    out = table.data[ids]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return _apply("embedding_lookup", out, (table,), bw)


def gather_last(x: Tensor, ids: np.ndarray) -> Tensor:
    """Pick one entry along the last axis per leading position."""
    ids = np.asarray(ids)
    if ids.shape != x.data.shape[:-1]:
        raise ContractViolation(
            f"gather_last ids shape {ids.shape} must match leading dims {x.data.shape[:-1]}"
        )
    flat = x.data.reshape(-1, x.data.shape[-1])
    rows = np.arange(flat.shape[0])
    out = flat[rows, ids.reshape(-1)].reshape(ids.shape)

    def bw(g):
        gx = np.zeros_like(flat)
        gx[rows, ids.reshape(-1)] = g.reshape(-1)
        return (gx.reshape(x.data.shape),)

    return _apply("gather_last", out, (x,), bw)


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _apply("concat", out, tuple(parts), bw)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    axis = axis % x.data.ndim
    idx = tuple(
        slice(start, stop) if i == axis else slice(None) for i in range(x.data.ndim)
    )
    out = x.data[idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _apply("slice", out, (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(x.data.shape),)

    return _apply("reshape", out, (x,), bw)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = x.data.transpose(axes)

    def bw(g):
        return (g.transpose(inv),)

    return _apply("transpose", out, (x,), bw)


# ---------------------------------------------------------------------------
# pooling / reductions
# ---------------------------------------------------------------------------


def mean_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over the time axis of [B, T, D] restricted to mask==True positions."""
    if x.data.ndim != 3 or mask.shape != x.data.shape[:2]:
        raise ContractViolation(
            f"mean_pool expects x [B,T,D] and mask [B,T], got {x.data.shape} / {mask.shape}"
        )
    m = mask.astype(np.float64)
    counts = m.sum(axis=1)
    if np.any(counts == 0):
        raise ContractViolation("mean_pool: a sequence has no unmasked positions")
    out = (x.data * m[:, :, None]).sum(axis=1) / counts[:, None]

    def bw(g):
        return ((g[:, None, :] / counts[:, None, None]) * m[:, :, None],)

    return _apply("mean_pool", out, (x,), bw)


def masked_mean_vec(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of a flat vector over mask==True entries; scalar output."""
    m = np.asarray(mask, dtype=np.float64).reshape(-1)
    if m.shape != x.data.reshape(-1).shape:
        raise ContractViolation(
            f"masked_mean_vec mask shape {mask.shape} must match x {x.data.shape}"
        )
    count = m.sum()
    if count == 0:
        raise ContractViolation("masked_mean_vec: empty mask")
    out = np.asarray((x.data.reshape(-1) * m).sum() / count)

    def bw(g):
        return ((g * m / count).reshape(x.data.shape),)

    return _apply("masked_mean_vec", out, (x,), bw)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def bw(g):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _apply("sum_all", out, (x,), bw)


def masked_slice_norm_mean(x: Tensor, mask: np.ndarray, n_slices: int) -> Tensor:
    """Mean over unmasked token-slices of the Euclidean norm of each slice.

    x is [B, T, D] with D divisible by n_slices; masked positions contribute
    nothing.  Exact zero slices get subgradient zero (the norm's kink).
    """
    b, t, d = x.data.shape
    if d % n_slices != 0:
        raise ContractViolation(f"slice norm: D={d} not divisible by S={n_slices}")
    if mask.shape != (b, t):
        raise ContractViolation(f"slice norm: mask shape {mask.shape} != {(b, t)}")
    m = mask.astype(np.float64)
    count = m.sum() * n_slices
    if count == 0:
        raise ContractViolation("slice norm: empty mask")
    sliced = x.data.reshape(b, t, n_slices, d // n_slices)
    norms = np.sqrt((sliced * sliced).sum(axis=-1))  # [B, T, S]
    out = np.asarray((norms * m[:, :, None]).sum() / count)

    def bw(g):
        safe = np.where(norms > 0.0, norms, 1.0)
        gx = sliced / safe[:, :, :, None]
        gx = gx * (m[:, :, None, None] / count) * g
        gx[norms == 0.0] = 0.0
        return (gx.reshape(b, t, d),)

    return _apply("masked_slice_norm_mean", out, (x,), bw)


def smoothed_cross_entropy(
    logits: Tensor, targets: np.ndarray, mask: np.ndarray, smoothing: float = 0.0
) -> Tensor:
    """Label-smoothed cross entropy, mean over mask==True rows.

    The smoothed target distribution puts (1 - smoothing) on the gold label
    and spreads smoothing uniformly over the full vocabulary.
    """
    v = logits.data.shape[-1]
    flat = logits.data.reshape(-1, v)
    tg = np.asarray(targets).reshape(-1)
    m = np.asarray(mask, dtype=np.float64).reshape(-1)
    if tg.shape[0] != flat.shape[0] or m.shape[0] != flat.shape[0]:
        raise ContractViolation(
            f"cross entropy: logits rows {flat.shape[0]} vs targets {tg.shape[0]} / mask {m.shape[0]}"
        )
    if tg.size and (tg.min() < 0 or tg.max() >= v):
        raise ContractViolation(f"cross entropy: target id out of range [0, {v})")
    count = m.sum()
    if count == 0:
        raise ContractViolation("cross entropy: empty mask")
    mx = flat.max(axis=1, keepdims=True)
    lse = (mx + np.log(np.exp(flat - mx).sum(axis=1, keepdims=True))).reshape(-1)
    rows = np.arange(flat.shape[0])
    gold = flat[rows, tg]
    s = float(smoothing)
    # -sum_j q_j log p_j  with q = (1-s)*onehot + s/V
    row_loss = lse - (1.0 - s) * gold - (s / v) * flat.sum(axis=1)
    out = np.asarray((row_loss * m).sum() / count)

    def bw(g):
        p = np.exp(flat - lse[:, None])
        p[rows, tg] -= 1.0 - s
        p -= s / v
        p *= (m / count)[:, None] * g
        return (p.reshape(logits.data.shape),)

    return _apply("smoothed_cross_entropy", out, (logits,), bw)


def dropout_apply(x: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by an externally supplied keep/scale mask (pure function)."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.data.shape:
        raise ContractViolation(
            f"dropout mask shape {mask.shape} != input shape {x.data.shape}"
        )
    out = x.data * mask

    def bw(g):
        return (g * mask,)

    return _apply("dropout_mask_apply", out, (x,), bw)


# ---------------------------------------------------------------------------
# gradient hooks
# ---------------------------------------------------------------------------


def stop_gradient(x: Tensor) -> Tensor:
    """Forward identity; contributes zero gradient upstream."""
    return Tensor(x.data, requires_grad=False)


def straight_through(src: Tensor, dst: Tensor) -> Tensor:
    """Forward dst's values; route the full incoming gradient to src."""
    if src.data.shape != dst.data.shape:
        raise ContractViolation(
            f"straight_through shapes differ: src {src.data.shape} vs dst {dst.data.shape}"
        )

    def bw(g):
        return (g,)

    return _apply("straight_through", dst.data, (src,), bw)
