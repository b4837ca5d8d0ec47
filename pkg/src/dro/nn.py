"""Minimal dense-tensor reverse-mode gradient engine (float64 throughout).

Just enough ops for a small causal transformer: matmul, broadcast add,
layernorm, softmax, GELU, embedding lookup, attention masking, dropout, MSE,
sigmoid, plus the structural ops (reshape / transpose / token interleaving)
the architecture needs. Ops record their backward closure on the active
Tape; `backward` replays the tape in exact reverse order.

Forward calls outside a `with Tape():` block run in eval mode and record
nothing.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715


class Tensor:
    """Dense float64 array with a gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return np.ascontiguousarray(self.data).reshape(-1)

    def add_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Ordered record of backward closures for one forward pass."""

    def __init__(self):
        self._ops: list = []

    def record(self, backward_fn) -> None:
        self._ops.append(backward_fn)

    def __len__(self) -> int:
        return len(self._ops)

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None


def _record(fn) -> None:
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(fn)


def backward(tape: Tape, loss: Tensor) -> None:
    """Seed d(loss)/d(loss) = 1 and replay the tape in reverse order."""
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    loss.add_grad(np.ones_like(loss.data))
    for op in reversed(tape._ops):
        op()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b; either plain 2-D or stacked (..., m, k) @ (..., k, n) / (k, n)."""
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd():
        g = out.grad
        if g is None:
            return
        if b.data.ndim == 2 and a.data.ndim > 2:
            a.add_grad(g @ b.data.T)
            k, n = b.data.shape
            b.add_grad(a.data.reshape(-1, k).T @ g.reshape(-1, n))
        else:
            a.add_grad(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
            b.add_grad(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    _record(bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data + b.data)
    except ValueError as exc:
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}") from exc

    def bwd():
        g = out.grad
        if g is None:
            return
        a.add_grad(_unbroadcast(g, a.data.shape))
        b.add_grad(_unbroadcast(g, b.data.shape))

    _record(bwd)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)

    def bwd():
        if out.grad is not None:
            a.add_grad(out.grad * c)

    _record(bwd)
    return out


def layernorm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * weight.data + bias.data)

    def bwd():
        g = out.grad
        if g is None:
            return
        n = x.data.shape[-1]
        dxhat = g * weight.data
        weight.add_grad(_unbroadcast(g * xhat, weight.data.shape))
        bias.add_grad(_unbroadcast(g, bias.data.shape))
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
        x.add_grad(inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat))

    _record(bwd)
    return out


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd():
        g = out.grad
        if g is None:
            return
        x.add_grad(y * (g - (y * g).sum(axis=-1, keepdims=True)))

    _record(bwd)
    return out


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    u = _SQRT_2_OVER_PI * (x.data + _GELU_C * x.data**3)
    t = np.tanh(u)
    out = Tensor(0.5 * x.data * (1.0 + t))

    def bwd():
        g = out.grad
        if g is None:
            return
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x.data**2)
        x.add_grad(g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du))

    _record(bwd)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y)

    def bwd():
        if out.grad is not None:
            x.add_grad(out.grad * y * (1.0 - y))

    _record(bwd)
    return out


def embed(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup table[idx]; gradient scatter-adds into the table."""
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(table.data[idx])

    def bwd():
        g = out.grad
        if g is None:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    _record(bwd)
    return out


def causal_mask(scores: Tensor, allowed: np.ndarray) -> Tensor:
    """Attention mask: disallowed slots are pinned to -1e30 (softmax -> 0)."""
    try:
        allowed = np.broadcast_to(np.asarray(allowed, dtype=bool), scores.data.shape)
    except ValueError as exc:
        raise ValueError(
            f"mask shape {np.shape(allowed)} incompatible with scores {scores.shape}"
        ) from exc
    out = Tensor(np.where(allowed, scores.data, -1e30))

    def bwd():
        if out.grad is not None:
            scores.add_grad(np.where(allowed, out.grad, 0.0))

    _record(bwd)
    return out


def dropout(x: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-p) at train time."""
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * mask)

    def bwd():
        if out.grad is not None:
            x.add_grad(out.grad * mask)

    _record(bwd)
    return out


def mse(pred: Tensor, target: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared error; ``mask`` selects (and weights) the averaged slots."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.data.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    if mask is None:
        weights = np.ones_like(pred.data)
    else:
        weights = np.broadcast_to(np.asarray(mask, dtype=np.float64), pred.data.shape)
    denom = weights.sum()
    if denom == 0:
        raise ValueError("mse mask selects nothing")
    diff = pred.data - target
    out = Tensor(np.array((weights * diff * diff).sum() / denom))

    def bwd():
        if out.grad is not None:
            pred.add_grad(out.grad * 2.0 * weights * diff / denom)

    _record(bwd)
    return out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def bwd():
        if out.grad is not None:
            x.add_grad(out.grad.reshape(x.data.shape))

    _record(bwd)
    return out


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    out = Tensor(x.data.transpose(axes))
    inverse = np.argsort(axes)

    def bwd():
        if out.grad is not None:
            x.add_grad(out.grad.transpose(inverse))

    _record(bwd)
    return out


def interleave3(a: Tensor, b: Tensor, c: Tensor) -> Tensor:
    """(B, T, E) x3 -> (B, 3T, E) with layout [a_0, b_0, c_0, a_1, ...]."""
    bsz, t, e = a.data.shape
    out_data = np.empty((bsz, 3 * t, e))
    out_data[:, 0::3] = a.data
    out_data[:, 1::3] = b.data
    out_data[:, 2::3] = c.data
    out = Tensor(out_data)

    def bwd():
        g = out.grad
        if g is None:
            return
        a.add_grad(g[:, 0::3])
        b.add_grad(g[:, 1::3])
        c.add_grad(g[:, 2::3])

    _record(bwd)
    return out


def take_every3(x: Tensor, offset: int) -> Tensor:
    """(B, 3T, E) -> (B, T, E), rows offset, offset+3, ..."""
    out = Tensor(x.data[:, offset::3].copy())

    def bwd():
        if out.grad is None:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[:, offset::3] += out.grad

    _record(bwd)
    return out


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay
# ---------------------------------------------------------------------------


class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(
    params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState
) -> None:
    """One in-place update; weight decay is decoupled from the moments."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.data.shape}")
        if state.weight_decay:
            p.data -= state.lr * state.weight_decay * p.data
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# Checkpoint format: 16-byte header (magic, version, count), little-endian
# ---------------------------------------------------------------------------

_MAGIC = b"DROTENS\x00"
_VERSION = 1


def save_checkpoint(path, arrays: Sequence[np.ndarray]) -> None:
    """Shapes + row-major float64 values, little-endian, order preserved."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(arrays)))
        for arr in arrays:
            arr = np.asarray(arr, dtype=np.float64)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def load_checkpoint(path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"bad checkpoint magic: {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            buf = fh.read(8 * n)
            arrays.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
        return arrays
