"""Minimal reverse-mode autodiff on float64 numpy arrays.

Just enough machinery for the learned comparators in this package:
dense layers, stride-2 convolutions, gated recurrent cells, softmax
attention, and Gaussian losses.  Everything runs in double precision so
analytic gradients can be verified against central finite differences
to tight tolerances.

Only leaves created with ``requires_grad=True`` (parameters) receive
gradients; graph construction skips bookkeeping for constant branches.
"""
from __future__ import annotations

import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch


class Tensor:
    """Node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: Tuple["Tensor", ...] = _parents
        self._backward: Optional[Callable[[np.ndarray], None]] = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from this (scalar) tensor through the graph."""
        if self.data.size != 1:
            raise DimensionMismatch("backward() requires a scalar loss")
        topo: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _make(data, parents: Sequence[Tensor], backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data**exponent

    def backward(g):
        if a.requires_grad:
            a._accum(g * exponent * a.data ** (exponent - 1.0))

    return _make(out_data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionMismatch(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(out_data, (a, b), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum(g * (1.0 - t * t))

    return _make(t, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            a._accum(g * s * (1.0 - s))

    return _make(s, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum(g * e)

    return _make(e, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum(g / a.data)

    return _make(out_data, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    r = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum(g * 0.5 / r)

    return _make(r, (a,), backward)


def maximum(a, floor: float) -> Tensor:
    """Elementwise max with a constant; gradient flows where a > floor."""
    a = as_tensor(a)
    mask = a.data > floor
    out_data = np.where(mask, a.data, floor)

    def backward(g):
        if a.requires_grad:
            a._accum(g * mask)

    return _make(out_data, (a,), backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape).copy())

    return _make(out_data, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accum(g.reshape(a.shape))

    return _make(out_data, (a,), backward)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        if a.requires_grad:
            a._accum(np.transpose(g, inverse))

    return _make(out_data, (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def backward(g):
        offset = 0
        for t, n in zip(ts, sizes):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offset, offset + n)
                t._accum(g[tuple(sl)])
            offset += n

    return _make(out_data, tuple(ts), backward)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out_data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)

    return _make(out_data, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * s).sum(axis=axis, keepdims=True)
            a._accum(s * (g - inner))

    return _make(s, (a,), backward)


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d convolution: x (N,C,H,W), w (OC,C,kh,kw), optional bias (OC,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionMismatch(f"conv2d expects 4-d input/kernel, got {x.shape}, {w.shape}")
    N, C, Hh, Ww = x.shape
    OC, IC, kh, kw = w.shape
    if IC != C:
        raise DimensionMismatch(f"conv2d channel mismatch: input {C}, kernel {IC}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    Hp, Wp = Hh + 2 * pad, Ww + 2 * pad
    OH = (Hp - kh) // stride + 1
    OW = (Wp - kw) // stride + 1
    if OH <= 0 or OW <= 0:
        raise DimensionMismatch("conv2d output would be empty")
    out_data = np.zeros((N, OC, OH, OW))
    for di in range(kh):
        for dj in range(kw):
            xs = xp[:, :, di : di + (OH - 1) * stride + 1 : stride,
                    dj : dj + (OW - 1) * stride + 1 : stride]
            out_data += np.einsum("ncij,oc->noij", xs, w.data[:, :, di, dj])
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out_data = out_data + b.data.reshape(1, OC, 1, 1)
        parents.append(b)

    def backward(g):
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=(0, 2, 3)))
        need_x = x.requires_grad
        need_w = w.requires_grad
        if not (need_x or need_w):
            return
        dxp = np.zeros((N, C, Hp, Wp)) if need_x else None
        for di in range(kh):
            for dj in range(kw):
                sl = np.s_[:, :, di : di + (OH - 1) * stride + 1 : stride,
                           dj : dj + (OW - 1) * stride + 1 : stride]
                if need_w:
                    if w.grad is None:
                        w.grad = np.zeros_like(w.data)
                    w.grad[:, :, di, dj] += np.einsum("ncij,noij->oc", xp[sl], g)
                if need_x:
                    dxp[sl] += np.einsum("noij,oc->ncij", g, w.data[:, :, di, dj])
        if need_x:
            if pad:
                x._accum(dxp[:, :, pad : pad + Hh, pad : pad + Ww])
            else:
                x._accum(dxp)

    return _make(out_data, tuple(parents), backward)


# -- parameters ---------------------------------------------------------

def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64).copy(), requires_grad=True)


def dense_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    return parameter(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)))


def conv_init(rng: np.random.Generator, oc: int, ic: int, kh: int, kw: int) -> Tensor:
    return parameter(rng.normal(0.0, 1.0 / math.sqrt(ic * kh * kw), size=(oc, ic, kh, kw)))


def zeros_param(*shape: int) -> Tensor:
    return parameter(np.zeros(shape))


def zero_grads(params: Dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def global_grad_norm(params: Dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return math.sqrt(total)


def sgd_step(params: Dict[str, Tensor], lr: float, clip_norm: Optional[float] = None) -> None:
    """Plain gradient descent with optional global gradient-norm clipping."""
    scale = 1.0
    if clip_norm is not None:
        norm = global_grad_norm(params)
        if norm > clip_norm and norm > 0.0:
            scale = clip_norm / norm
    for p in params.values():
        if p.grad is not None:
            p.data -= lr * scale * p.grad


# -- finite-difference verification ------------------------------------

def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: Dict[str, Tensor],
    rng: np.random.Generator,
    n_samples: int = 200,
    eps: float = 1e-5,
) -> Dict[str, float]:
    """Compare backprop gradients against central finite differences.

    ``loss_fn`` must rebuild the loss graph from the live ``params`` on
    every call.  A random subset of at least ``n_samples`` scalar
    parameters is probed (all of them when fewer exist).  Returns a
    report with ``max_rel_err`` using the relative error
    |g_bp - g_fd| / max(|g_bp|, |g_fd|, 1e-8).
    """
    zero_grads(params)
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    slots = []
    for name, p in params.items():
        for flat_idx in range(p.data.size):
            slots.append((name, flat_idx))
    if len(slots) > n_samples:
        chosen = rng.choice(len(slots), size=n_samples, replace=False)
        slots = [slots[int(i)] for i in chosen]

    max_rel = 0.0
    worst = ""
    for name, flat_idx in slots:
        p = params[name]
        flat = p.data.reshape(-1)
        saved = flat[flat_idx]
        flat[flat_idx] = saved + eps
        lp = float(loss_fn().data)
        flat[flat_idx] = saved - eps
        lm = float(loss_fn().data)
        flat[flat_idx] = saved
        g_fd = (lp - lm) / (2.0 * eps)
        g_bp = float(analytic[name].reshape(-1)[flat_idx])
        rel = abs(g_bp - g_fd) / max(abs(g_bp), abs(g_fd), 1e-8)
        if rel > max_rel:
            max_rel = rel
            worst = f"{name}[{flat_idx}]"
    return {"max_rel_err": max_rel, "n_checked": len(slots), "worst": worst}
