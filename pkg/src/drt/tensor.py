"""Dense tensors with reverse-mode automatic differentiation.

numpy supplies the numeric kernels; this module adds a define-by-run tape
on top. Every differentiable op records its parents and a backward rule;
``backward`` replays the tape in reverse topological order and accumulates
gradients on leaf tensors, summing contributions when a tensor is reused
(which is what makes recursive weight sharing come out right).

Kernels are deterministic: reductions happen in a fixed index order, so
repeated runs on one platform are bitwise identical. dtype is preserved
end to end: float32 for training and inference, float64 for gradient
checks and other verification work.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericError",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "linear",
    "softmax",
    "layer_norm",
    "conv2d",
    "leaky_relu",
    "gelu",
    "reshape",
    "transpose",
    "take",
    "getitem",
    "tensor_sum",
    "tensor_mean",
    "upsample_nearest",
    "grad_check",
    "GradCheckReport",
]

DEFAULT_DTYPE = np.float32

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / FD probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense n-d array, optionally carrying a gradient and a tape node.

    ``data`` is the value buffer, ``grad`` (same shape) is populated by
    ``backward`` on leaves with ``requires_grad``. Tensors produced by ops
    are treated as immutable.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None and not isinstance(data, np.ndarray):
            dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return _scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def backward(self):
        backward(self)

    def zero_grad(self):
        self.grad = None


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _result(data: np.ndarray, parents, backward_fn) -> Tensor:
    """Build an op-output tensor, recording the tape node only if needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------
# backward engine
# ----------------------------------------------------------------------

def _toposort(root: Tensor):
    """Iterative post-order DFS; parents come before consumers."""
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return topo


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Gradients of every reachable leaf with ``requires_grad`` are
    accumulated into ``.grad`` (summed over all uses of the leaf, and
    across repeated ``backward`` calls until ``zero_grad``).
    """
    if loss._backward is None:
        raise RuntimeError("backward() on a tensor that has no computation graph")
    if loss.data.size != 1:
        raise ShapeError(f"backward() requires a scalar loss, got shape {tuple(loss.shape)}")

    topo = _toposort(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = pending.get(id(parent))
                pending[id(parent)] = pg if acc is None else acc + pg
        elif node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g


def zero_grads(tensors) -> None:
    """Drop the grad buffer of every tensor in the iterable."""
    for t in tensors:
        t.grad = None


# ----------------------------------------------------------------------
# elementwise and arithmetic ops
# ----------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bw(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), bw)


def _scale(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def bw(g):
        return (g * s,)

    return _result(data, (a,), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        return (-g,)

    return _result(-a.data, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product contracting a's last with b's second-to-last axis.

    Leading batch extents must agree exactly (no batch broadcasting).
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {tuple(a.shape)} x {tuple(b.shape)}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch: {tuple(a.shape)} x {tuple(b.shape)}")
    data = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map over the last axis: x[..., D_in] @ w[D_in, D_out] + b."""
    if w.ndim != 2:
        raise ShapeError(f"linear weight must be 2-d, got {tuple(w.shape)}")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {tuple(b.shape)} != ({w.shape[1]},)")
    data = x.data @ w.data + b.data

    def bw(g):
        gx = g @ w.data.T if x.requires_grad else None
        lead = tuple(range(x.ndim - 1))
        gw = np.tensordot(x.data, g, axes=(lead, lead)) if w.requires_grad else None
        gb = g.sum(axis=lead) if b.requires_grad else None
        return gx, gw, gb

    return _result(data, (x, w, b), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Exp-normalize along ``axis`` with max subtraction for stability."""
    ax = axis if axis >= 0 else x.ndim + axis
    if not 0 <= ax < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {tuple(x.shape)}")
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        inner = (g * y).sum(axis=ax, keepdims=True)
        return (y * (g - inner),)

    return _result(y, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (population variance), then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: affine shapes {tuple(gamma.shape)}/{tuple(beta.shape)} != ({d},)"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(x.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        if x.requires_grad:
            gh = g * gamma.data
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xhat).mean(axis=-1, keepdims=True)
            gx = inv * (gh - m1 - xhat * m2)
        else:
            gx = None
        return gx, ggamma, gbeta

    return _result(data, (x, gamma, beta), bw)


def _conv_out_extent(n: int, k: int, stride: int, padding: int) -> int:
    span = n + 2 * padding - k
    if span < 0:
        raise ShapeError(f"conv2d: kernel {k} exceeds padded extent {n + 2 * padding}")
    if span % stride != 0:
        raise ShapeError(
            f"conv2d: non-integral output extent for size {n}, kernel {k}, "
            f"stride {stride}, padding {padding}"
        )
    return span // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """[B, C, Hp, Wp] -> [B, C*kh*kw, oh*ow] patch matrix."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for ki in range(kh):
        hi = ki + (oh - 1) * stride + 1
        for kj in range(kw):
            wj = kj + (ow - 1) * stride + 1
            cols[:, :, ki, kj] = xp[:, :, ki:hi:stride, kj:wj:stride]
    return cols.reshape(b, c * kh * kw, oh * ow)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation with zero padding.

    x: [B, C_in, H, W]; w: [C_out, C_in, kh, kw]; b: [C_out].
    Output extents: (H + 2*padding - kh) / stride + 1 (must divide evenly).
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input/weight, got {tuple(x.shape)} / {tuple(w.shape)}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: channel mismatch {x.shape[1]} vs {w.shape[1]}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    cout, cin, kh, kw = w.shape
    if b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {tuple(b.shape)} != ({cout},)")
    bsz, _, h, ww_ = x.shape
    oh = _conv_out_extent(h, kh, stride, padding)
    ow = _conv_out_extent(ww_, kw, stride, padding)

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)  # [B, CKK, oh*ow]
    w2 = w.data.reshape(cout, cin * kh * kw)
    out = np.matmul(w2, cols) + b.data[:, None]  # [B, cout, oh*ow]
    data = out.reshape(bsz, cout, oh, ow)

    def bw(g):
        g2 = g.reshape(bsz, cout, oh * ow)
        gw = None
        if w.requires_grad:
            gw = np.tensordot(g2, cols, axes=((0, 2), (0, 2))).reshape(w.shape)
        gb = g.sum(axis=(0, 2, 3)) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2).reshape(bsz, cin, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for ki in range(kh):
                hi = ki + (oh - 1) * stride + 1
                for kj in range(kw):
                    wj = kj + (ow - 1) * stride + 1
                    dxp[:, :, ki:hi:stride, kj:wj:stride] += dcols[:, :, ki, kj]
            gx = dxp[:, :, padding:padding + h, padding:padding + ww_] if padding else dxp
        return gx, gw, gb

    return _result(data, (x, w, b), bw)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    data = np.where(x.data >= 0, x.data, x.data * np.asarray(slope, dtype=x.data.dtype))

    def bw(g):
        return (np.where(x.data >= 0, g, g * np.asarray(slope, dtype=g.dtype)),)

    return _result(data, (x,), bw)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + _erf(x.data * _INV_SQRT2))
    data = x.data * cdf

    def bw(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return _result(data.astype(x.data.dtype, copy=False), (x,), bw)


# ----------------------------------------------------------------------
# shape / indexing ops (bijective where applicable)
# ----------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(x.shape),)

    return _result(data, (x,), bw)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.transpose(x.data, axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return _result(data, (x,), bw)


def getitem(x: Tensor, key) -> Tensor:
    """Basic (slice/int/ellipsis) indexing; gradient scatters back as zeros-fill."""
    data = x.data[key]

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[key] = g
        return (gx,)

    return _result(data, (x,), bw)


def take(x: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with a 1-d integer index array; backward scatter-adds."""
    idx = np.asarray(indices)
    if idx.ndim != 1:
        raise ShapeError(f"take: index array must be 1-d, got shape {idx.shape}")
    data = np.take(x.data, idx, axis=axis)

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(np.moveaxis(gx, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return _result(data, (x,), bw)


def tensor_sum(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def bw(g):
        return (np.full(x.shape, g, dtype=g.dtype),)

    return _result(data, (x,), bw)


def tensor_mean(x: Tensor) -> Tensor:
    data = np.asarray(x.data.mean(), dtype=x.data.dtype)
    n = x.data.size

    def bw(g):
        return (np.full(x.shape, g / n, dtype=g.dtype),)

    return _result(data, (x,), bw)


def zero_pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the spatial axes of a [B, C, H, W] tensor (possibly asymmetric)."""
    if min(top, bottom, left, right) < 0:
        raise ShapeError("zero_pad2d: negative padding")
    data = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    h, w = x.shape[2], x.shape[3]

    def bw(g):
        return (g[:, :, top:top + h, left:left + w],)

    return _result(data, (x,), bw)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Integer nearest-neighbour upsample of a [B, C, H, W] map."""
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bw(g):
        b, c, hf, wf = g.shape
        return (g.reshape(b, c, hf // factor, factor, wf // factor, factor).sum(axis=(3, 5)),)

    return _result(data, (x,), bw)


# ----------------------------------------------------------------------
# gradient checking
# ----------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"grad_check: max relative error {self.max_rel_error:.3e} (tolerance {self.tolerance:.1e}) {status}"


def grad_check(f, x: Tensor, step: float = 1e-5, tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of scalar-valued ``f`` at ``x`` with central differences.

    Requires float64: FD noise at the default step swamps float32. The
    relative error uses a small absolute floor so exactly-zero gradients
    compare cleanly.
    """
    if x.data.dtype != np.float64:
        raise ValueError("grad_check requires a float64 tensor")
    if not x.requires_grad:
        raise ValueError("grad_check target must have requires_grad=True")

    x.grad = None
    out = f(x)
    if out.data.size != 1:
        raise ShapeError("grad_check: f must be scalar-valued")
    backward(out)
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            fp = float(f(x).data)
            flat[i] = keep - step
            fm = float(f(x).data)
            flat[i] = keep
            nflat[i] = (fp - fm) / (2.0 * step)

    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    max_rel = float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
    x.grad = None
    return GradCheckReport(max_rel_error=max_rel, tolerance=tolerance, passed=max_rel < tolerance)
