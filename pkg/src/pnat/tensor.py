"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps one ndarray plus an optional gradient. Ops build a tape of
backward closures; ``Tensor.backward()`` walks it in reverse topological
order. Values are float64 by default (test mode); training code may switch
to float32 with ``set_default_dtype`` for speed.

Integer data (token ids, permutations, bucket indices) never lives in
Tensors; it is passed around as plain numpy int arrays.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, NumericalError

_DEFAULT_DTYPE = np.float64
_DEBUG_CHECKS = False
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported default dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def using_dtype(dtype):
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


def set_debug_checks(enabled: bool) -> None:
    """When on, every op output is scanned for NaN/Inf (slow; test mode)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (evaluation fast path)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_grad_owned")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._grad_owned = False

    # -- introspection ----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- graph bookkeeping -------------------------------------------------

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None
        self._grad_owned = False

    def _accumulate(self, g: np.ndarray) -> None:
        # first contribution is held by reference; a second one forces a
        # private buffer so shared gradient arrays are never mutated
        if self.grad is None:
            self.grad = g
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._grad_owned = True

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad needs a scalar output")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None  # free intermediates; leaves keep theirs

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _coerce(other)

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return _make(self.data + other.data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g, a=self):
            a._accumulate(-g)

        return _make(-self.data, (self,), bwd)

    def __sub__(self, other):
        other = _coerce(other)

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.shape))

        return _make(self.data - other.data, (self, other), bwd)

    def __rsub__(self, other):
        return _coerce(other).__sub__(self)

    def __mul__(self, other):
        other = _coerce(other)

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return _make(self.data * other.data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other)

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return _make(self.data / other.data, (self, other), bwd)

    def __rtruediv__(self, other):
        return _coerce(other).__truediv__(self)

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("tensor exponents unsupported; use exp/log")
        e = float(exponent)

        def bwd(g, a=self):
            a._accumulate(g * e * a.data ** (e - 1.0))

        return _make(self.data**e, (self,), bwd)

    def __matmul__(self, other):
        other = _coerce(other)
        if self.data.ndim < 2 or other.data.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._accumulate(_unbroadcast(gb, b.shape))

        return _make(np.matmul(self.data, other.data), (self, other), bwd)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape

        def bwd(g, a=self):
            a._accumulate(g.reshape(old))

        return _make(self.data.reshape(shape), (self,), bwd)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        inverse = tuple(np.argsort(axes))

        def bwd(g, a=self):
            a._accumulate(np.transpose(g, inverse))

        return _make(np.transpose(self.data, axes), (self,), bwd)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        shape = self.data.shape
        parts = idx if isinstance(idx, tuple) else (idx,)
        fancy = any(isinstance(p, np.ndarray) or isinstance(p, (list, range))
                    for p in parts)

        def bwd(g, a=self):
            buf = np.zeros(shape, dtype=g.dtype)
            if fancy:
                np.add.at(buf, idx, g)  # duplicate indices must accumulate
            else:
                buf[idx] += g
            a._accumulate(buf)

        return _make(self.data[idx], (self,), bwd)

    # -- reductions and pointwise ----------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        def bwd(g, a=self):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.shape))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gg, a.shape))

        return _make(self.data.sum(axis=axis, keepdims=keepdims), (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis] if isinstance(axis, int) else int(
                np.prod([self.data.shape[i] for i in axis])
            )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g, a=self, od=out_data):
            a._accumulate(g * od)

        return _make(out_data, (self,), bwd)

    def log(self):
        def bwd(g, a=self):
            a._accumulate(g / a.data)

        return _make(np.log(self.data), (self,), bwd)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def bwd(g, a=self, od=out_data):
            a._accumulate(g * 0.5 / od)

        return _make(out_data, (self,), bwd)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bwd(g, a=self, od=out_data):
            a._accumulate(g * (1.0 - od * od))

        return _make(out_data, (self,), bwd)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def bwd(g, a=self, od=out_data):
            a._accumulate(g * od * (1.0 - od))

        return _make(out_data, (self,), bwd)

    def relu(self):
        mask = self.data > 0

        def bwd(g, a=self, m=mask):
            a._accumulate(g * m)

        return _make(self.data * mask, (self,), bwd)


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise NumericalError("non-finite values produced by a tensor op")
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == _DEFAULT_DTYPE else data.astype(_DEFAULT_DTYPE)
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


# -- composite/primitive functions ---------------------------------------------


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]

    def bwd(g, ts=tensors):
        pieces = np.split(g, len(ts), axis=axis)
        for t, piece in zip(ts, pieces):
            if t.requires_grad:
                t._accumulate(np.squeeze(piece, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g, ts=tensors):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def make_op(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Extension point: wrap a custom forward result with its backward rule.

    ``backward(g)`` must accumulate into each requiring parent via
    ``parent._accumulate(...)`` with arrays it is allowed to hand over.
    """
    return _make(np.asarray(data), tuple(parents), backward)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learned gain/shift (fused op)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_sigma
    out = xhat * gain.data + shift.data

    def bwd(g, a=x, gn=gain, sh=shift, xh=xhat, inv=inv_sigma):
        if sh.requires_grad:
            sh._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
        if gn.requires_grad:
            gn._accumulate((g * xh).reshape(-1, g.shape[-1]).sum(axis=0))
        if a.requires_grad:
            gy = g * gn.data
            mean_gy = gy.mean(axis=-1, keepdims=True)
            mean_gy_xh = (gy * xh).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (gy - mean_gy - xh * mean_gy_xh))

    return _make(out, (x, gain, shift), bwd)


def _softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(v, temperature: float = 1.0, axis: int = -1):
    """Stable softmax; ndarray in, ndarray out; Tensor in, Tensor out.

    ``temperature`` rescales the logits before normalization and must be
    positive.
    """
    if temperature <= 0:
        raise ValueError("softmax temperature must be > 0")
    if not isinstance(v, Tensor):
        return _softmax_np(np.asarray(v, dtype=np.float64) / temperature, axis=axis)
    x = v if temperature == 1.0 else v * (1.0 / temperature)
    out_data = _softmax_np(x.data, axis=axis)

    def bwd(g, a=x, s=out_data):
        inner = (g * s).sum(axis=axis, keepdims=True)
        a._accumulate(s * (g - inner))

    return _make(out_data, (x,), bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bwd(g, a=x, ls=out_data):
        a._accumulate(g - np.exp(ls) * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (x,), bwd)


def cross_entropy(logits, target):
    """Negative log-likelihood of ``target`` under softmax(logits).

    1-D logits with an int target give a scalar; an [..., K] batch with an
    int array of matching leading shape gives per-item losses. Out-of-range
    targets mean the batch is corrupt and raise DataError.
    """
    tgt = np.asarray(target)
    is_tensor = isinstance(logits, Tensor)
    raw = logits.data if is_tensor else np.asarray(logits, dtype=np.float64)
    k = raw.shape[-1]
    if np.any(tgt < 0) or np.any(tgt >= k):
        raise DataError(f"class target out of range [0, {k})")
    if not is_tensor:
        ls = raw - raw.max(axis=-1, keepdims=True)
        ls = ls - np.log(np.exp(ls).sum(axis=-1, keepdims=True))
        if raw.ndim == 1:
            return float(-ls[int(tgt)])
        return -np.take_along_axis(ls, tgt[..., None], axis=-1)[..., 0]
    ls = log_softmax(logits, axis=-1)
    if raw.ndim == 1:
        return -ls[int(tgt)]
    idx = tuple(np.indices(tgt.shape)) + (tgt,)
    return -ls[idx]


def cosine_similarity(a, b) -> float:
    """cos(a, b) in [-1, 1]; zero-norm inputs yield 0.0 with a warning."""
    import warnings

    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    if av.shape != bv.shape or av.size == 0:
        raise ValueError("cosine_similarity needs two equal-length vectors")
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        warnings.warn("zero-norm vector in cosine similarity, returning 0.0",
                      ZeroNormWarning, stacklevel=2)
        return 0.0
    return float(np.dot(av, bv) / (na * nb))


class ZeroNormWarning(UserWarning):
    pass


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences at x.

    Per coordinate: |analytic - fd| / max(1, |analytic|). Requires float64
    data; f must be a pure scalar-valued function of x.
    """
    if x.data.dtype != np.float64:
        raise ValueError("grad_check requires float64 tensors")
    x.data = np.ascontiguousarray(x.data)  # ravel below must be a view
    x.zero_grad()
    out = f(x)
    if out.data.size != 1:
        raise ValueError("grad_check target must be scalar-valued")
    out.backward()
    # a parameter the function never touches has a zero gradient
    analytic = np.zeros_like(x.data) if x.grad is None else np.array(x.grad, copy=True)
    x.zero_grad()

    flat = x.data.ravel()
    fd = np.empty_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = float(f(x).data)
        flat[i] = keep - eps
        lo = float(f(x).data)
        flat[i] = keep
        fd[i] = (hi - lo) / (2.0 * eps)
    fd = fd.reshape(x.data.shape)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - fd) / denom))


def as_tensor(value, requires_grad: bool = False) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, requires_grad)
