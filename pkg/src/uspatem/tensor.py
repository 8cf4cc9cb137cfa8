"""Dense tensors with reverse-mode automatic differentiation.

The graph is built eagerly: every op returns a Tensor holding its parents
and a vector-Jacobian closure. ``backward`` walks the graph once in
reverse topological order and accumulates gradients additively into every
tensor that requires them. The graph is left intact afterwards, but a
second ``backward`` from the same root raises; rebuild the graph (rerun
the forward pass) instead.

float32 is the training dtype, float64 exists for oracles and gradient
checks. Ops require both operands to share a dtype.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from . import backend

_FLOAT_DTYPES = (np.float32, np.float64)

# Test hook for the gradcheck CLI's mutation check: name of a pointwise op
# whose backward rule gets its sign flipped. Never set in production code.
_BACKWARD_FAULT: str | None = None

_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_backward_called")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._vjp = None
        self._backward_called = False

    # -- construction -----------------------------------------------------

    @staticmethod
    def _from_op(data, parents, vjp) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._backward_called = False
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    # -- basic properties -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{grad})"

    # -- autodiff ---------------------------------------------------------

    def backward(self):
        backward(self)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class Parameter(Tensor):
    """A named leaf tensor with optimizer moment buffers."""

    __slots__ = ("name", "adam_m", "adam_v")

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.adam_m: np.ndarray | None = None
        self.adam_v: np.ndarray | None = None


def backward(loss: Tensor):
    """Populate ``grad`` on every reachable tensor requiring gradients.

    The loss must be a scalar. Gradients accumulate additively into any
    pre-existing buffers, so call ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._backward_called:
        raise RuntimeError("backward already ran from this root; rerun the forward pass")
    loss._backward_called = True
    if not loss.requires_grad:
        return

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)

    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g


# -- shape/broadcast helpers ----------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce a gradient back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        if x.dtype != like.dtype:
            raise ValueError(f"dtype mismatch: {x.dtype} vs {like.dtype}")
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# -- elementwise ops --------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._from_op(out, (a, b), vjp)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        scale = float(b)
        arr = a.data * np.asarray(scale, dtype=a.dtype)
        return Tensor._from_op(arr, (a,), lambda g: (g * scale,))
    b = _coerce(b, a)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._from_op(out, (a, b), vjp)


def div(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / float(b))
    b = _coerce(b, a)
    out = a.data / b.data
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g / bd, ad.shape)
        gb = _unbroadcast(-g * ad / (bd * bd), bd.shape)
        return ga, gb

    return Tensor._from_op(out, (a, b), vjp)


# -- reductions and shape ops ----------------------------------------------


def reduce_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.data.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), vjp)


def reduce_mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.data.shape[i] for i in axes]))
    return mul(reduce_sum(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    out = x.data.reshape(shape)
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return Tensor._from_op(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def take(x: Tensor, key) -> Tensor:
    out = np.ascontiguousarray(x.data[key])
    shape = x.data.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, key, g)
        return (gx,)

    return Tensor._from_op(out, (x,), vjp)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return Tensor._from_op(out, tuple(tensors), vjp)


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    b = _coerce(b, a)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = np.matmul(a.data, b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = np.matmul(g, bd.swapaxes(-1, -2))
        gb = np.matmul(ad.swapaxes(-1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._from_op(out, (a, b), vjp)


def softmax_last(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(y, (x,), vjp)


# -- pointwise nonlinearities ------------------------------------------------

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def pointwise(kind: str, x: Tensor) -> Tensor:
    xd = x.data
    if kind == "relu":
        y = np.maximum(xd, 0)

        def base(g):
            return g * (xd > 0)

    elif kind == "sigmoid":
        y = 1.0 / (1.0 + np.exp(-xd))

        def base(g):
            return g * y * (1.0 - y)

    elif kind == "gelu":
        cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
        y = (xd * cdf).astype(xd.dtype)

        def base(g):
            pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
            return g * (cdf + xd * pdf).astype(xd.dtype)

    else:
        raise ValueError(f"unknown pointwise kind {kind!r}")

    def vjp(g):
        gx = base(g)
        if _BACKWARD_FAULT == kind:
            gx = -gx
        return (gx,)

    return Tensor._from_op(y.astype(xd.dtype), (x,), vjp)


def relu(x: Tensor) -> Tensor:
    return pointwise("relu", x)


def sigmoid(x: Tensor) -> Tensor:
    return pointwise("sigmoid", x)


def gelu(x: Tensor) -> Tensor:
    return pointwise("gelu", x)


# -- convolution --------------------------------------------------------------


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    transposed: bool = False,
    output_padding: int = 0,
) -> Tensor:
    """2-d cross-correlation (or its transpose) over [B,C,H,W].

    Plain mode takes weight [O,C,k,k]; transposed mode takes [C,O,k,k] and
    emits spatial size (H-1)*stride - 2*padding + k + output_padding with
    0 <= output_padding < stride.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects 4-d input and weight")
    k = weight.data.shape[2]
    if k != weight.data.shape[3] or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {weight.data.shape[2:]}")
    b, c, h, w = x.data.shape

    if not transposed:
        if weight.data.shape[1] != c:
            raise ValueError(
                f"weight expects {weight.data.shape[1]} input channels, input has {c}"
            )
        if h + 2 * padding < k or w + 2 * padding < k:
            raise ValueError("kernel larger than padded input")
        out = backend.conv2d_forward(x.data, weight.data, stride, padding)

        def vjp(g):
            g = np.ascontiguousarray(g)
            gx = backend.conv2d_grad_input(g, weight.data, stride, padding, h, w)
            gw = backend.conv2d_grad_weight(x.data, g, stride, padding, k)
            gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
            return (gx, gw) if bias is None else (gx, gw, gb)

    else:
        if weight.data.shape[0] != c:
            raise ValueError(
                f"transposed weight expects {weight.data.shape[0]} input channels, input has {c}"
            )
        if not 0 <= output_padding < stride:
            raise ValueError("output_padding must lie in [0, stride)")
        oh = (h - 1) * stride - 2 * padding + k + output_padding
        ow = (w - 1) * stride - 2 * padding + k + output_padding
        if oh < 1 or ow < 1:
            raise ValueError("transposed conv output would be empty")
        out = backend.conv2d_grad_input(x.data, weight.data, stride, padding, oh, ow)

        def vjp(g):
            g = np.ascontiguousarray(g)
            gx = backend.conv2d_forward(g, weight.data, stride, padding)
            gw = backend.conv2d_grad_weight(g, x.data, stride, padding, k)
            gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
            return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight)
    if bias is not None:
        if bias.data.shape != (out.shape[1],):
            raise ValueError(f"bias shape {bias.data.shape} != ({out.shape[1]},)")
        out = out + bias.data.reshape(1, -1, 1, 1)
        parents = (x, weight, bias)
    return Tensor._from_op(out, parents, vjp)


# -- pooling and upsampling ----------------------------------------------------


def max_pool(x: Tensor, factor: int) -> Tensor:
    b, c, h, w = x.data.shape
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"pool factor {factor} must divide spatial dims {(h, w)}")
    if factor == 1:
        return reshape(x, x.data.shape)
    y, idx = backend.maxpool_forward(x.data, factor)

    def vjp(g):
        return (backend.maxpool_backward(np.ascontiguousarray(g), idx, h, w),)

    return Tensor._from_op(y, (x,), vjp)


_interp_cache: dict = {}


def _interp_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    """Row-interpolation matrix for align-corners-false bilinear scaling."""
    key = (n_in, factor, np.dtype(dtype).str)
    cached = _interp_cache.get(key)
    if cached is not None:
        return cached
    n_out = n_in * factor
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        src = (i + 0.5) / factor - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(math.floor(src))
        frac = src - i0
        i1 = min(i0 + 1, n_in - 1)
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m = m.astype(dtype)
    _interp_cache[key] = m
    return m


def upsample(x: Tensor, factor: int, mode: str = "nearest") -> Tensor:
    """Scale the trailing two axes of [B,C,H,W] by an integer factor."""
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if mode not in ("nearest", "bilinear"):
        raise ValueError(f"unknown upsample mode {mode!r}")
    if factor == 1:
        return reshape(x, x.data.shape)
    b, c, h, w = x.data.shape

    if mode == "nearest":
        y = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

        def vjp(g):
            return (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),)

        return Tensor._from_op(np.ascontiguousarray(y), (x,), vjp)

    wr = _interp_matrix(h, factor, x.dtype)
    wc = _interp_matrix(w, factor, x.dtype)
    y = np.matmul(np.matmul(wr, x.data), wc.T)

    def vjp(g):
        return (np.matmul(np.matmul(wr.T, g), wc),)

    return Tensor._from_op(np.ascontiguousarray(y), (x,), vjp)


# -- normalization ---------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def vjp(g):
        dxhat = g * gd
        term = dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(
            axis=-1, keepdims=True
        )
        dx = (inv * term).astype(g.dtype)
        axes = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return Tensor._from_op(out.astype(x.dtype), (x, gamma, beta), vjp)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.9,
) -> Tensor:
    """Per-channel normalization of [B,C,H,W] over the (B,H,W) axes.

    In training mode batch statistics are used and the running buffers are
    updated in place (momentum 0.9, unbiased variance stored). Eval mode
    is a fixed affine map from the running statistics.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if x.data.ndim != 4:
        raise ValueError("batch_norm expects [B,C,H,W]")
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)

    if training:
        n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        mu = x.data.mean(axis=axes)
        xc = x.data - mu.reshape(shape)
        var = (xc * xc).mean(axis=axes)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv.reshape(shape)
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * unbiased
        out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)
        gd = gamma.data

        def vjp(g):
            dxhat = g * gd.reshape(shape)
            term = (
                dxhat
                - dxhat.mean(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
            )
            dx = (inv.reshape(shape) * term).astype(g.dtype)
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(shape)) * inv.reshape(shape)
        out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)
        gd = gamma.data

        def vjp(g):
            dx = (g * (gd * inv).reshape(shape)).astype(g.dtype)
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return Tensor._from_op(out.astype(x.dtype), (x, gamma, beta), vjp)


def normalize(kind: str, x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, **kw) -> Tensor:
    if kind == "layer":
        return layer_norm(x, gamma, beta, eps)
    if kind == "batch":
        return batch_norm(x, gamma, beta, eps=eps, **kw)
    raise ValueError(f"unknown normalization kind {kind!r}")


# -- dropout ------------------------------------------------------------------


def dropout(x: Tensor, rate: float, rng, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.generator.random(x.data.shape) < keep).astype(x.dtype) / keep
    out = x.data * mask
    return Tensor._from_op(out, (x,), lambda g: (g * mask,))
