"""Reverse-mode autodiff on numpy arrays.

A Tensor wraps an ndarray plus the closure needed to push gradients back to
its parents. Calling ``backward()`` on a scalar walks the graph once in
reverse topological order and accumulates ``dLoss/dTensor`` into ``.grad``
for every tensor that participates in differentiation. Gradients add up
across calls until ``zero_grads`` clears them, which is what lets gradient
accumulation fall out of the design for free.

Convolution and pooling forward/backward work is delegated to
``tripath.kernels`` so the numpy and numba backends stay interchangeable.
"""

import contextlib

import numpy as np

from . import kernels
from .errors import ContractError, DomainError, NumericError, ParamError, ShapeError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block. Nesting is fine."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


def _as_float_dtype(dtype):
    dt = np.dtype(dtype)
    if dt.kind != "f":
        raise ParamError(f"tensors hold floating point data, got dtype {dt}")
    return dt


class Tensor:
    """An ndarray with an optional place in a backward graph.

    Leaves are created directly; interior nodes come out of the ops below.
    ``requires_grad`` marks leaves whose gradient should be kept (parameters)
    and propagates to every result computed from them while grad mode is on.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op", "_nbackward", "_meta")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            raise ParamError("wrapping a Tensor in a Tensor; use .detach() or .data")
        arr = np.asarray(data)
        if dtype is None:
            dt = arr.dtype if arr.dtype.kind == "f" else DEFAULT_DTYPE
        else:
            dt = _as_float_dtype(dtype)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        if arr.ndim == 0:
            arr = arr.astype(dt, copy=False)
        else:
            arr = np.ascontiguousarray(arr, dtype=dt)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError(f"zero-sized extent in shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None
        self._op = "leaf"
        self._nbackward = 0
        self._meta = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _result(data, parents, vjp, op, meta=None):
        """Wrap an op result, attaching the graph only when it can matter."""
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._nbackward = 0
        out._meta = meta
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
            out._op = op
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
            out._op = op
        return out

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def op(self):
        return self._op

    @property
    def backward_count(self):
        """How many times this node's vjp has run. Stays 0 for leaves."""
        return self._nbackward

    def numel(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self._op!r}{flag})"

    def __len__(self):
        if self.data.ndim == 0:
            raise ShapeError("len() of a 0-d tensor")
        return self.data.shape[0]

    # -- backward pass ---------------------------------------------------

    def backward(self):
        """Backpropagate from this scalar through the recorded graph.

        Each interior node's vjp runs exactly once per call; ``.grad`` fields
        accumulate across calls. Raises ContractError when invoked on a
        non-scalar or a tensor outside any graph.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() requires a scalar, shape is {self.shape}")
        if self._vjp is None and not self.requires_grad:
            raise ContractError("backward() on a tensor with no graph attached")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            node._nbackward += 1
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                held = pending.get(id(parent))
                pending[id(parent)] = pg if held is None else held + pg

    def graph_nodes(self):
        """Every node reachable backwards from here, leaves included."""
        out = []
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            out.append(node)
            stack.extend(node._parents)
        return out

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(negate(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        if not isinstance(other, (int, float)):
            raise ParamError("left operand of / must be a Tensor or scalar")
        return mul(pow(self, -1.0), other)

    def __pow__(self, exponent):
        return pow(self, exponent)

    def __neg__(self):
        return negate(self)


def zero_grads(tensors):
    """Drop accumulated gradients on an iterable of tensors."""
    for t in tensors:
        t.grad = None


def _check_scalar_or_match(a, b, op):
    """Classify the right operand: python scalar or same-shape tensor."""
    if isinstance(b, (int, float, np.floating, np.integer)):
        return float(b), True
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ; only scalar broadcast is supported")
        return b, False
    raise ParamError(f"{op}: expected Tensor or scalar, got {type(b).__name__}")


def _require_tensor(a, op):
    if not isinstance(a, Tensor):
        raise ParamError(f"{op}: expected Tensor, got {type(a).__name__}")
    return a


# -- elementwise ops --------------------------------------------------------


def add(a, b):
    a = _require_tensor(a, "add")
    b, scalar = _check_scalar_or_match(a, b, "add")
    if scalar:
        return Tensor._result(a.data + b, (a,), lambda g: (g,), "add")
    return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a = _require_tensor(a, "sub")
    b, scalar = _check_scalar_or_match(a, b, "sub")
    if scalar:
        return Tensor._result(a.data - b, (a,), lambda g: (g,), "sub")
    return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a = _require_tensor(a, "mul")
    b, scalar = _check_scalar_or_match(a, b, "mul")
    if scalar:
        return Tensor._result(a.data * b, (a,), lambda g: (g * b,), "mul")

    def vjp(g):
        return g * b.data, g * a.data

    return Tensor._result(a.data * b.data, (a, b), vjp, "mul")


def div(a, b):
    a = _require_tensor(a, "div")
    b, scalar = _check_scalar_or_match(a, b, "div")
    if scalar:
        if b == 0.0:
            raise DomainError("div: scalar divisor is zero")
        inv = 1.0 / b
        return Tensor._result(a.data * inv, (a,), lambda g: (g * inv,), "div")

    def vjp(g):
        ginv = g / b.data
        return ginv, -ginv * a.data / b.data

    return Tensor._result(a.data / b.data, (a, b), vjp, "div")


def pow(a, exponent):
    a = _require_tensor(a, "pow")
    if isinstance(exponent, Tensor):
        raise ParamError("pow: exponent must be a python scalar")
    p = float(exponent)
    if p != int(p) and np.any(a.data < 0):
        idx = int(np.flatnonzero(a.data < 0)[0])
        raise DomainError(f"pow: negative base at flat index {idx} with non-integer exponent {p}")
    out = a.data ** p

    def vjp(g):
        if p == 0.0:
            return (np.zeros_like(a.data),)
        return (g * p * a.data ** (p - 1.0),)

    return Tensor._result(out, (a,), vjp, "pow")


def log(a):
    a = _require_tensor(a, "log")
    bad = a.data <= 0
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        val = float(a.data.reshape(-1)[idx])
        raise DomainError(f"log: non-positive value {val!r} at flat index {idx}")
    out = np.log(a.data)
    return Tensor._result(out, (a,), lambda g: (g / a.data,), "log")


def exp(a):
    a = _require_tensor(a, "exp")
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def relu(a):
    a = _require_tensor(a, "relu")
    out = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return Tensor._result(out, (a,), vjp, "relu")


def negate(a):
    a = _require_tensor(a, "negate")
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "negate")


def clamp(a, lo, hi):
    """Clip values to [lo, hi]; gradient is zero where clipping bit."""
    a = _require_tensor(a, "clamp")
    lo = float(lo)
    hi = float(hi)
    if not lo < hi:
        raise ParamError(f"clamp: need lo < hi, got [{lo}, {hi}]")
    out = np.clip(a.data, lo, hi)

    def vjp(g):
        inside = (a.data > lo) & (a.data < hi)
        return (g * inside,)

    return Tensor._result(out, (a,), vjp, "clamp", meta={"lo": lo, "hi": hi})


_UNARY = {"log": log, "exp": exp, "relu": relu, "negate": negate}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "pow": pow}


def elementwise(kind, a, b=None):
    """Dispatch an elementwise op by name. Unary kinds reject ``b``."""
    if kind in _UNARY:
        if b is not None:
            raise ParamError(f"elementwise: {kind!r} is unary, second operand given")
        return _UNARY[kind](a)
    if kind in _BINARY:
        if b is None:
            raise ParamError(f"elementwise: {kind!r} needs a second operand")
        return _BINARY[kind](a, b)
    raise ParamError(f"elementwise: unknown kind {kind!r}")


# -- reductions -------------------------------------------------------------


def _normalize_axes(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        norm.append(ax % ndim)
    if len(set(norm)) != len(norm):
        raise ParamError(f"duplicate axes in {axes}")
    return tuple(sorted(norm))


def tensor_sum(a, axis=None, keepdims=False):
    a = _require_tensor(a, "sum")
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if axes is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        gg = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gg, a.shape).astype(a.dtype, copy=True),)

    return Tensor._result(np.asarray(out, dtype=a.dtype), (a,), vjp, "sum")


def tensor_mean(a, axis=None, keepdims=False):
    a = _require_tensor(a, "mean")
    axes = _normalize_axes(axis, a.ndim)
    if axes is None:
        count = a.data.size
    else:
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims, dtype=a.dtype)

    def vjp(g):
        gg = g if (axes is None or keepdims) else np.expand_dims(g, axes)
        return ((np.broadcast_to(gg, a.shape) / count).astype(a.dtype, copy=True),)

    return Tensor._result(np.asarray(out, dtype=a.dtype), (a,), vjp, "mean")


# -- shape ops ----------------------------------------------------------


def concat(tensors, axis):
    """Concatenate along one axis; all other extents must agree."""
    ts = list(tensors)
    if not ts:
        raise ParamError("concat: empty tensor list")
    for t in ts:
        _require_tensor(t, "concat")
    ndim = ts[0].ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"concat: axis {axis} out of range for rank {ndim}")
    ax = axis % ndim
    ref = list(ts[0].shape)
    for t in ts[1:]:
        if t.ndim != ndim:
            raise ShapeError(f"concat: rank mismatch {t.ndim} vs {ndim}")
        other = list(t.shape)
        if ref[:ax] + ref[ax + 1:] != other[:ax] + other[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {tuple(ref)} and {t.shape} on axis {ax}")
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in ts], axis=ax)

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=ax))

    return Tensor._result(out, ts, vjp, "concat")


def temporal_subsample(a, step):
    """Keep every ``step``-th frame along axis 2 (the time axis)."""
    a = _require_tensor(a, "temporal_subsample")
    if a.ndim < 3:
        raise ShapeError(f"temporal_subsample: rank {a.ndim} input has no time axis at position 2")
    if not isinstance(step, (int, np.integer)) or step < 1:
        raise ParamError(f"temporal_subsample: step must be a positive int, got {step!r}")
    step = int(step)
    sel = (slice(None), slice(None), slice(None, None, step))
    out = np.ascontiguousarray(a.data[sel])

    def vjp(g):
        gx = np.zeros_like(a.data)
        gx[sel] = g
        return (gx,)

    return Tensor._result(out, (a,), vjp, "temporal_subsample")


def linear(x, weight, bias):
    """Affine map of row vectors: [B, Fin] x [Fout, Fin]^T + [Fout]."""
    x = _require_tensor(x, "linear")
    weight = _require_tensor(weight, "linear")
    bias = _require_tensor(bias, "linear")
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(f"linear: want ranks (2, 2, 1), got ({x.ndim}, {weight.ndim}, {bias.ndim})")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input features {x.shape[1]} vs weight features {weight.shape[1]}")
    if bias.shape[0] != weight.shape[0]:
        raise ShapeError(f"linear: bias size {bias.shape[0]} vs output features {weight.shape[0]}")
    out = x.data @ weight.data.T + bias.data

    def vjp(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return Tensor._result(out, (x, weight, bias), vjp, "linear")


def softmax(x):
    """Row softmax for [B, C] logits, shifted by the row max for stability."""
    x = _require_tensor(x, "softmax")
    if x.ndim != 2:
        raise ShapeError(f"softmax: want rank 2 logits, got rank {x.ndim}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax: non-finite logits")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return Tensor._result(out, (x,), vjp, "softmax")


def dropout(x, rate, rng):
    """Inverted dropout driven by a caller-owned numpy Generator."""
    x = _require_tensor(x, "dropout")
    rate = float(rate)
    if not 0.0 <= rate < 1.0:
        raise ParamError(f"dropout: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = x.dtype.type(1.0 / (1.0 - rate))
    out = x.data * keep * scale

    def vjp(g):
        return (g * keep * scale,)

    return Tensor._result(out, (x,), vjp, "dropout")


# -- spatial/temporal ops on [B, C, T, H, W] ---------------------------------


def _check_video_rank(x, op):
    if x.ndim != 5:
        raise ShapeError(f"{op}: want [batch, channels, time, height, width], got rank {x.ndim}")


def _check_triple(val, name, op, minimum):
    t = tuple(int(v) for v in val)
    if len(t) != 3 or any(v < minimum for v in t):
        raise ParamError(f"{op}: {name} must be 3 ints >= {minimum}, got {val!r}")
    return t


def conv3d(x, weight, bias, stride=(1, 1, 1), padding=(0, 0, 0)):
    """3D cross-correlation with zero padding and floor output sizing.

    x: [B, Ci, T, H, W], weight: [Co, Ci, kT, kH, kW], bias: [Co] or None.
    Trailing rows that do not fill a full kernel window are dropped.
    """
    x = _require_tensor(x, "conv3d")
    weight = _require_tensor(weight, "conv3d")
    _check_video_rank(x, "conv3d")
    if weight.ndim != 5:
        raise ShapeError(f"conv3d: want rank-5 weight, got rank {weight.ndim}")
    stride = _check_triple(stride, "stride", "conv3d", 1)
    padding = _check_triple(padding, "padding", "conv3d", 0)
    co, ci, kt, kh, kw = weight.shape
    if ci != x.shape[1]:
        raise ShapeError(f"conv3d: input channels {x.shape[1]} vs weight channels {ci}")
    if bias is not None:
        bias = _require_tensor(bias, "conv3d")
        if bias.shape != (co,):
            raise ShapeError(f"conv3d: bias shape {bias.shape} vs output channels {co}")
    b_, _, t, h, w = x.shape
    pt, ph, pw = padding
    tp, hp, wp = t + 2 * pt, h + 2 * ph, w + 2 * pw
    if kt > tp or kh > hp or kw > wp:
        raise ShapeError(f"conv3d: kernel ({kt},{kh},{kw}) exceeds padded input ({tp},{hp},{wp})")

    if pt or ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    else:
        xp = x.data
    out = kernels.conv3d_forward(xp, weight.data, stride)
    if bias is not None:
        out += bias.data.reshape(1, co, 1, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gxp, gw = kernels.conv3d_backward(g, xp, weight.data, stride, xp.shape,
                                          x.requires_grad, weight.requires_grad)
        gx = None
        if x.requires_grad:
            gx = gxp[:, :, pt:pt + t, ph:ph + h, pw:pw + w]
            gx = np.ascontiguousarray(gx) if (pt or ph or pw) else gx
        if bias is None:
            return gx, gw
        gb = g.sum(axis=(0, 2, 3, 4)) if bias.requires_grad else None
        return gx, gw, gb

    meta = {"stride": stride, "padding": padding, "kernel": (kt, kh, kw)}
    return Tensor._result(out, parents, vjp, "conv3d", meta=meta)


def maxpool3d(x, window, stride=None, padding=(0, 0, 0)):
    """Max pooling over [B, C, T, H, W] windows; pads with -inf, floor sizing."""
    x = _require_tensor(x, "maxpool3d")
    _check_video_rank(x, "maxpool3d")
    window = _check_triple(window, "window", "maxpool3d", 1)
    stride = window if stride is None else _check_triple(stride, "stride", "maxpool3d", 1)
    padding = _check_triple(padding, "padding", "maxpool3d", 0)
    b_, c, t, h, w = x.shape
    pt, ph, pw = padding
    kt, kh, kw = window
    tp, hp, wp = t + 2 * pt, h + 2 * ph, w + 2 * pw
    if kt > tp or kh > hp or kw > wp:
        raise ShapeError(f"maxpool3d: window ({kt},{kh},{kw}) exceeds padded input ({tp},{hp},{wp})")
    if pt >= kt or ph >= kh or pw >= kw:
        raise ParamError(f"maxpool3d: padding {padding} must be smaller than window {window}")

    if pt or ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)), constant_values=-np.inf)
    else:
        xp = x.data
    out, argmax = kernels.maxpool3d_forward(xp, window, stride)

    def vjp(g):
        gxp = kernels.maxpool3d_backward(np.ascontiguousarray(g), argmax, xp.shape)
        if pt or ph or pw:
            return (np.ascontiguousarray(gxp[:, :, pt:pt + t, ph:ph + h, pw:pw + w]),)
        return (gxp,)

    meta = {"window": window, "stride": stride, "padding": padding}
    return Tensor._result(out, (x,), vjp, "maxpool3d", meta=meta)


def global_avg_pool(x):
    """Mean over time and space: [B, C, T, H, W] -> [B, C]."""
    x = _require_tensor(x, "global_avg_pool")
    _check_video_rank(x, "global_avg_pool")
    b, c, t, h, w = x.shape
    count = t * h * w
    out = x.data.mean(axis=(2, 3, 4), dtype=x.dtype)

    def vjp(g):
        gx = np.broadcast_to(g[:, :, None, None, None] / count, x.shape)
        return (gx.astype(x.dtype, copy=True),)

    return Tensor._result(out, (x,), vjp, "global_avg_pool")


def group_norm(x, gamma, beta, num_groups, eps=1e-5):
    """Normalize channel groups of [B, C, T, H, W] to zero mean, unit variance.

    Statistics pool over the channels of each group and all of T, H, W.
    gamma and beta are per-channel scale and shift.
    """
    from .errors import ConfigError

    x = _require_tensor(x, "group_norm")
    gamma = _require_tensor(gamma, "group_norm")
    beta = _require_tensor(beta, "group_norm")
    _check_video_rank(x, "group_norm")
    b, c, t, h, w = x.shape
    if not isinstance(num_groups, (int, np.integer)) or num_groups < 1:
        raise ParamError(f"group_norm: num_groups must be a positive int, got {num_groups!r}")
    if c % num_groups != 0:
        raise ConfigError(f"group_norm: {c} channels not divisible into {num_groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm: gamma/beta must be shape ({c},), got {gamma.shape} and {beta.shape}")
    eps = float(eps)
    if eps <= 0:
        raise ParamError(f"group_norm: eps must be positive, got {eps}")

    g_ = int(num_groups)
    xg = x.data.reshape(b, g_, -1)
    mu = xg.mean(axis=2, keepdims=True, dtype=x.dtype)
    var = xg.var(axis=2, keepdims=True, dtype=x.dtype)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = ((xg - mu) * inv).reshape(x.shape)
    gb = gamma.data.reshape(1, c, 1, 1, 1)
    out = xhat * gb + beta.data.reshape(1, c, 1, 1, 1)

    def vjp(gy):
        ggamma = (gy * xhat).sum(axis=(0, 2, 3, 4)) if gamma.requires_grad else None
        gbeta = gy.sum(axis=(0, 2, 3, 4)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = (gy * gb).reshape(b, g_, -1)
            xh = xhat.reshape(b, g_, -1)
            m1 = dxhat.mean(axis=2, keepdims=True, dtype=x.dtype)
            m2 = (dxhat * xh).mean(axis=2, keepdims=True, dtype=x.dtype)
            gx = ((dxhat - m1 - xh * m2) * inv).reshape(x.shape).astype(x.dtype, copy=False)
        return gx, ggamma, gbeta

    return Tensor._result(out, (x, gamma, beta), vjp, "group_norm")
