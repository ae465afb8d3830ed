"""Dense tensor arithmetic with reverse-mode differentiation.

Every learnable computation in this package runs through the ops defined
here. Values live in numpy arrays (float32 for training, float64 for
gradient checks); the graph is recorded as a DAG of output tensors, each
holding a backward closure over its inputs. ``backward`` on a scalar loss
accumulates gradients into every ``requires_grad`` leaf in one reverse
topological sweep.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse

__all__ = [
    "Tensor",
    "Graph",
    "ShapeError",
    "NonFiniteError",
    "GraphConsumedError",
    "tensor",
    "constant",
    "no_grad",
    "finite_checks_enabled",
    "set_finite_checks",
    "forward",
    "backward",
    "finite_diff_check",
    "FiniteDiffReport",
    "add", "sub", "mul", "div", "neg", "matmul",
    "exp", "softplus", "sigmoid", "relu", "leaky_relu",
    "softmax", "layer_norm", "conv2d", "grid_sample",
    "concat", "reshape", "transpose", "roll",
    "reduce_sum", "reduce_mean", "l2_norm", "cumsum", "clip_min",
]

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or infinity."""


class GraphConsumedError(RuntimeError):
    """Raised when backward is called twice through the same graph."""


_grad_enabled = True
_finite_checks = True
_node_counter = 0


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def finite_checks_enabled() -> bool:
    return _finite_checks


def set_finite_checks(enabled: bool) -> None:
    """Toggle the per-op non-finite output check.

    On by default. Large training loops may disable it and instead guard
    parameters and the loss once per step; correctness tests keep it on.
    """
    global _finite_checks
    _finite_checks = bool(enabled)


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff.

    ``data`` is always a float32 or float64 ndarray. Tensors produced by
    ops are treated as immutable; ``grad`` is populated on leaves by
    ``backward``.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "inputs", "_backward", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = None
        self.inputs: tuple[Tensor, ...] = ()
        self._backward = None
        self.node_id = -1

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
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

    def is_leaf(self) -> bool:
        return self.op is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = self.op or ("leaf" if not self.requires_grad else "param")
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, {tag})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def _as_tensor(x, like: Tensor) -> Tensor:
    """Wrap python scalars / ndarrays as constants matching ``like``'s dtype."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_dtypes(name: str, tensors: Sequence[Tensor]) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"{name}: mixed dtypes {sorted(d.name for d in dtypes)}")


def _make_node(name: str, out_data: np.ndarray, inputs: Sequence[Tensor],
               backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None) -> Tensor:
    """Wrap an op result; record the node when grads are live."""
    global _node_counter
    _node_counter += 1
    node_id = _node_counter
    if _finite_checks and not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"op '{name}' (node {node_id}) produced non-finite values")
    out = Tensor(out_data)
    out.node_id = node_id
    # A node is recorded iff some input carries gradient history.
    needs = _grad_enabled and any(t.requires_grad for t in inputs)
    if needs and backward_fn is not None:
        out.op = name
        out.inputs = tuple(inputs)
        out._backward = backward_fn
        out.requires_grad = True
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ---------------------------------------------------


def _binary(name: str, a, b, fwd, bwd):
    """Shared wrapper for two-operand elementwise ops.

    ``bwd(g, x, y, need_a, need_b)`` returns a pair of grads, with None in
    slots whose input does not require grad (skips the wasted arithmetic).
    """
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError(f"{name}: at least one Tensor operand required")
    ref = a if isinstance(a, Tensor) else b
    a = _as_tensor(a, ref)
    b = _as_tensor(b, ref)
    _check_dtypes(name, (a, b))
    try:
        out = fwd(a.data, b.data)
    except ValueError as err:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from err
    return _make_node(name, out, (a, b),
                      lambda g, a=a, b=b: bwd(g, a.data, b.data,
                                              a.requires_grad, b.requires_grad))


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add,
                   lambda g, x, y, na, nb: (_unbroadcast(g, x.shape) if na else None,
                                            _unbroadcast(g, y.shape) if nb else None))


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract,
                   lambda g, x, y, na, nb: (_unbroadcast(g, x.shape) if na else None,
                                            _unbroadcast(-g, y.shape) if nb else None))


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply,
                   lambda g, x, y, na, nb: (_unbroadcast(g * y, x.shape) if na else None,
                                            _unbroadcast(g * x, y.shape) if nb else None))


def div(a, b) -> Tensor:
    return _binary("div", a, b, np.divide,
                   lambda g, x, y, na, nb: (_unbroadcast(g / y, x.shape) if na else None,
                                            _unbroadcast(-g * x / (y * y), y.shape) if nb else None))


def neg(a: Tensor) -> Tensor:
    return _make_node("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch semantics (both operands ndim >= 2)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    _check_dtypes("matmul", (a, b))
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def bwd(g, a=a, b=b):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast_batch(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast_batch(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return (ga, gb)

    return _make_node("matmul", out, (a, b), bwd)


def _unbroadcast_batch(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Unbroadcast over batch dims only (last two axes are matrix dims)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i in range(len(shape) - 2) if shape[i] == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- activations --------------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make_node("exp", out, (a,), lambda g, out=out: (g * out,))


def softplus(a: Tensor) -> Tensor:
    # log(1 + e^x) computed as logaddexp(0, x); stable for large |x|.
    out = np.logaddexp(np.asarray(0, dtype=a.dtype), a.data)
    return _make_node("softplus", out, (a,),
                      lambda g, a=a: (g * _sigmoid_values(a.data),))


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_values(a.data)
    return _make_node("sigmoid", out, (a,), lambda g, out=out: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return _make_node("relu", out, (a,), lambda g, a=a: (g * (a.data > 0),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(a.data > 0, a.data, a.dtype.type(slope) * a.data)
    return _make_node("leaky_relu", out, (a,),
                      lambda g, a=a: (np.where(a.data > 0, g, a.dtype.type(slope) * g),))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g, out=out):
        return ((g - (g * out).sum(axis=-1, keepdims=True)) * out,)

    return _make_node("softmax", out, (a,), bwd)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along one axis (no affine)."""
    mean = a.data.mean(axis=axis, keepdims=True)
    var = a.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + a.dtype.type(eps))
    xhat = (a.data - mean) * inv

    def bwd(g, xhat=xhat, inv=inv, axis=axis):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make_node("layer_norm", xhat, (a,), bwd)


# -- structural ops -----------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    _check_dtypes("concat", tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from err
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g, splits=splits, axis=axis):
        return tuple(np.split(g, splits, axis=axis))

    return _make_node("concat", out, tensors, bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    out = a.data.reshape(shape)
    return _make_node("reshape", out, (a,), lambda g, old=old: (g.reshape(old),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)
    return _make_node("transpose", out, (a,), lambda g, inv=inv: (np.transpose(g, inv),))


def roll(a: Tensor, shifts: tuple[int, ...], axes: tuple[int, ...]) -> Tensor:
    out = np.roll(a.data, shifts, axis=axes)
    back = tuple(-s for s in shifts)
    return _make_node("roll", out, (a,), lambda g, back=back, axes=axes: (np.roll(g, back, axis=axes),))


def slice_(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def bwd(g, a=a, index=index):
        full = np.zeros_like(a.data)
        if _is_fancy(index):
            np.add.at(full, index, g)  # repeated indices must accumulate
        else:
            full[index] = g
        return (full,)

    return _make_node("slice", out, (a,), bwd)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


# -- reductions ---------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ax = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=ax, keepdims=keepdims)

    def bwd(g, a=a, ax=ax, keepdims=keepdims):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)

    return _make_node("sum", np.asarray(out), (a,), bwd)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ax = _norm_axis(axis, a.ndim)
    out = a.data.mean(axis=ax, keepdims=keepdims)
    count = a.size if ax is None else int(np.prod([a.shape[i] for i in ax]))

    def bwd(g, a=a, ax=ax, keepdims=keepdims, count=count):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return ((np.broadcast_to(g, a.shape) / a.dtype.type(count)).astype(a.dtype, copy=False),)

    return _make_node("mean", np.asarray(out), (a,), bwd)


def l2_norm(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    ax = axis % a.ndim
    out = np.sqrt(np.sum(a.data * a.data, axis=ax, keepdims=keepdims))

    def bwd(g, a=a, ax=ax, keepdims=keepdims, out=out):
        if not keepdims:
            g = np.expand_dims(g, ax)
            denom = np.expand_dims(out, ax)
        else:
            denom = out
        return (g * a.data / np.maximum(denom, np.finfo(a.dtype).tiny),)

    return _make_node("l2_norm", np.asarray(out), (a,), bwd)


def cumsum(a: Tensor, axis: int = -1) -> Tensor:
    ax = axis % a.ndim
    out = np.cumsum(a.data, axis=ax)

    def bwd(g, ax=ax):
        return (np.flip(np.cumsum(np.flip(g, ax), axis=ax), ax),)

    return _make_node("cumsum", out, (a,), bwd)


def clip_min(a: Tensor, minval: float) -> Tensor:
    out = np.maximum(a.data, a.dtype.type(minval))
    return _make_node("clip_min", out, (a,),
                      lambda g, a=a: (g * (a.data > minval),))


# -- 2D convolution -----------------------------------------------------------


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def conv2d(x: Tensor, w: Tensor, stride=1, padding=0) -> Tensor:
    """NCHW convolution via im2col; kernel ``w`` is (Cout, Cin, kh, kw)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-D input/kernel, got {x.shape} and {w.shape}")
    _check_dtypes("conv2d", (x, w))
    B, Cin, H, W = x.shape
    Cout, Cin2, kh, kw = w.shape
    if Cin != Cin2:
        raise ShapeError(f"conv2d: input channels {Cin} != kernel channels {Cin2}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    Hp, Wp = xp.shape[2], xp.shape[3]
    Ho = (Hp - kh) // sh + 1
    Wo = (Wp - kw) // sw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: kernel {(kh, kw)} larger than padded input {(Hp, Wp)}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]                       # (B, Cin, Ho, Wo, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, Cin * kh * kw)
    wmat = w.data.reshape(Cout, Cin * kh * kw)
    out_mat = cols @ wmat.T
    out = out_mat.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2)

    def bwd(g, x=x, w=w, cols=cols, wmat=wmat):
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * Ho * Wo, Cout)
        gw = (g_mat.T @ cols).reshape(w.shape) if w.requires_grad else None
        if not x.requires_grad:
            return (None, gw)
        gcols = (g_mat @ wmat).reshape(B, Ho, Wo, Cin, kh, kw)
        gxp = np.zeros((B, Cin, Hp, Wp), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, ph:Hp - ph, pw:Wp - pw] if (ph or pw) else gxp
        return (gx, gw)

    return _make_node("conv2d", np.ascontiguousarray(out), (x, w), bwd)


# -- bilinear grid sampling ---------------------------------------------------


def grid_sample(maps: Tensor, coords: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Bilinearly sample ``maps`` (B, C, H, W) at ``coords`` (B, P, 2).

    Coordinates are (x, y) in grid units with the origin at the top-left
    texel center. Out-of-range locations are border-clamped; the returned
    boolean mask marks coordinates that were inside [0, W-1] x [0, H-1].
    Differentiable w.r.t. the maps only; coordinates are constants.
    """
    if maps.ndim != 4:
        raise ShapeError(f"grid_sample: maps must be (B, C, H, W), got {maps.shape}")
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 3 or coords.shape[2] != 2 or coords.shape[0] != maps.shape[0]:
        raise ShapeError(f"grid_sample: coords {coords.shape} do not match maps {maps.shape}")
    B, C, H, W = maps.shape
    P = coords.shape[1]
    x = coords[:, :, 0]
    y = coords[:, :, 1]
    valid = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    xc = np.clip(x, 0.0, W - 1.0)
    yc = np.clip(y, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(xc), max(W - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(yc), max(H - 2, 0)).astype(np.int64)
    fx = (xc - x0).astype(maps.dtype)
    fy = (yc - y0).astype(maps.dtype)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)

    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy

    flat = np.ascontiguousarray(maps.data.transpose(0, 2, 3, 1)).reshape(B * H * W, C)
    goff = (np.arange(B)[:, None] * (H * W)).astype(np.int64)
    i00 = y0 * W + x0
    i01 = y0 * W + x1
    i10 = y1 * W + x0
    i11 = y1 * W + x1
    out = w00[..., None] * flat.take(i00 + goff, axis=0)
    out += w01[..., None] * flat.take(i01 + goff, axis=0)
    out += w10[..., None] * flat.take(i10 + goff, axis=0)
    out += w11[..., None] * flat.take(i11 + goff, axis=0)

    def bwd(g, maps=maps):
        # Scatter-add into the maps through one sparse matmul: rows index
        # flattened (batch, texel), columns index flattened sample points.
        # Each sample column holds exactly its four corner texels, so the
        # CSC buffers can be laid out directly without a sort pass.
        indices = np.stack([(i00 + goff).ravel(), (i01 + goff).ravel(),
                            (i10 + goff).ravel(), (i11 + goff).ravel()],
                           axis=1).reshape(-1)
        data = np.stack([w00.ravel(), w01.ravel(), w10.ravel(), w11.ravel()],
                        axis=1).reshape(-1).astype(maps.dtype)
        indptr = np.arange(0, 4 * B * P + 1, 4)
        S = scipy.sparse.csc_matrix((data, indices, indptr),
                                    shape=(B * H * W, B * P))
        gflat = S @ g.reshape(B * P, C)
        return (gflat.reshape(B, H, W, C).transpose(0, 3, 1, 2),)

    return _make_node("grid_sample", out, (maps,), bwd), valid


# -- generic dispatcher -------------------------------------------------------

_OP_TABLE: dict[str, Callable] = {}


def _register_ops():
    _OP_TABLE.update({
        "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
        "matmul": matmul, "exp": exp, "softplus": softplus, "sigmoid": sigmoid,
        "relu": relu, "leaky_relu": leaky_relu, "softmax": softmax,
        "layer_norm": layer_norm, "conv2d": conv2d, "grid_sample": grid_sample,
        "concat": lambda *ts, **kw: concat(ts, **kw),
        "slice": slice_, "reshape": reshape, "transpose": transpose, "roll": roll,
        "sum": reduce_sum, "mean": reduce_mean, "l2_norm": l2_norm,
        "cumsum": cumsum, "clip_min": clip_min,
    })


_register_ops()


def forward(op_kind: str, inputs: Sequence, attrs: dict | None = None):
    """Dispatch-by-name entry point over the op catalogue."""
    fn = _OP_TABLE.get(op_kind)
    if fn is None:
        raise KeyError(f"unknown op kind '{op_kind}' (known: {sorted(_OP_TABLE)})")
    attrs = attrs or {}
    if op_kind == "concat":
        return concat(tuple(inputs), **attrs)
    return fn(*inputs, **attrs)


# -- graph and backward -------------------------------------------------------


@dataclass
class Graph:
    """Topologically ordered view of the DAG reachable from one output."""

    nodes: list[Tensor] = field(default_factory=list)
    consumed: bool = False

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.inputs:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(nodes=order)


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Accumulate gradients of a scalar ``loss`` into all requires_grad leaves.

    The traversed graph is consumed: interior closures are dropped so a
    second backward through the same nodes raises ``GraphConsumedError``.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if graph is None:
        graph = Graph.from_output(loss)
    if graph.consumed:
        raise GraphConsumedError("backward already ran through this graph")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad and node.is_leaf():
                node.grad = g if node.grad is None else node.grad + g
            continue
        if node.op is not None and node._backward is _CONSUMED:
            raise GraphConsumedError(f"node {node.node_id} ({node.op}) already consumed")
        input_grads = node._backward(g)
        for parent, pg in zip(node.inputs, input_grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
        node._backward = _CONSUMED
        node.inputs = ()
    graph.consumed = True


def _CONSUMED(_g):  # sentinel; never called
    raise GraphConsumedError("backward already ran through this graph")


# -- finite-difference oracle -------------------------------------------------


@dataclass
class FiniteDiffReport:
    """Per-input max relative error between analytic and central-FD grads."""

    max_rel_errors: list[float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_rel_errors)

    def __repr__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        errs = ", ".join(f"{e:.3e}" for e in self.max_rel_errors)
        return f"FiniteDiffReport({status}, tol={self.tol:g}, max_rel=[{errs}])"


def finite_diff_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
                      step: float = 1e-5, tol: float = 1e-5) -> FiniteDiffReport:
    """Compare analytic gradients of scalar ``fn(*inputs)`` to central FD.

    Inputs should be float64 and sit at least ~10*step away from any
    non-smooth kink (relu at 0, clip boundaries). The relative error uses
    max(|analytic|, |fd|, 0.01) as denominator so near-zero gradients are
    judged on an absolute scale of 100x the tolerance.
    """
    leaves = [Tensor(t.data.astype(np.float64), requires_grad=True) for t in inputs]
    out = fn(*leaves)
    if out.size != 1:
        raise ShapeError(f"finite_diff_check: fn must return a scalar, got {out.shape}")
    backward(out)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
                for leaf in leaves]

    errors = []
    for k, leaf in enumerate(leaves):
        fd = np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with no_grad():
                hi = fn(*leaves).item()
            flat[i] = orig - step
            with no_grad():
                lo = fn(*leaves).item()
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * step)
        denom = np.maximum(np.maximum(np.abs(analytic[k]), np.abs(fd)), 0.01)
        errors.append(float(np.max(np.abs(analytic[k] - fd) / denom)) if fd.size else 0.0)
    return FiniteDiffReport(max_rel_errors=errors, tol=tol)
