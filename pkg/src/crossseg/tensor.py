"""Dense float tensors with taped reverse-mode differentiation.

Everything in the network is expressed through the small operation set
below.  Forward ops run on plain numpy arrays; when a :class:`Tape` is
active, each op appends a backward rule so `Tape.backward` can replay the
recording in reverse and accumulate gradients into every reachable
:class:`Parameter`.

Conventions:
  * feature maps are N x C x H x W, row-major,
  * default precision is float32; pass float64 arrays for oracle runs,
  * tensors are immutable values once created (nothing mutates `.data`).
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import NumericsError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense n-d float array, optionally attached to the active tape."""

    __slots__ = ("data", "_tracked")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self._tracked = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """A named learnable tensor; gradients land in `.grad` after backward."""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, dtype=dtype)
        self.name = name
        self.grad: Optional[np.ndarray] = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

_ACTIVE_TAPE: Optional["Tape"] = None


class Tape:
    """Ordered record of executed ops; replaying it backwards yields grads.

    Ops are appended in execution order, so the list is already
    topologically sorted: reversing it visits every consumer before its
    producers.
    """

    def __init__(self):
        # entries: [output, parents tuple, backward fn, op tag]
        self._ops: list = []

    def __len__(self) -> int:
        return len(self._ops)

    def _record(self, out: Tensor, parents: tuple, backward: Callable, tag: str):
        out._tracked = True
        self._ops.append((out, parents, backward, tag))

    def first_nonfinite_op(self) -> Optional[str]:
        """Tag of the earliest recorded op whose output is non-finite."""
        for out, _, _, tag in self._ops:
            if not np.isfinite(out.data).all():
                return tag
        return None

    def backward(self, loss: Tensor, params: Iterable[Parameter] = ()) -> dict:
        """Accumulate d(loss)/d(p) for every parameter reachable from `loss`.

        Returns a name -> ndarray map covering *all* of `params`;
        unreachable ones get zeros.  Also stores each gradient on the
        parameter's `.grad`.  The tape is consumed by this call.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        params = list(params)
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        ops, self._ops = self._ops, []
        for i in range(len(ops) - 1, -1, -1):
            out, parents, bwd, _tag = ops[i]
            ops[i] = None  # release saved buffers as we go
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, bwd(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        out_map = {}
        for p in params:
            g = grads.get(id(p))
            if g is None:
                g = np.zeros_like(p.data)
            p.grad = g
            out_map[p.name] = g
        return out_map


@contextmanager
def record():
    """Activate a fresh tape for the enclosed forward computation."""
    global _ACTIVE_TAPE
    prev = _ACTIVE_TAPE
    tape = Tape()
    _ACTIVE_TAPE = tape
    try:
        yield tape
    finally:
        _ACTIVE_TAPE = prev


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE


def _needs_grad(t: Tensor) -> bool:
    return isinstance(t, Parameter) or t._tracked


def _emit(out_data: np.ndarray, parents: Sequence[Tensor], backward: Callable, tag: str) -> Tensor:
    out = Tensor(out_data)
    tape = _ACTIVE_TAPE
    if tape is not None and any(_needs_grad(p) for p in parents):
        tape._record(out, tuple(parents), backward, tag)
    return out


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.isfinite(t.data).all():
        raise NumericsError(f"non-finite values in {what}")
    return t


# --------------------------------------------------------------------------
# Elementwise arithmetic
# --------------------------------------------------------------------------

def _operand_views(a: Tensor, b: Tensor):
    """Views of both operands ready for numpy broadcasting.

    A bare channel vector (C,) meeting an N x C x H x W map is aligned to the
    channel axis rather than numpy's trailing-axis default; everything else
    follows standard broadcasting rules.
    """
    ad, bd = a.data, b.data
    if ad.ndim == 4 and bd.shape == (ad.shape[1],):
        bd = bd.reshape(1, -1, 1, 1)
    elif bd.ndim == 4 and ad.shape == (bd.shape[1],):
        ad = ad.reshape(1, -1, 1, 1)
    try:
        np.broadcast_shapes(ad.shape, bd.shape)
    except ValueError:
        raise ShapeError(
            f"elementwise operands have incompatible shapes {a.shape} vs {b.shape}") from None
    return ad, bd


def _reduce_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair_backward(a, b, ad, bd, ga_fn, gb_fn):
    """Build the backward closure for a broadcasting binary op.

    Gradients are reduced to the aligned view shapes, then reshaped onto the
    operands' true shapes (relevant for bare channel vectors).
    """
    a_view, b_view = ad.shape, bd.shape

    def backward(g):
        ga = _reduce_to_shape(ga_fn(g), a_view).reshape(a.shape)
        gb = _reduce_to_shape(gb_fn(g), b_view).reshape(b.shape)
        return ga, gb

    return backward


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = _operand_views(a, b)
    backward = _pair_backward(a, b, ad, bd, lambda g: g, lambda g: g)
    return _emit(ad + bd, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = _operand_views(a, b)
    backward = _pair_backward(a, b, ad, bd, lambda g: g, lambda g: -g)
    return _emit(ad - bd, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = _operand_views(a, b)
    backward = _pair_backward(a, b, ad, bd, lambda g: g * bd, lambda g: g * ad)
    return _emit(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = _operand_views(a, b)
    backward = _pair_backward(a, b, ad, bd,
                              lambda g: g / bd,
                              lambda g: -g * ad / (bd * bd))
    return _emit(ad / bd, (a, b), backward, "div")


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g * s,)

    return _emit(a.data * s, (a,), backward, "scale")


def add_const(a, c: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g,)

    return _emit(a.data + c, (a,), backward, "add_const")


def elementwise(kind: str, a, b) -> Tensor:
    """Dispatch form used by callers that parameterize the op kind."""
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# --------------------------------------------------------------------------
# Activations
# --------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)

    def backward(g):
        return (g * s * (1.0 - s),)

    return _emit(s, (x,), backward, "sigmoid")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _emit(np.where(mask, x.data, 0.0), (x,), backward, "relu")


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    xd = x.data

    def backward(g):
        return (g * (s + xd * s * (1.0 - s)),)

    return _emit(xd * s, (x,), backward, "silu")


def softplus(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    out = np.log1p(np.exp(-np.abs(xd))) + np.maximum(xd, 0.0)
    s = _sigmoid(xd)

    def backward(g):
        return (g * s,)

    return _emit(out, (x,), backward, "softplus")


_ACTIVATIONS = {"sigmoid": sigmoid, "relu": relu, "silu": silu}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None
    return fn(x)


# --------------------------------------------------------------------------
# Reductions
# --------------------------------------------------------------------------

def reduce(x, kind: str, over: str) -> Tensor:
    """Mean/max over spatial (-> N,C,1,1) or channel (-> N,1,H,W) axes.

    Max routes its gradient to the first (row-major) maximum.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"reduce expects an N,C,H,W tensor, got shape {x.shape}")
    n, c, h, w = x.shape
    if over not in ("spatial", "channel"):
        raise ValueError(f"unknown reduce axis group {over!r}")
    if kind not in ("mean", "max"):
        raise ValueError(f"unknown reduce kind {kind!r}")

    if over == "spatial":
        flat = x.data.reshape(n, c, h * w)
        if kind == "mean":
            out = flat.mean(axis=2).reshape(n, c, 1, 1)

            def backward(g):
                return (np.broadcast_to(g / (h * w), x.shape).copy(),)
        else:
            idx = flat.argmax(axis=2)
            out = np.take_along_axis(flat, idx[:, :, None], axis=2).reshape(n, c, 1, 1)

            def backward(g):
                gx = np.zeros_like(flat)
                np.put_along_axis(gx, idx[:, :, None], g.reshape(n, c, 1), axis=2)
                return (gx.reshape(x.shape),)
    else:
        if kind == "mean":
            out = x.data.mean(axis=1, keepdims=True)

            def backward(g):
                return (np.broadcast_to(g / c, x.shape).copy(),)
        else:
            idx = x.data.argmax(axis=1)
            out = np.take_along_axis(x.data, idx[:, None], axis=1)

            def backward(g):
                gx = np.zeros_like(x.data)
                np.put_along_axis(gx, idx[:, None], g, axis=1)
                return (gx,)

    return _emit(out, (x,), backward, f"reduce_{kind}_{over}")


def sum_all(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (np.full_like(x.data, float(g)),)

    return _emit(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward, "sum_all")


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    n = x.size

    def backward(g):
        return (np.full_like(x.data, float(g) / n),)

    return _emit(np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward, "mean_all")


# --------------------------------------------------------------------------
# Shape plumbing
# --------------------------------------------------------------------------

def concat_channels(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"channel concat needs matching N,H,W: {a.shape} vs {b.shape}")
    ca = a.shape[1]

    def backward(g):
        return g[:, :ca], g[:, ca:]

    return _emit(np.concatenate([a.data, b.data], axis=1), (a, b), backward, "concat_channels")


def channel_shuffle(x, groups: int) -> Tensor:
    """Group-transpose permutation: out channel j*g+i <- in channel i*(C/g)+j."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"channel_shuffle expects N,C,H,W, got {x.shape}")
    c = x.shape[1]
    if c % groups != 0:
        raise ShapeError(f"channel count {c} not divisible by groups {groups}")
    perm = np.arange(c).reshape(groups, c // groups).T.reshape(-1)
    inv = np.argsort(perm)

    def backward(g):
        return (np.ascontiguousarray(g[:, inv]),)

    return _emit(np.ascontiguousarray(x.data[:, perm]), (x,), backward, "channel_shuffle")


def nchw_to_seq(x) -> Tensor:
    """N,C,H,W -> N,L,C with L = H*W in row-major order."""
    x = as_tensor(x)
    n, c, h, w = x.shape

    def backward(g):
        return (np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(n, c, h, w),)

    out = np.ascontiguousarray(x.data.reshape(n, c, h * w).transpose(0, 2, 1))
    return _emit(out, (x,), backward, "nchw_to_seq")


def seq_to_nchw(x, h: int, w: int) -> Tensor:
    """N,L,C -> N,C,H,W, inverse of nchw_to_seq."""
    x = as_tensor(x)
    n, l, c = x.shape
    if l != h * w:
        raise ShapeError(f"sequence length {l} != {h}x{w}")

    def backward(g):
        return (np.ascontiguousarray(g.reshape(n, c, l).transpose(0, 2, 1)),)

    out = np.ascontiguousarray(x.data.transpose(0, 2, 1)).reshape(n, c, h, w)
    return _emit(out, (x,), backward, "seq_to_nchw")


def gather_seq(x, perm: np.ndarray, inverse: np.ndarray) -> Tensor:
    """Permute the sequence axis of an N,L,C tensor: out[:, p] = x[:, perm[p]]."""
    x = as_tensor(x)

    def backward(g):
        return (np.ascontiguousarray(g[:, inverse]),)

    return _emit(np.ascontiguousarray(x.data[:, perm]), (x,), backward, "gather_seq")


# --------------------------------------------------------------------------
# Convolution
# --------------------------------------------------------------------------

def _conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    padded = size + 2 * padding
    if padded < k:
        raise ShapeError(f"kernel size {k} exceeds padded input extent {padded}")
    return (padded - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """x: (B,C,H,W) -> cols (B, C*kh*kw, OH*OW)."""
    b, c, h, w = x.shape
    oh = _conv_out_size(h, kh, stride, padding)
    ow = _conv_out_size(w, kw, stride, padding)
    if padding > 0:
        xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = x
    else:
        xp = x
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    view = view[:, :, ::stride, ::stride]  # (B,C,OH,OW,kh,kw)
    cols = np.ascontiguousarray(view.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * kh * kw, oh * ow)
    return cols, oh, ow


def _col2im(cols: np.ndarray, xshape, kh: int, kw: int, stride: int, padding: int,
            oh: int, ow: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add cols back onto the input grid."""
    b, c, h, w = xshape
    xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols6 = cols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        hi = i + stride * (oh - 1) + 1
        for j in range(kw):
            wj = j + stride * (ow - 1) + 1
            xp[:, :, i:hi:stride, j:wj:stride] += cols6[:, :, i, j]
    if padding > 0:
        return xp[:, :, padding:padding + h, padding:padding + w]
    return xp


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0, groups: int = 1,
           transposed: bool = False) -> Tensor:
    """2-d cross-correlation, grouped/depthwise/pointwise/transposed.

    Weight layouts: (C_out, C_in/g, kh, kw) for normal convolution and
    (C_in, C_out/g, kh, kw) for transposed (gradient-of-conv) mode.
    """
    x, w = as_tensor(x), as_tensor(w)
    if b is not None:
        b = as_tensor(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if transposed:
        return _conv_transpose2d(x, w, b, stride, padding, groups)
    return _conv_forward(x, w, b, stride, padding, groups)


def _conv_forward(x: Tensor, w: Tensor, b: Optional[Tensor], stride, padding, groups) -> Tensor:
    bn, cin, h, wdt = x.shape
    cout, cin_g, kh, kw = w.shape
    if cin % groups or cout % groups:
        raise ShapeError(f"channels ({cin} in, {cout} out) not divisible by groups {groups}")
    if cin_g != cin // groups:
        raise ShapeError(f"weight expects {cin_g} channels per group, input provides {cin // groups}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"bias shape {b.shape} != ({cout},)")

    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        cols, oh, ow = x.data.reshape(bn, cin, h * wdt), h, wdt
    else:
        cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    p = oh * ow
    cols_g = cols.reshape(bn, groups, (cin // groups) * kh * kw, p)
    w_g = w.data.reshape(groups, cout // groups, (cin // groups) * kh * kw)
    out = np.matmul(w_g[None], cols_g).reshape(bn, cout, oh, ow)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)

    def backward(g):
        g_g = g.reshape(bn, groups, cout // groups, p)
        dw = np.matmul(g_g, cols_g.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
        dcols = np.matmul(w_g.transpose(0, 2, 1)[None], g_g).reshape(bn, cin * kh * kw, p)
        if kh == 1 and kw == 1 and stride == 1 and padding == 0:
            dx = dcols.reshape(x.shape)
        else:
            dx = _col2im(dcols, x.shape, kh, kw, stride, padding, oh, ow)
        db = None if b is None else g.sum(axis=(0, 2, 3))
        return dx, dw, db

    parents = (x, w) if b is None else (x, w, b)
    return _emit(out, parents, backward, "conv2d")


def _conv_transpose2d(x: Tensor, w: Tensor, b: Optional[Tensor], stride, padding, groups) -> Tensor:
    bn, cin, h, wdt = x.shape
    cin_w, cout_g, kh, kw = w.shape
    if cin_w != cin:
        raise ShapeError(f"transposed conv weight expects {cin_w} input channels, got {cin}")
    if cin % groups:
        raise ShapeError(f"input channels {cin} not divisible by groups {groups}")
    cout = cout_g * groups
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (wdt - 1) * stride - 2 * padding + kw
    if oh < 1 or ow < 1:
        raise ShapeError(f"transposed conv output would be empty: {oh}x{ow}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"bias shape {b.shape} != ({cout},)")

    p = h * wdt
    x_g = x.data.reshape(bn, groups, cin // groups, p)
    w_g = w.data.reshape(groups, cin // groups, cout_g * kh * kw)
    cols = np.matmul(w_g.transpose(0, 2, 1)[None], x_g)  # (B,g,cout_g*kh*kw,P)
    cols = cols.reshape(bn, cout * kh * kw, p)
    out = _col2im(cols, (bn, cout, oh, ow), kh, kw, stride, padding, h, wdt)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)

    def backward(g):
        dcols, _, _ = _im2col(g, kh, kw, stride, padding)  # (B, cout*kh*kw, P)
        dcols_g = dcols.reshape(bn, groups, cout_g * kh * kw, p)
        dx = np.matmul(w_g[None], dcols_g).reshape(x.shape)
        dw = np.matmul(x_g, dcols_g.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
        db = None if b is None else g.sum(axis=(0, 2, 3))
        return dx, dw, db

    parents = (x, w) if b is None else (x, w, b)
    return _emit(out, parents, backward, "conv_transpose2d")


# --------------------------------------------------------------------------
# Bilinear upsampling
# --------------------------------------------------------------------------

def _interp_index(n: int, factor: int, dtype):
    """Half-pixel-center source indices/weights for n -> n*factor."""
    src = (np.arange(n * factor, dtype=np.float64) + 0.5) / factor - 0.5
    i0f = np.floor(src)
    t = (src - i0f).astype(dtype)
    i0 = np.clip(i0f, 0, n - 1).astype(np.intp)
    i1 = np.clip(i0f + 1, 0, n - 1).astype(np.intp)
    return i0, i1, t


def bilinear_upsample(x, factor: int) -> Tensor:
    """Integer-factor bilinear upsampling with half-pixel-center sampling."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"bilinear_upsample expects N,C,H,W, got {x.shape}")
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        def backward(g):
            return (g,)
        return _emit(x.data.copy(), (x,), backward, "bilinear_upsample")

    n, c, h, w = x.shape
    r0, r1, tr = _interp_index(h, factor, x.dtype)
    c0, c1, tc = _interp_index(w, factor, x.dtype)
    rows = x.data[:, :, r0, :] * (1 - tr)[None, None, :, None] + x.data[:, :, r1, :] * tr[None, None, :, None]
    out = rows[:, :, :, c0] * (1 - tc)[None, None, None, :] + rows[:, :, :, c1] * tc[None, None, None, :]

    def backward(g):
        grows = np.zeros((n, c, h * factor, w), dtype=g.dtype)
        np.add.at(grows, (slice(None), slice(None), slice(None), c0), g * (1 - tc)[None, None, None, :])
        np.add.at(grows, (slice(None), slice(None), slice(None), c1), g * tc[None, None, None, :])
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), slice(None), r0), grows * (1 - tr)[None, None, :, None])
        np.add.at(gx, (slice(None), slice(None), r1), grows * tr[None, None, :, None])
        return (gx,)

    return _emit(out, (x,), backward, "bilinear_upsample")


# --------------------------------------------------------------------------
# Normalization
# --------------------------------------------------------------------------

def layer_norm_channels(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Layer norm over the channel axis of an N,C,H,W map."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"layer_norm_channels expects N,C,H,W, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"norm affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gm = gamma.data.reshape(1, c, 1, 1)
    out = gm * xhat + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        dxhat = g * gm
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        return dx, dgamma, dbeta

    return _emit(out, (x, gamma, beta), backward, "layer_norm_channels")


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------

def bce_with_logits_mean(logits, target) -> Tensor:
    """Mean binary cross-entropy on logits; target is a constant map."""
    logits = as_tensor(logits)
    t = as_tensor(target).data
    if t.shape != logits.shape:
        raise ShapeError(f"bce target shape {t.shape} != logits shape {logits.shape}")
    z = logits.data
    out = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    s = _sigmoid(z)
    n = z.size

    def backward(g):
        return ((s - t) * (float(g) / n),)

    return _emit(np.asarray(out.mean(), dtype=z.dtype), (logits,), backward, "bce_with_logits")
