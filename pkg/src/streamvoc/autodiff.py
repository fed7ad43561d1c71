"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every op records its parents and a backward closure on the output
:class:`Tensor`. :class:`Graph` collects the reachable nodes of a scalar
loss in creation order (which is a valid topological order) and runs the
reverse sweep. Only what the vocoder, its discriminators, the stub SSL
encoder and the losses need is implemented.

Precision defaults to float32; tests switch to float64 with
``with precision(np.float64): ...``.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, InvalidParameterError, ShapeError

_default_dtype = np.dtype(np.float32)
_grad_enabled = True
_ids = itertools.count()




def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors."""
    old = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """An n-d array with an optional gradient and a link to its producer."""

    __slots__ = ("data", "grad", "requires_grad", "op", "id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype.kind == "f":
            arr = data
        else:
            arr = np.asarray(data, dtype=_default_dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- basic info -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _scalar_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def _make(data: np.ndarray, parents: Iterable[Tensor], op: str, backward_fn) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Graph and backward
# ---------------------------------------------------------------------------


class Graph:
    """Topologically ordered view of the nodes that feed one output.

    ``nodes`` is sorted by creation id; since every op creates its output
    after its inputs, this order is topological.
    """

    def __init__(self, nodes: list[Tensor], output: Tensor):
        self.nodes = nodes
        self.output = output

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        seen: dict[int, Tensor] = {}
        stack = [output]
        while stack:
            t = stack.pop()
            if t.id in seen or not t.requires_grad:
                continue
            seen[t.id] = t
            stack.extend(t._parents)
        nodes = [seen[k] for k in sorted(seen)]
        return cls(nodes, output)

    def describe(self) -> list[dict]:
        """Node table: id, op kind, input ids and shape, in topological order."""
        return [
            {
                "id": n.id,
                "op": n.op,
                "inputs": [p.id for p in n._parents],
                "shape": list(n.shape),
            }
            for n in self.nodes
        ]

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]

    def backward(self) -> None:
        out = self.output
        if out.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {out.shape}")
        grads: dict[int, np.ndarray] = {out.id: np.ones_like(out.data)}
        for node in reversed(self.nodes):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if p.id in grads:
                    grads[p.id] = grads[p.id] + pg
                else:
                    grads[p.id] = pg


def backward(loss: Tensor) -> Graph:
    """Accumulate d(loss)/d(leaf) into ``.grad`` for every leaf requiring grad."""
    graph = Graph.from_output(loss)
    if not loss.requires_grad:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        return graph
    graph.backward()
    return graph


# ---------------------------------------------------------------------------
# Elementwise and reduction ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _scalar_like(a, b)
    b = _scalar_like(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _scalar_like(a, b)
    b = _scalar_like(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _scalar_like(a, b)
    b = _scalar_like(b, a)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), "mul", bw)


def div(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _scalar_like(a, b)
    b = _scalar_like(b, a)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), "div", bw)


def power(x: Tensor, exponent: float) -> Tensor:
    out = x.data**exponent

    def bw(g):
        return (g * exponent * x.data ** (exponent - 1),)

    return _make(out, (x,), "pow", bw)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), "exp", lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), "log", lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), "sqrt", lambda g: (g * 0.5 / out,))


def magnitude(re: Tensor, im: Tensor) -> Tensor:
    """sqrt(re**2 + im**2); the gradient at the origin is taken as zero."""
    out = np.hypot(re.data, im.data)
    safe = np.where(out > 0, out, 1.0)

    def bw(g):
        scale = np.where(out > 0, g / safe, 0.0)
        return scale * re.data, scale * im.data

    return _make(out, (re, im), "magnitude", bw)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), "tanh", lambda g: (g * (1.0 - out * out),))


def sin(x: Tensor) -> Tensor:
    return _make(np.sin(x.data), (x,), "sin", lambda g: (g * np.cos(x.data),))


def abs_(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), (x,), "abs", lambda g: (g * np.sign(x.data),))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient is passed only where x > floor."""
    mask = x.data > floor
    out = np.where(mask, x.data, np.asarray(floor, dtype=x.dtype))
    return _make(out, (x,), "clamp_min", lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)
    return _make(out, (x,), "leaky_relu", lambda g: (np.where(pos, g, slope * g),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)

    return _make(out, (x,), "gelu", bw)


def snake(x: Tensor, alpha: Tensor) -> Tensor:
    """Periodic activation ``x + sin(alpha*x)**2 / alpha`` with per-channel alpha.

    ``x`` is ``(B, C, L)`` (or ``(C, L)``), ``alpha`` is ``(C,)``.
    """
    a = alpha.data
    if np.any(a <= 0):
        raise InvalidParameterError("snake alpha must be strictly positive")
    ab = a.reshape((-1, 1))
    ax = ab * x.data
    s = np.sin(ax)
    out = x.data + s * s / ab

    def bw(g):
        s2 = np.sin(2.0 * ax)
        gx = g * (1.0 + s2)
        da = x.data * s2 / ab - s * s / (ab * ab)
        ga = (g * da).reshape((-1,) + g.shape[-2:]).sum(axis=(0, 2))
        return gx, ga.reshape(alpha.shape)

    return _make(out, (x, alpha), "snake", bw)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), "sum", bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _make(np.asarray(out, dtype=x.dtype), (x,), "mean", bw)


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), "reshape", lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), "transpose", lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, index) -> Tensor:
    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g) if _needs_add_at(index) else _assign_add(gx, index, g)
        return (gx,)

    return _make(np.ascontiguousarray(x.data[index]), (x,), "getitem", bw)


def _needs_add_at(index) -> bool:
    idx = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in idx)


def _assign_add(gx, index, g):
    gx[index] += g


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tensors, "concat", bw)


def pad(x: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero padding, ``widths`` as for :func:`numpy.pad`."""
    out = np.pad(x.data, widths)
    slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape))
    return _make(out, (x,), "pad", lambda g: (g[slices],))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(b, Tensor):
        b = as_tensor(b, dtype=a.dtype)
    if not isinstance(a, Tensor):
        a = as_tensor(a, dtype=b.dtype)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    out = a.data @ b.data

    def bw(g):
        if b.ndim > 1:
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        else:
            ga = g[..., None] * b.data
            gb = (g[..., None] * a.data).reshape(-1, b.shape[0]).sum(axis=0)
        return _unbroadcast(ga, a.shape), gb

    return _make(out, (a, b), "matmul", bw)


# ---------------------------------------------------------------------------
# Losses and vector helpers
# ---------------------------------------------------------------------------


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def l1_mean(a: Tensor, b: Tensor) -> Tensor:
    b = _scalar_like(b, a)
    _check_same(a, b, "l1_mean")
    return mean(abs_(a - b))


def mse_mean(a: Tensor, b: Tensor) -> Tensor:
    b = _scalar_like(b, a)
    _check_same(a, b, "mse_mean")
    d = a - b
    return mean(d * d)


def dot(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Inner product along ``axis``."""
    b = _scalar_like(b, a)
    _check_same(a, b, "dot")
    return tsum(a * b, axis=axis)


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    return sqrt(tsum(x * x, axis=axis))


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------


def _conv_pads(padding, k: int, dilation: int) -> tuple[int, int]:
    total = (k - 1) * dilation
    if padding == "causal":
        return total, 0
    if padding == "same":
        left = total // 2
        return left, total - left
    if padding == "valid":
        return 0, 0
    left, right = padding
    return int(left), int(right)


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    padding="valid",
) -> Tensor:
    """1-D cross-correlation.

    Args:
        x: ``(B, C_in, L)`` or ``(C_in, L)``.
        weight: ``(C_out, C_in, k)``.
        bias: ``(C_out,)`` or None.
        padding: ``"causal"`` pads ``(k-1)*dilation`` zeros on the left only,
            ``"same"`` pads symmetrically (extra sample on the right), ``"valid"``
            pads nothing; a ``(left, right)`` pair is also accepted.

    Returns:
        ``(B, C_out, L_out)`` (batch dim dropped if the input had none).
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects 3-d input/weight, got {x.shape}, {weight.shape}")
    cout, cin, k = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv1d: input has {x.shape[1]} channels, weight expects {cin}")
    left, right = _conv_pads(padding, k, dilation)
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if (left or right) else x.data
    span = (k - 1) * dilation + 1
    lout = (xp.shape[-1] - span) // stride + 1
    if lout <= 0:
        raise ShapeError(f"conv1d: input length {x.shape[-1]} too short for kernel span {span}")
    B = xp.shape[0]
    stop = (lout - 1) * stride + 1
    # im2col: (B, C_in*k, L_out), one matrix product per batch item
    win = np.lib.stride_tricks.sliding_window_view(xp, span, axis=2)[:, :, :stop:stride, ::dilation]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B, cin * k, lout)
    wmat = weight.data.reshape(cout, cin * k)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (wmat.T @ g).reshape(B, cin, k, lout)
            gxp = np.zeros_like(xp)
            for j in range(k):
                off = j * dilation
                gxp[:, :, off : off + stop : stride] += gcols[:, :, j]
            gx = gxp[:, :, left : left + x.shape[-1]]
        if weight.requires_grad:
            gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    res = _make(out, parents, "conv1d", bw)
    return reshape(res, res.shape[1:]) if squeeze else res


def conv_transpose1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding="causal",
) -> Tensor:
    """Transposed 1-D convolution (zero-insertion upsampling followed by a conv).

    Args:
        x: ``(B, C_in, L)`` or ``(C_in, L)``.
        weight: ``(C_in, C_out, k)`` with ``k >= stride``.
        padding: ``"causal"`` keeps the first ``L*stride`` samples of the full
            output, so output ``n`` only sees input frames ``<= n // stride``;
            ``"same"`` drops ``(k - stride) // 2`` samples on the left instead;
            ``"full"`` returns all ``(L-1)*stride + k`` samples (bias excluded
            from the tail is the caller's business).
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv_transpose1d expects 3-d input/weight, got {x.shape}, {weight.shape}")
    cin, cout, k = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv_transpose1d: input has {x.shape[1]} channels, weight expects {cin}")
    if stride < 1 or k < stride:
        raise ShapeError(f"conv_transpose1d: need 1 <= stride <= k, got stride={stride}, k={k}")
    B, _, L = x.shape
    full_len = (L - 1) * stride + k
    if padding == "causal":
        start, length = 0, L * stride
    elif padding == "same":
        start, length = (k - stride) // 2, L * stride
    elif padding == "full":
        start, length = 0, full_len
    else:
        raise ValueError(f"unknown padding {padding!r}")
    w = weight.data
    xd = x.data
    full = np.zeros((B, cout, full_len), dtype=np.result_type(xd, w))
    stop = (L - 1) * stride + 1
    for j in range(k):
        full[:, :, j : j + stop : stride] += w[:, :, j].T @ xd
    out = full[:, :, start : start + length]
    if bias is not None:
        out = out + bias.data[:, None]
    else:
        out = np.ascontiguousarray(out)

    def bw(g):
        gfull = np.zeros((B, cout, full_len), dtype=g.dtype)
        gfull[:, :, start : start + length] = g
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.zeros_like(xd)
            for j in range(k):
                gx += w[:, :, j] @ gfull[:, :, j : j + stop : stride]
        if weight.requires_grad:
            gw = np.empty_like(w)
            for j in range(k):
                gw[:, :, j] = np.tensordot(xd, gfull[:, :, j : j + stop : stride], axes=([0, 2], [0, 2]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    res = _make(out, parents, "conv_transpose1d", bw)
    return reshape(res, res.shape[1:]) if squeeze else res


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> Tensor:
    """2-D cross-correlation on ``(B, C_in, H, W)`` with symmetric zero padding.

    Lowered to a single matrix product over unfolded patches (im2col).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input/weight, got {x.shape}, {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weight expects {cin}")
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    B, _, H, W = xp.shape
    ho = (H - kh) // sh + 1
    wo = (W - kw) // sw + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {(kh, kw)}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(B, cin * kh * kw, ho * wo)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(B, cout, ho, wo)
    hstop = (ho - 1) * sh + 1
    wstop = (wo - 1) * sw + 1

    def bw(g):
        g2 = g.reshape(B, cout, ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(B, cin, kh, kw, ho, wo)
            gxp = np.zeros_like(xp)
            for a in range(kh):
                for b in range(kw):
                    gxp[:, :, a : a + hstop : sh, b : b + wstop : sw] += gcols[:, :, a, b]
            gx = gxp[:, :, ph : ph + x.shape[2], pw : pw + x.shape[3]]
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, "conv2d", bw)


def frame(x: Tensor, window: int, hop: int) -> Tensor:
    """Overlapping frames ``(B, T, window)`` of a ``(B, L)`` signal, no padding."""
    if x.ndim != 2:
        raise ShapeError(f"frame expects (B, L), got {x.shape}")
    L = x.shape[1]
    if L < window:
        raise ShapeError(f"signal of length {L} shorter than window {window}")
    T = (L - window) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(x.data, window, axis=1)[:, ::hop][:, :T]
    out = np.ascontiguousarray(view)

    def bw(g):
        gx = np.zeros_like(x.data)
        B = x.shape[0]
        if window % hop == 0:
            # frames overlap in whole hops: add one hop-wide column block at a time
            for off in range(0, window, hop):
                gx[:, off : off + T * hop] += g[:, :, off : off + hop].reshape(B, T * hop)
        else:
            for t in range(T):
                gx[:, t * hop : t * hop + window] += g[:, t]
        return (gx,)

    return _make(out, (x,), "frame", bw)
