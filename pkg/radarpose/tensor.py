"""
Dense n-dimensional tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. While a Tape is active (``with Tape()
as tape:``) every operation whose inputs include a tracked tensor appends a
node to the tape; ``tape.backward(loss)`` then walks the nodes in strict
reverse insertion order. Parameters are tensors created with
``requires_grad=True``; they become leaf nodes the first time a recording op
touches them.

Every op checks its result for NaN/Inf and raises NonFiniteError.
"""

import contextvars
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int]
Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "radarpose_active_tape", default=None
)


@dataclass
class Node:
    """One recorded operation."""

    op: str
    inputs: Tuple[Optional[int], ...]
    backward: Optional[Backward]
    shape: Tuple[int, ...]


class Tape:
    """Append-only record of operations; single owner, one per forward pass."""

    def __init__(self):
        self.nodes: List[Node] = []
        self._leaves: Dict[int, int] = {}
        self._leaf_refs: List["Tensor"] = []
        self._grads: Dict[int, np.ndarray] = {}
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def watch(self, tensor: "Tensor") -> int:
        """Register ``tensor`` as a leaf and return its node id."""
        key = id(tensor)
        if key not in self._leaves:
            self._leaves[key] = self._append(Node("leaf", (), None, tensor.shape))
            self._leaf_refs.append(tensor)
        return self._leaves[key]

    def node_of(self, tensor: "Tensor") -> Optional[int]:
        if tensor.tape is self and tensor.node_id is not None:
            return tensor.node_id
        if tensor.requires_grad:
            return self.watch(tensor)
        return None

    def is_tracked(self, tensor: "Tensor") -> bool:
        return (tensor.tape is self and tensor.node_id is not None) or tensor.requires_grad

    def backward(self, loss: "Tensor") -> Dict[int, np.ndarray]:
        """Accumulate d(loss)/d(node) for every node that feeds ``loss``."""
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self or loss.node_id is None:
            raise ValueError("loss was not recorded on this tape")

        grads: Dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape, dtype=loss.dtype)}
        for node_id in range(loss.node_id, -1, -1):
            node = self.nodes[node_id]
            g = grads.get(node_id)
            if g is None or node.backward is None:
                continue
            del grads[node_id]
            for input_id, gi in zip(node.inputs, node.backward(g)):
                if input_id is None or gi is None:
                    continue
                assert input_id < node_id, "tape order violated"
                grads[input_id] = grads[input_id] + gi if input_id in grads else gi
        self._grads = grads
        return grads

    def grad(self, tensor: "Tensor") -> np.ndarray:
        """Gradient of the last backward() w.r.t. a leaf; zeros if unused."""
        node_id = self._leaves.get(id(tensor))
        if node_id is None or node_id not in self._grads:
            return np.zeros(tensor.shape, dtype=tensor.dtype)
        return np.asarray(self._grads[node_id]).reshape(tensor.shape)

    def gradients(self, params: Mapping[str, "Tensor"]) -> Dict[str, np.ndarray]:
        return {name: self.grad(p) for name, p in params.items()}


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


class Tensor:
    """A real-valued array that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "name", "tape", "node_id")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.tape: Optional[Tape] = None
        self.node_id: Optional[int] = None

    @classmethod
    def _recorded(cls, data: np.ndarray, tape: Tape, node_id: int) -> "Tensor":
        out = cls(data)
        out.tape = tape
        out.node_id = node_id
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return slice_(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _check_finite(op: str, out: np.ndarray) -> None:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")


def record(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward: Backward) -> Tensor:
    """Wrap ``out`` and, if a tape is active and any input is tracked, record it.

    ``backward(g)`` must return one gradient (or None) per input, each shaped
    like that input. Custom differentiable kernels use this directly.
    """
    _check_finite(op, out)
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return Tensor(out)
    ids = tuple(tape.node_of(t) for t in inputs)
    if all(i is None for i in ids):
        return Tensor(out)
    node_id = tape._append(Node(op, ids, backward, out.shape))
    return Tensor._recorded(out, tape, node_id)


def is_tracked(tensor: Tensor) -> bool:
    tape = _ACTIVE_TAPE.get()
    return tape is not None and tape.is_tracked(tensor)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shapes(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e


# elementwise arithmetic


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shapes("add", a, b)
    out = a.data + b.data
    return record("add", out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shapes("sub", a, b)
    out = a.data - b.data
    return record("sub", out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shapes("mul", a, b)
    out = a.data * b.data
    return record(
        "mul",
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shapes("div", a, b)
    out = a.data / b.data
    return record(
        "div",
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
    )


def neg(x: Tensor) -> Tensor:
    return record("neg", -x.data, (x,), lambda g: (-g,))


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return as_tensor(a, like), as_tensor(b, like)


# pointwise nonlinearities


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return record("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NonFiniteError("log of a non-positive value")
    out = np.log(x.data)
    return record("log", out, (x,), lambda g: (g / x.data,))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def silu(x: Tensor) -> Tensor:
    s = expit(x.data)
    out = x.data * s
    return record("silu", out, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),))


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data)
    return record("softplus", out, (x,), lambda g: (g * expit(x.data),))


# reductions and shape ops


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return record("sum", np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return sum_(x, axis, keepdims) / float(count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from e
    return record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"permute axes {tuple(axes)} do not match rank {x.ndim}")
    inverse = np.argsort([a % x.ndim for a in axes])
    out = np.transpose(x.data, axes)
    return record("permute", out, (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {[t.shape for t in tensors]} along axis {axis}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record("concat", out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        at = axis % (t.ndim + 1)
        expanded.append(reshape(t, t.shape[:at] + (1,) + t.shape[at:]))
    return concat(expanded, axis=axis)


def slice_(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    out = x.data[index]

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[index] = g
        return (gx,)

    return record("slice", np.array(out), (x,), backward)


def gather(x: Tensor, index: np.ndarray, axis: int = 0) -> Tensor:
    """Select entries of ``x`` along ``axis`` by an integer index array."""
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < -x.shape[axis] or index.max() >= x.shape[axis]):
        raise ShapeError(f"gather index out of range for axis of size {x.shape[axis]}")
    out = np.take(x.data, index, axis=axis)

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(np.moveaxis(gx, axis, 0), index, np.moveaxis(g, axis, 0))
        return (gx,)

    return record("gather", out, (x,), backward)


# linear algebra


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record("matmul", out, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)
    return record(
        "softmax",
        out,
        (x,),
        lambda g: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),),
    )


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: {x.shape} with gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * gamma.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layer_norm", out, (x, gamma, beta), backward)


# convolution and pooling


def _triple(value) -> Tuple[int, int, int]:
    if isinstance(value, int):
        return (value, value, value)
    return tuple(value)


def conv3d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=1, padding=0) -> Tensor:
    """3D cross-correlation.

    x: [N][Cin][D1][D2][D3], w: [Cout][Cin][k1][k2][k3], b: [Cout].
    ``padding`` is zero padding per spatial axis.
    """
    if x.ndim != 5 or w.ndim != 5 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv3d: input {x.shape} with kernel {w.shape}")
    stride = _triple(stride)
    padding = _triple(padding)
    kernel = w.shape[2:]
    padded = tuple(n + 2 * p for n, p in zip(x.shape[2:], padding))
    if any(k > n for k, n in zip(kernel, padded)):
        raise ShapeError(f"conv3d: kernel {kernel} larger than padded input {padded}")

    xp = np.pad(x.data, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    windows = sliding_window_view(xp, kernel, axis=(2, 3, 4))[
        :, :, :: stride[0], :: stride[1], :: stride[2]
    ]
    out = np.tensordot(windows, w.data, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    out = np.moveaxis(out, -1, 1)
    if b is not None:
        out = out + b.data[None, :, None, None, None]
    out_spatial = out.shape[2:]
    need_x = is_tracked(x)

    def backward(g):
        gw = np.tensordot(g, windows, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        gb = g.sum(axis=(0, 2, 3, 4)) if b is not None else None
        gx = None
        if need_x:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kernel[0]):
                for j in range(kernel[1]):
                    for k in range(kernel[2]):
                        contrib = np.einsum("nodhw,oc->ncdhw", g, w.data[:, :, i, j, k])
                        gxp[
                            :,
                            :,
                            i : i + stride[0] * out_spatial[0] : stride[0],
                            j : j + stride[1] * out_spatial[1] : stride[1],
                            k : k + stride[2] * out_spatial[2] : stride[2],
                        ] += contrib
            gx = gxp[
                :,
                :,
                padding[0] : padding[0] + x.shape[2],
                padding[1] : padding[1] + x.shape[3],
                padding[2] : padding[2] + x.shape[4],
            ]
        grads = (gx, gw)
        return grads + (gb,) if b is not None else grads

    inputs = (x, w, b) if b is not None else (x, w)
    return record("conv3d", np.ascontiguousarray(out), inputs, backward)


def downsample(x: Tensor, axes: Sequence[int]) -> Tensor:
    """Average-pool by 2 (kernel 2, stride 2) along each of ``axes``."""
    axes = sorted(a % x.ndim for a in axes)
    for a in axes:
        if x.shape[a] % 2:
            raise ShapeError(f"downsample: axis {a} of {x.shape} is odd")
    split_shape: List[int] = []
    pool_axes = []
    for i, n in enumerate(x.shape):
        if i in axes:
            split_shape.extend([n // 2, 2])
            pool_axes.append(len(split_shape) - 1)
        else:
            split_shape.append(n)
    out = x.data.reshape(split_shape).mean(axis=tuple(pool_axes))
    scale = 0.5 ** len(axes)

    def backward(g):
        gx = g
        for a in axes:
            gx = np.repeat(gx, 2, axis=a)
        return (gx * scale,)

    return record("downsample", out, (x,), backward)


def causal_conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Depthwise causal convolution along the sequence axis.

    x: [L][C], w: [C][K], b: [C]; y[t] depends on x[t-K+1 .. t] only.
    """
    if x.ndim != 2 or w.shape[0] != x.shape[1] or b.shape != (x.shape[1],):
        raise ShapeError(f"causal_conv1d: input {x.shape}, kernel {w.shape}, bias {b.shape}")
    length = x.shape[0]
    k = w.shape[1]
    xp = np.pad(x.data, ((k - 1, 0), (0, 0)))
    windows = sliding_window_view(xp, k, axis=0)
    out = np.einsum("lck,ck->lc", windows, w.data) + b.data

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for j in range(k):
            gxp[j : j + length] += g * w.data[:, j]
        return gxp[k - 1 :], np.einsum("lck,lc->ck", windows, g), g.sum(axis=0)

    return record("causal_conv1d", out, (x, w, b), backward)
