"""Dense float64 tensors with reverse-mode differentiation.

Every feature map in the network is a `Tensor`. Operations record their
parents and a backward closure; `backward()` walks the recorded graph once in
reverse topological order and accumulates gradients on the leaves that asked
for them.

Broadcasting is deliberately narrow: a size-1 tensor (or a Python number)
combines with any tensor, and everything else must match exactly or go
through the explicit `expand` op.
"""

import contextlib
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from constants import GRAD_EPS
from errors import ContractError, DimensionError

_recording = threading.local()


def grad_enabled():
    return getattr(_recording, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Build ops without recording parents; state is per thread."""
    previous = grad_enabled()
    _recording.enabled = False
    try:
        yield
    finally:
        _recording.enabled = previous


class Tensor:
    """An immutable n-d array of doubles that may take part in a graph."""

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = None
        self._parents = ()
        self._backward = None

    @classmethod
    def from_op(cls, data, parents, backward, op):
        """Build the output of a differentiable op.

        `backward(grad_out)` must return one gradient (or None) per parent,
        each shaped like that parent.
        """
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.op = op
        out.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @classmethod
    def parameter(cls, data):
        return cls(data, requires_grad=True)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by a Python scalar")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def backward(self):
        backward(self)


def _as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _reduce_to(grad, shape):
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def _operands(a, b, name):
    """Raw arrays for a binary op; a size-1 side is treated as a scalar."""
    if a.shape == b.shape:
        return a.data, b.data
    if b.size == 1:
        return a.data, b.data.reshape(())
    if a.size == 1:
        return a.data.reshape(()), b.data
    raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not match")


# -- elementwise ------------------------------------------------------------
def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = _operands(a, b, "add")

    def _backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor.from_op(ad + bd, (a, b), _backward, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = _operands(a, b, "sub")

    def _backward(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return Tensor.from_op(ad - bd, (a, b), _backward, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = _operands(a, b, "mul")

    def _backward(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return Tensor.from_op(ad * bd, (a, b), _backward, "mul")


def scale(x, factor):
    factor = float(factor)
    return Tensor.from_op(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def exp(x):
    y = np.exp(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * y,), "exp")


def log(x):
    return Tensor.from_op(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sigmoid(x):
    # split by sign so neither branch overflows
    z = x.data
    y = np.empty_like(z)
    pos = z >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    y[~pos] = ez / (1.0 + ez)
    return Tensor.from_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def leaky_relu(x, slope=0.0):
    """The relu-like gate: identity for positive inputs, `slope * x` otherwise."""
    gate = np.where(x.data > 0, 1.0, slope)
    return Tensor.from_op(x.data * gate, (x,), lambda g: (g * gate,), "leaky_relu")


def relu(x):
    return leaky_relu(x, 0.0)


def absolute(x):
    return relu(x) + relu(-x)


def clamp(x, low, high):
    return x - relu(x - high) + relu(low - x)


# -- reductions ---------------------------------------------------------------
def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tensor_sum(x, axis=None, keepdims=False):
    axes = _normalize_axes(axis, x.ndim)
    y = x.data.sum(axis=axes, keepdims=keepdims)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor.from_op(y, (x,), _backward, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(tensor_sum(x, axes, keepdims), 1.0 / count)


def softmax(x, axis=-1):
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(y, (x,), _backward, "softmax")


# -- linear algebra -----------------------------------------------------------
def matmul(a, b):
    """Matrix product over the last two axes; leading axes must be identical."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def _backward(g):
        return (np.matmul(g, np.swapaxes(b.data, -1, -2)),
                np.matmul(np.swapaxes(a.data, -1, -2), g))

    return Tensor.from_op(np.matmul(a.data, b.data), (a, b), _backward, "matmul")


# -- structure ----------------------------------------------------------------
def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view shape {x.shape} as {shape}") from None
    return Tensor.from_op(y, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(np.transpose(x.data, axes), (x,),
                          lambda g: (np.transpose(g, inverse),), "transpose")


def concat(tensors, axis=0):
    tensors = list(tensors)
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
                t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    y = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor.from_op(y, tensors, _backward, "concat")


def stack(tensors, axis=0):
    tensors = list(tensors)
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise DimensionError(f"stack: shapes {tensors[0].shape} and {t.shape} differ")

    def _backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    y = np.stack([t.data for t in tensors], axis=axis)
    return Tensor.from_op(y, tensors, _backward, "stack")


def getitem(x, index):
    y = x.data[index]

    def _backward(g):
        full = np.zeros_like(x.data)
        full[index] += g
        return (full,)

    return Tensor.from_op(np.array(y), (x,), _backward, "getitem")


def pad_hw(x, top, bottom, left, right):
    """Zero-pad the two trailing axes."""
    widths = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    h, w = x.shape[-2], x.shape[-1]

    def _backward(g):
        return (g[..., top:top + h, left:left + w],)

    return Tensor.from_op(np.pad(x.data, widths), (x,), _backward, "pad_hw")


def expand(x, shape):
    """Explicit numpy-style broadcast of `x` to `shape`."""
    shape = tuple(shape)
    try:
        y = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise DimensionError(f"expand: cannot broadcast {x.shape} to {shape}") from None
    lead = len(shape) - x.ndim
    kept = tuple(i + lead for i, n in enumerate(x.shape) if n == 1 and shape[i + lead] != 1)

    def _backward(g):
        g = g.sum(axis=tuple(range(lead)) + kept, keepdims=True)
        return (g.reshape(x.shape),)

    return Tensor.from_op(y, (x,), _backward, "expand")


def pixel_shuffle(x, u):
    """Rearrange (C*u*u, H, W) into (C, u*H, u*W)."""
    c, h, w = x.shape
    if u < 1 or c % (u * u):
        raise DimensionError(f"pixel_shuffle: {c} channels not divisible by {u}^2")
    y = x.data.reshape(c // (u * u), u, u, h, w).transpose(0, 3, 1, 4, 2)
    y = y.reshape(c // (u * u), h * u, w * u)

    def _backward(g):
        g = g.reshape(c // (u * u), h, u, w, u).transpose(0, 2, 4, 1, 3)
        return (g.reshape(c, h, w),)

    return Tensor.from_op(y, (x,), _backward, "pixel_shuffle")


def pixel_unshuffle(x, u):
    """Inverse of `pixel_shuffle`: (C, u*H, u*W) into (C*u*u, H, W)."""
    c, hu, wu = x.shape
    if u < 1 or hu % u or wu % u:
        raise DimensionError(f"pixel_unshuffle: extent {(hu, wu)} not divisible by {u}")
    h, w = hu // u, wu // u
    y = x.data.reshape(c, h, u, w, u).transpose(0, 2, 4, 1, 3).reshape(c * u * u, h, w)

    def _backward(g):
        g = g.reshape(c, u, u, h, w).transpose(0, 3, 1, 4, 2)
        return (g.reshape(c, hu, wu),)

    return Tensor.from_op(y, (x,), _backward, "pixel_unshuffle")


# -- convolution --------------------------------------------------------------
def conv2d(x, w, b=None, stride=1, padding=0):
    """Zero-padded cross-correlation of a (C_in, H, W) map with (C_out, C_in, k, k) kernels."""
    if x.ndim != 3 or w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"conv2d: expected (C,H,W) input and square kernels, got {x.shape} and {w.shape}")
    c_in, h, wd = x.shape
    c_out, kc, k, _ = w.shape
    if kc != c_in:
        raise DimensionError(f"conv2d: input has {c_in} channels but kernel expects {kc}")
    if b is not None and b.shape != (c_out,):
        raise DimensionError(f"conv2d: bias shape {b.shape} does not match {c_out} outputs")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if k > hp or k > wp:
        raise DimensionError(f"conv2d: kernel {k}x{k} larger than padded input {hp}x{wp}")
    s = stride
    h_out, w_out = (hp - k) // s + 1, (wp - k) // s + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s][:, :h_out, :w_out]
    y = np.tensordot(w.data, windows, axes=([1, 2, 3], [0, 3, 4]))
    if b is not None:
        y = y + b.data[:, None, None]

    def _backward(g):
        gw = np.tensordot(g, windows, axes=([1, 2], [1, 2]))
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, i:i + s * h_out:s, j:j + s * w_out:s] += np.tensordot(
                    w.data[:, :, i, j], g, axes=([0], [0]))
        gx = gxp[:, padding:padding + h, padding:padding + wd]
        gb = g.sum(axis=(1, 2)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor.from_op(y, parents, _backward, "conv2d")


# -- graph traversal ----------------------------------------------------------
def _topological_order(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(root, leaves=None):
    """Accumulate d(root)/d(leaf) into every reachable leaf's `.grad`.

    When `leaves` is given, their gradients are also returned in order;
    leaves the root does not depend on get exact zeros.
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(_topological_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if leaves is None:
        return None
    result = []
    for leaf in leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
        result.append(leaf.grad)
    return result


def grad_check(f, x, eps=GRAD_EPS):
    """Largest relative disagreement between analytic and central-difference gradients.

    `x` is a Tensor or a sequence of Tensors passed positionally to `f`, which
    must return a scalar Tensor. The error per coordinate is
    |analytic - numeric| / max(1, |numeric|).
    """
    inputs = [x] if isinstance(x, Tensor) else list(x)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    analytic = backward(f(*inputs), inputs)
    analytic = [a.copy() for a in analytic]

    worst = 0.0
    for t, a in zip(inputs, analytic):
        base = t.data
        flat = base.reshape(-1)
        for i in range(flat.size):
            probe = flat.copy()
            probe[i] = flat[i] + eps
            t.data = probe.reshape(base.shape)
            f_plus = f(*inputs).item()
            probe[i] = flat[i] - eps
            t.data = probe.reshape(base.shape)
            f_minus = f(*inputs).item()
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(a.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
        t.data = base
    for t in inputs:
        t.grad = None
    return worst
