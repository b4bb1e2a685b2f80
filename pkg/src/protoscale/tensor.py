"""Dense float64 tensors with reverse-mode automatic differentiation.

Values live in contiguous row-major numpy arrays. Every operation whose
inputs include at least one ``requires_grad`` tensor records a backward
closure on its output (record-on-execute). ``backward`` on a scalar loss
replays those closures in reverse execution order, which is a valid reverse
topological order because an op's output is always created after its inputs.

Gradients accumulate into preallocated ``grad`` buffers; callers zero them
between steps. There is no global graph state, so independent forward passes
never interact.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import (
    ContractError,
    DistributionError,
    NonFiniteError,
    ParameterError,
    ShapeError,
)

_EXECUTION_COUNTER = itertools.count()

# Floor used when taking logs of probabilities.
LOG_EPS = 1e-12


class Tensor:
    """N-dimensional float64 array, optionally participating in the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_seq")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,).
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = ()
        self._grad_fn = None
        self._seq = next(_EXECUTION_COUNTER)

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def require_finite(self, label="tensor"):
        """Raise NonFiniteError if any stored value is NaN or Inf."""
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"{label} contains non-finite values", term=label)
        return self

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self):
        """Copy of this tensor that does not participate in any tape."""
        return Tensor(self.data.copy(), requires_grad=False)

    # -- autodiff ------------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable requires_grad leaf.

        Only defined for scalar, tape-connected tensors. Repeated calls add
        onto existing grad buffers; zero them in between for fresh values.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that is not tape-connected")
        tape = GradientTape(self)
        # Leaf grads accumulate across calls; op-output grads are per-replay
        # scratch and must start clean or repeated calls compound.
        for node in tape.operations:
            node.grad.fill(0.0)
        self.grad += 1.0
        tape.replay()


class GradientTape:
    """Execution-ordered record of the operations reaching a root tensor.

    Collects every op-created tensor in the root's history and stores it in
    ascending creation order; replaying the list in reverse visits nodes in
    reverse topological order.
    """

    def __init__(self, root):
        seen = set()
        ops = []
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node._grad_fn is not None:
                ops.append(node)
                stack.extend(node._parents)
        ops.sort(key=lambda t: t._seq)
        self.operations = ops

    def replay(self):
        for node in reversed(self.operations):
            node._grad_fn(node.grad)


def backward(loss):
    """Function form of Tensor.backward for a scalar loss."""
    loss.backward()


# -- construction helpers ----------------------------------------------------


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _record(data, parents, grad_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = np.zeros_like(out.data)
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcasted gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic --------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def grad_fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    return _record(out_data, (a, b), grad_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def grad_fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    return _record(out_data, (a, b), grad_fn)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def grad_fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.data.shape)

    return _record(out_data, (a, b), grad_fn)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data

    def grad_fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g / b.data, a.data.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g * a.data / (b.data * b.data), b.data.shape)

    return _record(out_data, (a, b), grad_fn)


def neg(a):
    def grad_fn(g):
        if a.requires_grad:
            a.grad -= g

    return _record(-a.data, (a,), grad_fn)


def exp(a):
    out_data = np.exp(a.data)

    def grad_fn(g):
        if a.requires_grad:
            a.grad += g * out_data

    return _record(out_data, (a,), grad_fn)


def log(a):
    def grad_fn(g):
        if a.requires_grad:
            a.grad += g / a.data

    return _record(np.log(a.data), (a,), grad_fn)


def sqrt(a):
    out_data = np.sqrt(a.data)

    def grad_fn(g):
        if a.requires_grad:
            a.grad += g / (2.0 * out_data)

    return _record(out_data, (a,), grad_fn)


def power(a, exponent):
    exponent = float(exponent)
    out_data = a.data ** exponent

    def grad_fn(g):
        if a.requires_grad:
            a.grad += g * exponent * a.data ** (exponent - 1.0)

    return _record(out_data, (a,), grad_fn)


def relu(a):
    mask = a.data > 0.0

    def grad_fn(g):
        if a.requires_grad:
            a.grad += g * mask

    return _record(np.where(mask, a.data, 0.0), (a,), grad_fn)


def sigmoid(a):
    """Logistic function, computed without overflow for large |x|."""
    x = a.data
    e = np.exp(-np.abs(x))
    out_data = np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))

    def grad_fn(g):
        if a.requires_grad:
            a.grad += g * out_data * (1.0 - out_data)

    return _record(out_data, (a,), grad_fn)


# -- shape manipulation ------------------------------------------------------


def reshape(a, shape):
    old_shape = a.data.shape

    def grad_fn(g):
        if a.requires_grad:
            a.grad += g.reshape(old_shape)

    return _record(a.data.reshape(shape), (a,), grad_fn)


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = tuple(np.argsort(axes))

    def grad_fn(g):
        if a.requires_grad:
            a.grad += g.transpose(inverse)

    return _record(np.ascontiguousarray(a.data.transpose(axes)), (a,), grad_fn)


def concat(parts, axis=0):
    parts = [_as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.concatenate(([0], np.cumsum(sizes)))

    def grad_fn(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if part.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(int(lo), int(hi))
                part.grad += g[tuple(index)]

    return _record(out_data, tuple(parts), grad_fn)


def getitem(a, key):
    """Basic (slice / integer) indexing; fancy indexing is not supported."""
    out_data = a.data[key]

    def grad_fn(g):
        if a.requires_grad:
            a.grad[key] += g

    return _record(np.ascontiguousarray(out_data), (a,), grad_fn)


# -- reductions --------------------------------------------------------------


def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    axes = _normalize_axis(axis, a.data.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def grad_fn(g):
        if a.requires_grad:
            expanded = g
            if not keepdims:
                for ax in sorted(axes):
                    expanded = np.expand_dims(expanded, ax)
            a.grad += np.broadcast_to(expanded, a.data.shape)

    return _record(out_data, (a,), grad_fn)


def tmean(a, axis=None, keepdims=False):
    axes = _normalize_axis(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b):
    """Matrix product of 2-D tensors, or stacks with identical leading dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs 2-D or stacked operands, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2] or a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def grad_fn(g):
        if a.requires_grad:
            a.grad += np.matmul(g, b.data.swapaxes(-1, -2))
        if b.requires_grad:
            b.grad += np.matmul(a.data.swapaxes(-1, -2), g)

    return _record(out_data, (a, b), grad_fn)


# -- neural primitives -------------------------------------------------------


def softmax(x, axis=-1, temperature=1.0):
    """exp((x - max)/T) normalized along ``axis``; T controls sharpness."""
    if temperature <= 0.0:
        raise ParameterError(f"softmax temperature must be positive, got {temperature}")
    z = (x.data - x.data.max(axis=axis, keepdims=True)) / temperature
    e = np.exp(z)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        if x.requires_grad:
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            x.grad += out_data * (g - inner) / temperature

    return _record(out_data, (x,), grad_fn)


_CONV_INDEX_CACHE = {}


def _conv_geometry(in_shape, kernel_shape, stride, padding):
    c_in, h, w = in_shape
    c_out, kc, kh, kw = kernel_shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ParameterError(f"conv2d kernel sides must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ParameterError(f"conv2d stride must be >= 1, got {stride}")
    if kc != c_in:
        raise ShapeError(f"conv2d channel mismatch: input {in_shape} vs kernel {kernel_shape}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d output would be {oh}x{ow} for input {in_shape}, kernel {kernel_shape}, "
            f"stride {stride}, padding {padding}"
        )
    return oh, ow


def _conv_scatter_indices(padded_shape, kh, kw, stride, oh, ow):
    """Flat padded-input index for every im2col entry, cached per geometry."""
    key = (padded_shape, kh, kw, stride, oh, ow)
    cached = _CONV_INDEX_CACHE.get(key)
    if cached is None:
        arange = np.arange(int(np.prod(padded_shape)), dtype=np.int64).reshape(padded_shape)
        windows = np.lib.stride_tricks.sliding_window_view(arange, (kh, kw), axis=(1, 2))
        windows = windows[:, ::stride, ::stride]
        cached = np.ascontiguousarray(
            windows.transpose(0, 3, 4, 1, 2).reshape(-1)
        )
        _CONV_INDEX_CACHE[key] = cached
    return cached


def conv2d(x, kernel, stride=1, padding=0):
    """2-D cross-correlation with zero padding.

    ``x`` is (c_in, h, w); ``kernel`` is (c_out, c_in, kh, kw) with odd sides.
    """
    oh, ow = _conv_geometry(x.data.shape, kernel.data.shape, stride, padding)
    c_in, h, w = x.data.shape
    c_out, _, kh, kw = kernel.data.shape

    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    cols = np.ascontiguousarray(windows.transpose(0, 3, 4, 1, 2)).reshape(
        c_in * kh * kw, oh * ow
    )
    kernel_mat = kernel.data.reshape(c_out, c_in * kh * kw)
    out_data = (kernel_mat @ cols).reshape(c_out, oh, ow)

    def grad_fn(g):
        g_mat = g.reshape(c_out, oh * ow)
        if kernel.requires_grad:
            kernel.grad += (g_mat @ cols.T).reshape(kernel.data.shape)
        if x.requires_grad:
            d_cols = kernel_mat.T @ g_mat
            idx = _conv_scatter_indices(padded.shape, kh, kw, stride, oh, ow)
            d_padded = np.bincount(
                idx, weights=d_cols.reshape(-1), minlength=padded.size
            ).reshape(padded.shape)
            if padding:
                x.grad += d_padded[:, padding:padding + h, padding:padding + w]
            else:
                x.grad += d_padded

    return _record(out_data, (x, kernel), grad_fn)


def upsample_nearest2(x):
    """Double both spatial dims of a (c, h, w) tensor by pixel repetition."""
    c, h, w = x.data.shape
    out_data = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def grad_fn(g):
        if x.requires_grad:
            x.grad += g.reshape(c, h, 2, w, 2).sum(axis=(2, 4))

    return _record(out_data, (x,), grad_fn)


def kl_divergence(p, q, axis=0):
    """Mean KL(p || q) over all positions orthogonal to ``axis``.

    ``p`` is the target and contributes no gradient; only ``q`` is
    differentiated. Both inputs must be nonnegative and sum to 1 along
    ``axis`` to within 1e-6. Logs are floored at LOG_EPS.
    """
    p_data = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
    q = _as_tensor(q)
    if p_data.shape != q.data.shape:
        raise ShapeError(f"kl_divergence shape mismatch: {p_data.shape} vs {q.data.shape}")
    for name, arr in (("p", p_data), ("q", q.data)):
        if arr.min() < -1e-9:
            raise DistributionError(f"kl_divergence: {name} has negative entries")
        sums = arr.sum(axis=axis)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise DistributionError(
                f"kl_divergence: {name} does not sum to 1 along axis {axis} "
                f"(max deviation {np.abs(sums - 1.0).max():.3e})"
            )
    positions = p_data.size // p_data.shape[axis]
    p_floor = np.maximum(p_data, LOG_EPS)
    q_floor = np.maximum(q.data, LOG_EPS)
    out_data = float((p_data * (np.log(p_floor) - np.log(q_floor))).sum()) / positions

    def grad_fn(g):
        if q.requires_grad:
            live = q.data > LOG_EPS
            q.grad += g * (-(p_data / q_floor) * live) / positions

    return _record(np.float64(out_data), (q,), grad_fn)


# -- operator wiring ---------------------------------------------------------


def _install_operators():
    Tensor.__add__ = lambda self, other: add(self, other)
    Tensor.__radd__ = lambda self, other: add(other, self)
    Tensor.__sub__ = lambda self, other: sub(self, other)
    Tensor.__rsub__ = lambda self, other: sub(other, self)
    Tensor.__mul__ = lambda self, other: mul(self, other)
    Tensor.__rmul__ = lambda self, other: mul(other, self)
    Tensor.__truediv__ = lambda self, other: div(self, other)
    Tensor.__rtruediv__ = lambda self, other: div(other, self)
    Tensor.__neg__ = neg
    Tensor.__pow__ = power
    Tensor.__matmul__ = matmul
    Tensor.__getitem__ = getitem
    Tensor.sum = tsum
    Tensor.mean = tmean
    Tensor.reshape = lambda self, *shape: reshape(
        self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape
    )
    Tensor.transpose = transpose
    Tensor.exp = exp
    Tensor.log = log
    Tensor.sqrt = sqrt
    Tensor.relu = relu
    Tensor.sigmoid = sigmoid


_install_operators()
