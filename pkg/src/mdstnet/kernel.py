"""Dense-array numerics with reverse-mode differentiation and Adam.

Values live in numpy arrays; every differentiable operation records its
parents and a backward closure on the output :class:`Tensor`.  Calling
:meth:`Tensor.backward` walks that tape in reverse topological order.

Training runs in float32; switch to float64 with :func:`precision` for
gradient verification.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, NumericError

_DTYPE = np.float32
_GRAD_ENABLED = True

LN_EPS = 1e-5


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors and parameters."""
    global _DTYPE
    old = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = old


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    """A numpy array plus an optional gradient and a tape link."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward() without a seed gradient needs a scalar, got {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self.grad = np.asarray(grad, dtype=self.dtype)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            # free intermediate buffers; leaves keep theirs
            if node._parents:
                node.grad = None

    # operator sugar
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
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    """A trainable leaf in the current default dtype."""
    return Tensor(np.array(data, dtype=_DTYPE), requires_grad=True)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _result(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    live = tuple(p for p in parents if p.requires_grad)
    out.requires_grad = _GRAD_ENABLED and bool(live)
    if out.requires_grad:
        out._parents = live
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(out_data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        s = b

        def backward_scalar(g):
            _accumulate(a, g * s)

        return _result(a.data * s, (a,), backward_scalar)
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def square(a):
    def backward(g):
        _accumulate(a, 2.0 * a.data * g)

    return _result(a.data * a.data, (a,), backward)


def abs_(a):
    def backward(g):
        _accumulate(a, np.sign(a.data) * g)

    return _result(np.abs(a.data), (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """Tanh-approximated GELU."""
    d = x.data
    d2 = d * d
    th = np.tanh(_GELU_C * d * (1.0 + 0.044715 * d2))
    out = 0.5 * d * (1.0 + th)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * d2)
        local = 0.5 * (1.0 + th) + 0.5 * d * (1.0 - th * th) * dinner
        _accumulate(x, g * local)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------------------
# shape


def reshape(a, shape):
    src = a.shape

    def backward(g):
        _accumulate(a, g.reshape(src))

    return _result(a.data.reshape(shape), (a,), backward)


def transpose(a, axes=None):
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _result(a.data.transpose(axes), (a,), backward)


def getitem(a, index):
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        _accumulate(a, full)

    return _result(a.data[index], (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def sum_(a, axis=None, keepdims=False):
    src = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, src).copy())

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Batched matrix product ``a @ b`` over the last two axes.

    Raises :class:`DimensionError` when inner extents differ.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with the weight shared over all leading axes."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input width {x.shape[-1]} does not match weight {weight.shape}"
        )
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            _accumulate(x, (g2 @ weight.data.T).reshape(x.shape))
        if weight.requires_grad:
            _accumulate(weight, x2.T @ g2)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


def softmax(x, axis=-1):
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    if np.isnan(x.data).any():
        raise NumericError("softmax: NaN in input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accumulate(x, p * (g - (g * p).sum(axis=axis, keepdims=True)))

    return _result(p, (x,), backward)


def softmax_rows(m):
    """Row-wise softmax of a matrix; every output row sums to one."""
    return softmax(as_tensor(m), axis=-1)


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Normalise the last axis to zero mean / unit variance, then affine."""
    x = as_tensor(x)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(
            f"layer_norm: last extent {width} vs gain {gain.shape} / bias {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centred * rstd
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, width).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, width).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            dx = rstd * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            _accumulate(x, dx)

    return _result(out, (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# MLP


def init_linear(rng, d_in, d_out, bias=True):
    """Xavier-uniform weight, zero bias."""
    limit = math.sqrt(6.0 / (d_in + d_out))
    w = parameter(rng.uniform(-limit, limit, size=(d_in, d_out)))
    b = parameter(np.zeros(d_out)) if bias else None
    return w, b


def init_mlp(rng, widths):
    """Layers for ``widths = [d_in, hidden..., d_out]`` as a list of (W, b)."""
    return [init_linear(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]


def mlp_forward(x, layers):
    """Affine layers with GELU between them (none after the last)."""
    if not layers:
        raise DimensionError("mlp_forward: at least one affine layer is required")
    h = x
    for i, (w, b) in enumerate(layers):
        if i:
            h = gelu(h)
        h = linear(h, w, b)
    return h


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on ``params[i].data``.

    Every gradient is checked before anything is touched, so a non-finite
    gradient leaves parameters and state unchanged.
    """
    if len(params) != len(grads):
        raise DimensionError(f"adam_step: {len(params)} params but {len(grads)} grads")
    grads = [np.zeros_like(p.data) if g is None else g for p, g in zip(params, grads)]
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: grad {g.shape} for param {p.shape}")
        if not np.isfinite(g).all():
            raise NumericError("adam_step: non-finite gradient, step aborted")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params, state


class Adam:
    """Stateful wrapper around :func:`adam_step` for a fixed parameter list."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)


# ---------------------------------------------------------------------------
# verification


def grad_check(f, params, eps=1e-6):
    """Max relative error between tape gradients and central differences.

    ``f`` maps nothing to a scalar :class:`Tensor` built from ``params``
    (a Tensor or list of Tensors, float64 expected).  The error per
    coordinate is ``|a - c| / (|a| + |c| + 1e-12)``; a non-finite value
    anywhere is reported as ``inf``.
    """
    if isinstance(params, Tensor):
        params = [params]
    for p in params:
        p.grad = None
        p.requires_grad = True
    out = f()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            a_flat = a.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + eps
                hi = float(f().data)
                flat[i] = keep - eps
                lo = float(f().data)
                flat[i] = keep
                cd = (hi - lo) / (2 * eps)
                an = float(a_flat[i])
                if not (math.isfinite(cd) and math.isfinite(an)):
                    return math.inf
                err = abs(an - cd) / (abs(an) + abs(cd) + 1e-12)
                worst = max(worst, err)
    return worst
