"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure pushing the output adjoint back to them. :func:`backward` orders the
graph topologically (the tape) and replays the closures in reverse.

Operations broadcast like numpy, so the same code handles a single window
``(P, d_model)`` and a minibatch ``(B, P, d_model)``.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping

import numpy as np

DTYPE = np.float64
LAYER_NORM_EPS = 1e-5


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class Tensor:
    """An immutable float64 array plus the bookkeeping needed for backprop.

    ``data`` is never modified in place after construction. ``grad`` is filled
    by :func:`backward` for every node reachable from the loss.
    """

    __slots__ = ("data", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, name: str | None = None, _parents: tuple = (), _op: str = ""):
        arr = np.array(data, dtype=DTYPE)
        arr.flags.writeable = False
        self.data = arr
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, op={self._op or 'leaf'!r})"

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a constant")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], op: str,
          backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data, _parents=parents, _op=op)
    out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from None

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), "add", back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}") from None

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(data, (a, b), "sub", back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from None

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), "mul", back)


def square(x) -> Tensor:
    x = as_tensor(x)

    def back(g):
        _accumulate(x, 2.0 * x.data * g)

    return _node(x.data * x.data, (x,), "square", back)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def back(g):
        _accumulate(x, g * mask)

    return _node(np.where(mask, x.data, 0.0), (x,), "relu", back)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    u = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    th = np.tanh(u)

    def back(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        local = 0.5 * (1.0 + th) + 0.5 * x.data * (1.0 - th * th) * du
        _accumulate(x, g * local)

    return _node(0.5 * x.data * (1.0 + th), (x,), "gelu", back)


# ---------------------------------------------------------------- reductions

def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _node(data, (x,), "sum", back)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    data = x.data.mean(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape) / n)

    return _node(data, (x,), "mean", back)


# ---------------------------------------------------------------- shape ops

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {tuple(shape)}") from None

    def back(g):
        _accumulate(x, g.reshape(x.shape))

    return _node(data, (x,), "reshape", back)


def transpose(x, axes=None) -> Tensor:
    """Permute axes; by default swap the last two."""
    x = as_tensor(x)
    if axes is None:
        axes = list(range(x.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def back(g):
        _accumulate(x, g.transpose(inv))

    return _node(x.data.transpose(axes), (x,), "transpose", back)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product, batched over leading axes like ``numpy.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul shapes {a.shape} and {b.shape}: inner dims {a.shape[-1]} vs {b.shape[-2]}"
        )
    try:
        data = a.data @ b.data
    except ValueError:
        raise DimensionError(f"matmul cannot broadcast shapes {a.shape} and {b.shape}") from None

    def back(g):
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(data, (a, b), "matmul", back)


def softmax_rows(m) -> Tensor:
    """Softmax over the last axis, shifted by the row maximum."""
    m = as_tensor(m)
    shifted = m.data - m.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        _accumulate(m, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _node(s, (m,), "softmax", back)


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: last dim {d} vs gamma {gamma.shape} and beta {beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        _accumulate(gamma, _unbroadcast(g * xhat, gamma.shape))
        _accumulate(beta, _unbroadcast(g, beta.shape))
        gx = g * gamma.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        _accumulate(x, dx)

    return _node(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm", back)


# ---------------------------------------------------------------- backprop

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, each after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Backpropagate from a scalar ``loss``.

    Fills ``.grad`` on every node of the graph and returns a map from parameter
    name to gradient. Parameters are the named leaves, or ``params`` if given;
    a parameter the loss does not depend on gets a zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = topological_order(loss)
    for node in tape:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    if params is None:
        params = {n.name: n for n in tape if n.name is not None and not n._parents}
    return {
        k: (np.array(t.grad) if t.grad is not None else np.zeros_like(t.data))
        for k, t in params.items()
    }


# ---------------------------------------------------------------- verification

def leaves(arrays: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, name=k) for k, v in arrays.items()}


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(model_fn: Callable[[Mapping[str, Tensor]], Tensor],
               params: Mapping[str, np.ndarray],
               probe_count: int,
               step: float = 1e-5,
               seed: int = 0,
               floor: float = 1e-8) -> float:
    """Worst relative error between tape gradients and central differences.

    ``model_fn`` maps named leaf tensors to a scalar loss. ``probe_count``
    entries are drawn uniformly over all parameter entries. Denominators below
    ``floor`` are clamped so vanishing gradients compare absolutely.
    """
    if probe_count < 1:
        raise ContractError("probe_count must be ≥ 1")
    base = {k: np.array(v, dtype=DTYPE) for k, v in params.items()}
    grads = backward(model_fn(leaves(base)), None)

    names = list(base)
    sizes = np.array([base[k].size for k in names])
    rng = np.random.default_rng(seed)
    flat = rng.integers(0, sizes.sum(), size=probe_count)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for f in flat:
        which = int(np.searchsorted(offsets, f, side="right") - 1)
        name, idx = names[which], int(f - offsets[which])
        values = []
        for delta in (step, -step):
            probe = dict(base)
            arr = base[name].copy()
            arr.flat[idx] += delta
            probe[name] = arr
            values.append(model_fn(leaves(probe)).item())
        numeric = (values[0] - values[1]) / (2 * step)
        analytic = float(grads[name].flat[idx]) if name in grads else 0.0
        worst = max(worst, relative_error(analytic, numeric, floor))
    return worst


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    x = np.array(x, dtype=DTYPE)
    out = np.zeros_like(x)
    for i in range(x.size):
        hi, lo = x.copy(), x.copy()
        hi.flat[i] += step
        lo.flat[i] -= step
        out.flat[i] = (fn(hi) - fn(lo)) / (2 * step)
    return out


__all__: Iterable[str] = [
    "Tensor", "DimensionError", "ContractError", "as_tensor", "add", "sub", "mul",
    "square", "relu", "gelu", "sum_", "mean", "reshape", "transpose", "matmul",
    "softmax_rows", "layer_norm", "backward", "topological_order", "leaves",
    "grad_check", "numeric_gradient", "relative_error", "LAYER_NORM_EPS",
]
