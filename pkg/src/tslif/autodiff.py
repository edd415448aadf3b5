"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Nodes hold a value, references to their parents and one vector-Jacobian
product callback per parent; the linked nodes form the tape, and
:func:`backward` recovers a reverse topological order by depth-first
traversal. Leaves are created with :func:`leaf` (gradients wanted) or
:func:`constant` (treated as data).

The only non-standard primitive is :func:`spike`: its forward value is the
exact unit step H(x) with H(0) = 1, while its backward rule substitutes a
smooth surrogate derivative (sigmoid-derivative or triangular) so that
threshold crossings remain trainable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError

Array = np.ndarray


def _as_value(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def _stable_sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Node:
    """One tape entry: value, parents and the local backward rules."""

    __slots__ = ("value", "parents", "vjps", "grad", "requires_grad", "name")

    def __init__(
        self,
        value,
        parents: tuple["Node", ...] = (),
        vjps: tuple[Callable[[Array], Array], ...] = (),
        requires_grad: bool = False,
        name: str | None = None,
    ):
        self.value = _as_value(value)
        self.parents = parents
        self.vjps = vjps
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        tag = self.name or ("leaf" if self.requires_grad else "node")
        return f"Node({tag}, shape={self.shape})"


def leaf(value, name: str | None = None) -> Node:
    """A learnable tape leaf."""
    return Node(value, requires_grad=True, name=name)


def constant(value, name: str | None = None) -> Node:
    """Data entering the graph; no gradient is accumulated for it."""
    return Node(value, name=name)


def _coerce(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _broadcast_shape(op: str, a: Array, b: Array) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{op}: shapes {a.shape} and {b.shape} are incompatible") from None


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _elementwise(op: str, a: Node, b: Node, fn: Callable[[Array, Array], Array],
                 da: Callable[[Array], Array], db: Callable[[Array], Array]) -> Node:
    _broadcast_shape(op, a.value, b.value)
    return Node(
        fn(a.value, b.value),
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(da(g), a.shape),
            lambda g: _unbroadcast(db(g), b.shape),
        ),
    )


def add(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    return _elementwise("add", a, b, np.add, lambda g: g, lambda g: g)


def sub(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    return _elementwise("sub", a, b, np.subtract, lambda g: g, lambda g: -g)


def mul(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    return _elementwise(
        "mul", a, b, np.multiply,
        lambda g: g * b.value, lambda g: g * a.value,
    )


def scale(a, k: float) -> Node:
    """Multiply by a plain (non-differentiated) scalar."""
    a = _coerce(a)
    k = float(k)
    return Node(a.value * k, parents=(a,), vjps=(lambda g: g * k,))


def neg(a) -> Node:
    return scale(a, -1.0)


def matmul(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ContractError(f"matmul: shapes {a.value.shape} and {b.value.shape} are incompatible")
    return Node(
        a.value @ b.value,
        parents=(a, b),
        vjps=(lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


def sigmoid(a) -> Node:
    a = _coerce(a)
    out = _stable_sigmoid(a.value)
    return Node(out, parents=(a,), vjps=(lambda g: g * out * (1.0 - out),))


def tanh(a) -> Node:
    a = _coerce(a)
    out = np.tanh(a.value)
    return Node(out, parents=(a,), vjps=(lambda g: g * (1.0 - out * out),))


def relu(a) -> Node:
    a = _coerce(a)
    mask = (a.value > 0.0).astype(np.float64)
    return Node(a.value * mask, parents=(a,), vjps=(lambda g: g * mask,))


def softplus(a) -> Node:
    """log(1 + e^x), computed stably; derivative is the logistic function."""
    a = _coerce(a)
    x = a.value
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = 1.0 / (1.0 + np.exp(-x))
    return Node(out, parents=(a,), vjps=(lambda g: g * sig,))


def node_sum(a) -> Node:
    a = _coerce(a)
    return Node(
        np.asarray(a.value.sum()),
        parents=(a,),
        vjps=(lambda g: np.broadcast_to(g, a.shape).copy(),),
    )


def node_mean(a) -> Node:
    a = _coerce(a)
    n = a.value.size
    return Node(
        np.asarray(a.value.mean()),
        parents=(a,),
        vjps=(lambda g: np.broadcast_to(g / n, a.shape).copy(),),
    )


def mse(pred, target) -> Node:
    """Mean squared error over all elements; target is treated as data."""
    pred = _coerce(pred)
    target_value = target.value if isinstance(target, Node) else _as_value(target)
    if pred.value.shape != target_value.shape:
        raise ContractError(
            f"mse: shapes {pred.value.shape} and {target_value.shape} are incompatible"
        )
    diff = pred.value - target_value
    n = diff.size
    return Node(
        np.asarray((diff * diff).mean()),
        parents=(pred,),
        vjps=(lambda g: g * (2.0 / n) * diff,),
    )


@dataclass(frozen=True)
class SurrogateSpec:
    """Backward-pass stand-in for the unit step.

    * ``sigmoid-derivative``: k * sig(k x) * (1 - sig(k x)) with k = 1/width
      (peak derivative k/4, so width 0.25 peaks at 1).
    * ``triangular``: max(0, 1 - |x|/width) / width (peak 1/width at x = 0).
    """

    kind: str = "sigmoid-derivative"
    width: float = 0.25

    def __post_init__(self) -> None:
        if self.kind not in ("sigmoid-derivative", "triangular"):
            raise ContractError(f"unknown surrogate kind {self.kind!r}")
        if not self.width > 0.0:
            raise ContractError(f"surrogate width must be positive, got {self.width}")

    def derivative(self, x: Array) -> Array:
        x = _as_value(x)
        if self.kind == "sigmoid-derivative":
            k = 1.0 / self.width
            s = _stable_sigmoid(k * x)
            return k * s * (1.0 - s)
        return np.maximum(0.0, 1.0 - np.abs(x) / self.width) / self.width


DEFAULT_SURROGATE = SurrogateSpec()


def spike(v_minus_th, spec: SurrogateSpec = DEFAULT_SURROGATE) -> Node:
    """Exact unit step forward (H(0) = 1); surrogate derivative backward."""
    a = _coerce(v_minus_th)
    out = (a.value >= 0.0).astype(np.float64)
    local = spec.derivative(a.value)
    return Node(out, parents=(a,), vjps=(lambda g: g * local,))


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node, params: Iterable[Node] | None = None) -> dict[Node, Array]:
    """Accumulate d(loss)/d(node) for every node reachable from ``loss``.

    ``loss`` must be scalar. Gradients are (re)initialised on each call, so
    repeated invocations on the same tape are idempotent. Returns a map for
    ``params`` (leaves not appearing in the graph get zero gradients).
    """
    if loss.value.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        g = node.grad
        for parent, vjp in zip(node.parents, node.vjps):
            out = vjp(g)
            if out.shape != parent.value.shape:
                raise ContractError(
                    f"backward: gradient shape {out.shape} != value shape "
                    f"{parent.value.shape} for {parent!r}"
                )
            parent.grad = parent.grad + out
    result: dict[Node, Array] = {}
    if params is not None:
        in_graph = {id(n) for n in order}
        for p in params:
            if id(p) not in in_graph or p.grad is None:
                p.grad = np.zeros_like(p.value)
            result[p] = p.grad
    return result


class Sgd:
    """Plain gradient step over a set of leaves."""

    def __init__(self, params: Sequence[Node], lr: float = 1e-3):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.value -= self.lr * p.grad


class Adam:
    """Adaptive-moment gradient step with the usual fixed defaults."""

    def __init__(
        self,
        params: Sequence[Node],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self._m[i] = b1 * self._m[i] + (1.0 - b1) * p.grad
            self._v[i] = b2 * self._v[i] + (1.0 - b2) * (p.grad * p.grad)
            m_hat = self._m[i] / (1.0 - b1 ** self.t)
            v_hat = self._v[i] / (1.0 - b2 ** self.t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def logit(p: float) -> float:
    """Inverse of the logistic squash, for initialising constrained leaves."""
    if not 0.0 < p < 1.0:
        raise ContractError(f"logit domain is (0, 1), got {p}")
    return math.log(p / (1.0 - p))


def softplus_inverse(y: float) -> float:
    """Raw value whose softplus equals y > 0."""
    if not y > 0.0:
        raise ContractError(f"softplus_inverse domain is (0, inf), got {y}")
    return y + math.log(-math.expm1(-y))


__all__ = [
    "Array", "Node", "leaf", "constant",
    "add", "sub", "mul", "neg", "scale", "matmul",
    "sigmoid", "tanh", "relu", "softplus",
    "node_sum", "node_mean", "mse",
    "SurrogateSpec", "DEFAULT_SURROGATE", "spike",
    "backward", "Sgd", "Adam", "logit", "softplus_inverse",
]
