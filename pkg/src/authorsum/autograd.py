"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every op builds its output eagerly and records its parents plus a closure
mapping the output gradient to parent gradients. :func:`backward` walks the
recorded graph in reverse topological order. Only leaf tensors with
``requires_grad`` keep a ``.grad``; intermediate gradients live for the
duration of one sweep, so calling backward twice accumulates exactly twice.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
_DTYPE = np.float64


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def extended_precision():
    """Evaluate new tensors in ``np.longdouble``; used for finite-difference oracles."""
    global _DTYPE
    prev, _DTYPE = _DTYPE, np.longdouble
    try:
        yield
    finally:
        _DTYPE = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.backward_fn is None

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)

    def sum(self):
        return tsum(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, each after all of its inputs."""
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------- primitives

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw)


def matmul(a, b) -> Tensor:
    """Matrix product, batched over leading axes with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} and {b.shape}")
    if b.data.ndim == 2 and a.data.ndim > 2:
        # [..., k] @ [k, n] as one GEMM over the flattened leading axes
        k = a.shape[-1]
        a2 = a.data.reshape(-1, k)

        def bw2(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _result((a2 @ b.data).reshape(a.shape[:-1] + (b.shape[1],)), (a, b), bw2)

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.data @ b.data, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _result(x.data * mask, (x,), bw)


def tsum(x: Tensor) -> Tensor:
    def bw(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(x.data.sum()), (x,), bw)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def bw(g):
        return (np.full(x.shape, float(g) / n),)

    return _result(np.asarray(x.data.mean()), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    def bw(g):
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), (x,), bw)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inverse),)

    return _result(x.data.transpose(axes), (x,), bw)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv_std
    n = x.shape[-1]

    def bw(g):
        dxhat = g * gamma.data
        dx = inv_std / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), bw)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; the gradient is scatter-added back per row."""
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (out,)

    return _result(table.data[ids], (table,), bw)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def bw(g):
        return (g * keep,)

    return _result(x.data * keep, (x,), bw)


def cross_entropy(logits: Tensor, targets, ignore_index: int = 0) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over non-ignored positions."""
    targets = np.asarray(targets, dtype=np.int64)
    vsize = logits.shape[-1]
    flat = logits.data.reshape(-1, vsize)
    tflat = targets.reshape(-1)
    if flat.shape[0] != tflat.shape[0]:
        raise ValueError(f"logits {logits.shape} and targets {targets.shape} disagree")
    mask = tflat != ignore_index
    count = int(mask.sum())
    if count == 0:
        raise ValueError("no target tokens")
    if np.any(tflat[mask] >= vsize) or np.any(tflat[mask] < 0):
        raise ValueError("target id out of range")
    safe_t = np.where(mask, tflat, 0)
    z = flat - flat.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    nll = lse - z[np.arange(len(tflat)), safe_t]
    loss = (nll * mask).sum() / count

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(len(tflat)), safe_t] -= 1.0
        p *= (mask / count)[:, None] * float(g)
        return (p.reshape(logits.shape),)

    return _result(np.asarray(loss), (logits,), bw)


# ---------------------------------------------------------------- optimizer

class Adam:
    """Adam with bias correction. ``step`` zeroes gradients afterwards."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {p.name or i} has no gradient")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------- verification

def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], tolerance: float | None = None,
               h: float = 1e-6, max_checks: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central finite differences.

    Relative error per element is ``|a - n| / max(1e-8, |a| + |n|)``. With
    ``max_checks`` only that many randomly chosen elements per input are
    perturbed. Raises ``AssertionError`` if ``tolerance`` is given and exceeded.

    The analytic side runs in float64. The finite differences are evaluated
    in extended precision: at ``h = 1e-6`` a float64 loss carries roughly
    1e-10 of rounding noise per derivative, which would swamp the relative
    error of any element whose true gradient is below about 1e-5.
    """
    for x in inputs:
        x.grad = None
    backward(fn(*inputs))
    analytic = [x.grad.copy() if x.grad is not None else np.zeros_like(x.data) for x in inputs]
    for x in inputs:
        x.grad = None
    saved = [x.data for x in inputs]
    worst = 0.0
    try:
        for x in inputs:
            x.data = x.data.astype(np.longdouble)
        with no_grad(), extended_precision():
            for x, a in zip(inputs, analytic):
                flat = x.data.reshape(-1)
                idx = np.arange(flat.size)
                if max_checks is not None and flat.size > max_checks:
                    idx = (rng or np.random.default_rng(0)).choice(flat.size, max_checks, replace=False)
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + h
                    up, fp = flat[i], fn(*inputs).data.reshape(())
                    flat[i] = orig - h
                    down, fm = flat[i], fn(*inputs).data.reshape(())
                    flat[i] = orig
                    num = float((fp - fm) / (up - down))
                    an = float(a.reshape(-1)[i])
                    worst = max(worst, abs(an - num) / max(1e-8, abs(an) + abs(num)))
    finally:
        for x, d in zip(inputs, saved):
            x.data = d
    if tolerance is not None and worst > tolerance:
        raise AssertionError(f"gradient check failed: relative error {worst:.3e} > {tolerance:.1e}")
    return worst
