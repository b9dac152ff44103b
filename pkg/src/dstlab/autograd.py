"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors form a tape as ops execute; ``backward`` walks it once in reverse
topological order. Ops are deliberately coarse (fused layer norm, fused
losses) so graphs stay small and the hot math lives in :mod:`.kernels`.
Gradients accumulate on leaf tensors created with ``requires_grad=True``;
leaves never reached from the loss keep a zero gradient.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_grad_shared")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self._grad_shared = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, grad):
        # A backward function may hand the same array (or views of it) to
        # several consumers, so never mutate the first stored gradient in
        # place; replace it with a fresh sum instead.
        if self.grad is None:
            self.grad = grad
            self._grad_shared = True
        elif self._grad_shared:
            self.grad = self.grad + grad
            self._grad_shared = False
        else:
            self.grad += grad

    def zero_grad(self):
        self.grad = None
        self._grad_shared = False


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar tensor through the recorded tape."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            if parent.requires_grad or parent._backward is not None:
                parent._accumulate(g)


def gradients(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Backward pass returning one gradient per named parameter (zeros when unreachable)."""
    for p in params.values():
        p.zero_grad()
    backward(loss)
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(dout):
        return _unbroadcast(dout, a.data.shape), _unbroadcast(dout, b.data.shape)
    return Tensor(a.data + b.data, parents=(a, b), backward=bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(dout):
        return _unbroadcast(dout * b.data, a.data.shape), _unbroadcast(dout * a.data, b.data.shape)
    return Tensor(a.data * b.data, parents=(a, b), backward=bwd)


def scale(a: Tensor, factor: float) -> Tensor:
    def bwd(dout):
        return (dout * factor,)
    return Tensor(a.data * factor, parents=(a,), backward=bwd)


def add_const(a: Tensor, const: np.ndarray) -> Tensor:
    def bwd(dout):
        return (dout,)
    return Tensor(a.data + const, parents=(a,), backward=bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(dout):
        da = dout @ b.data.swapaxes(-1, -2)
        db = a.data.swapaxes(-1, -2) @ dout
        return _unbroadcast(da, a.data.shape), _unbroadcast(db, b.data.shape)
    return Tensor(a.data @ b.data, parents=(a, b), backward=bwd)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def bwd(dout):
        return (np.ascontiguousarray(dout.transpose(inverse)),)
    return Tensor(np.ascontiguousarray(a.data.transpose(axes)), parents=(a,), backward=bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bwd(dout):
        return (dout.reshape(a.data.shape),)
    return Tensor(a.data.reshape(shape), parents=(a,), backward=bwd)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    def bwd(dout):
        dw = np.zeros_like(weight.data)
        kernels.embedding_grad(ids.reshape(-1), dout.reshape(-1, dout.shape[-1]), dw)
        return (dw,)
    return Tensor(weight.data[ids], parents=(weight,), backward=bwd)


def gather_rows(a: Tensor, batch_idx: np.ndarray, time_idx: np.ndarray) -> Tensor:
    """Select rows (batch_idx[i], time_idx[i], :) from a (B, T, d) tensor."""
    def bwd(dout):
        da = np.zeros_like(a.data)
        np.add.at(da, (batch_idx, time_idx), dout)
        return (da,)
    return Tensor(a.data[batch_idx, time_idx], parents=(a,), backward=bwd)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    y, mean, rstd = kernels.layernorm_forward(x.data, gamma.data, beta.data, eps)

    def bwd(dout):
        return kernels.layernorm_backward(dout, x.data, gamma.data, mean, rstd)
    return Tensor(y, parents=(x, gamma, beta), backward=bwd)


def gelu(x: Tensor) -> Tensor:
    def bwd(dout):
        return (kernels.gelu_backward(dout, x.data),)
    return Tensor(kernels.gelu_forward(x.data), parents=(x,), backward=bwd)


def softmax_last(x: Tensor) -> Tensor:
    y = kernels.softmax_last(x.data)

    def bwd(dout):
        return (kernels.softmax_last_backward(dout, y),)
    return Tensor(y, parents=(x,), backward=bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if rate <= 0.0:
        return x
    draw_dtype = np.float32 if x.data.dtype == np.float32 else np.float64
    mask = (rng.random(x.data.shape, dtype=draw_dtype) >= rate).astype(x.data.dtype) / (1.0 - rate)

    def bwd(dout):
        return (dout * mask,)
    return Tensor(x.data * mask, parents=(x,), backward=bwd)


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted token negative log likelihood; ``weights`` already encode the
    per-example and batch averaging."""
    loss, probs = kernels.cross_entropy_forward(logits.data, targets, weights)

    def bwd(dout):
        return (kernels.cross_entropy_backward(probs, targets, weights, float(dout)),)
    return Tensor(np.float64(loss), parents=(logits,), backward=bwd)


def bce_with_logits(logits: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    loss = kernels.bce_forward(logits.data, labels, weights)

    def bwd(dout):
        return (kernels.bce_backward(logits.data, labels, weights, float(dout)),)
    return Tensor(np.float64(loss), parents=(logits,), backward=bwd)


def total_sum(x: Tensor) -> Tensor:
    def bwd(dout):
        return (np.full_like(x.data, float(dout)),)
    return Tensor(np.float64(x.data.sum()), parents=(x,), backward=bwd)
