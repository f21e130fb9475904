"""
Minimal reverse-mode autodiff over numpy float32 arrays
"""

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ShapeError, StateError

DTYPE = np.float32


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """
    A float32 array with an optional gradient and a link to the op that produced it.

    Leaf tensors created with ``requires_grad=True`` are parameters; their
    ``grad`` is populated by ``backward``. Frozen leaves never receive a grad.
    """

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        parents: Sequence["Tensor"] = (),
    ):
        self.data = np.array(data, dtype=DTYPE, copy=True) if not isinstance(data, np.ndarray) \
            else data.astype(DTYPE, copy=False)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple["Tensor", ...] = tuple(parents)
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.tracks_grad = requires_grad or any(p.tracks_grad for p in self._parents)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        if not self.tracks_grad:
            return
        grad = grad.astype(DTYPE, copy=False)
        if grad.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}"
                + (f" for '{self.name}'" if self.name else "")
            )
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self, grad: Optional[np.ndarray] = None):
        """
        Propagate gradients from this node to every tensor that produced it.

        Args:
            grad: Seed gradient; defaults to ones (scalar losses)
        """
        if not self.tracks_grad:
            raise StateError("backward called on a tensor that does not track gradients")

        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
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
                if parent.tracks_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self._accumulate(np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=DTYPE))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior nodes release their grads once consumed
                if node._parents:
                    node.grad = None if not node.requires_grad else node.grad

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: Iterable[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data, parents=tuple(parents))
    if out.tracks_grad:
        out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(grad):
        a._accumulate(_unbroadcast(grad, a.shape))
        b._accumulate(_unbroadcast(grad, b.shape))

    return _node(a.data + b.data, (a, b), _backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(grad):
        a._accumulate(_unbroadcast(grad * b.data, a.shape))
        b._accumulate(_unbroadcast(grad * a.data, b.shape))

    return _node(a.data * b.data, (a, b), _backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def _backward(grad):
        a._accumulate(grad @ b.data.T)
        b._accumulate(a.data.T @ grad)

    return _node(a.data @ b.data, (a, b), _backward)


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 1-element tensor."""

    def _backward(grad):
        a._accumulate(np.broadcast_to(grad.reshape(()), a.shape).copy())

    return _node(np.array([a.data.sum(dtype=np.float64)], dtype=DTYPE), (a,), _backward)


def apply_mask(
    weight: Tensor,
    mask: Optional[np.ndarray],
    dense_grad_sink: Optional[Dict[str, np.ndarray]] = None,
) -> Tensor:
    """
    Effective weight ``weight * mask``.

    The stored weight keeps its value under a zero mask bit. When
    ``dense_grad_sink`` is given, the gradient w.r.t. the effective weight
    (the gradient the entry would receive if it were active) is recorded
    there under ``weight.name``.
    """
    if mask is None and dense_grad_sink is None:
        return weight
    m = np.ones(weight.shape, dtype=DTYPE) if mask is None else mask.astype(DTYPE, copy=False)
    if m.shape != weight.shape:
        raise ShapeError(f"mask shape {m.shape} does not match weight '{weight.name}' {weight.shape}")

    def _backward(grad):
        if dense_grad_sink is not None:
            key = weight.name or str(id(weight))
            dense_grad_sink[key] = dense_grad_sink.get(key, 0) + grad
        weight._accumulate(grad * m)

    return _node(weight.data * m, (weight,), _backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor]) -> Tensor:
    """``x @ weight.T + bias`` with weight laid out (out_features, in_features)."""
    if x.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"dense layer expects input (batch, {weight.shape[1]}), got {x.shape}"
        )
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def _backward(grad):
        x._accumulate(grad @ weight.data)
        weight._accumulate(grad.T @ x.data)
        if bias is not None:
            bias._accumulate(grad.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, _backward)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> Tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :][:, :, :oh, :ow]
    # (n, c, oh, ow, kh, kw) -> (n, c*kh*kw, oh*ow)
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int, oh: int, ow: int) -> np.ndarray:
    n, c, h, w = x_shape
    padded = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    if padding:
        return padded[:, :, padding:-padding, padding:-padding]
    return padded


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution via im2col + matmul; weight is (out, in, kh, kw)."""
    if x.data.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv2d expects input (batch, {weight.shape[1]}, H, W), got {x.shape}"
        )
    out_c, in_c, kh, kw = weight.shape
    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d kernel {kh}x{kw} does not fit input {x.shape[2:]}")
    w_flat = weight.data.reshape(out_c, -1)
    out = np.einsum("ok,nkp->nop", w_flat, cols, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = out.reshape(x.shape[0], out_c, oh, ow)

    def _backward(grad):
        g = grad.reshape(x.shape[0], out_c, oh * ow)
        weight._accumulate(np.einsum("nop,nkp->ok", g, cols, optimize=True).reshape(weight.shape))
        if bias is not None:
            bias._accumulate(g.sum(axis=(0, 2)))
        if x.tracks_grad:
            dcols = np.einsum("ok,nop->nkp", w_flat, g, optimize=True)
            x._accumulate(_col2im(dcols, x.shape, kh, kw, stride, padding, oh, ow))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out.astype(DTYPE, copy=False), parents, _backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """
    Per-channel batch normalization over axis 1 for (N, C) or (N, C, H, W) inputs.

    Running statistics are updated in place in training mode.
    """
    if x.data.ndim not in (2, 4) or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm over {gamma.shape[0]} channels got input {x.shape}")
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.data.ndim == 2 else (1, -1, 1, 1)
    xd = x.data.astype(np.float64)
    if training:
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        count = xd.size / xd.shape[1]
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (xd - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = x_hat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def _backward(grad):
        g = grad.astype(np.float64)
        gamma._accumulate(np.sum(g * x_hat, axis=axes))
        beta._accumulate(np.sum(g, axis=axes))
        if not x.tracks_grad:
            return
        g_hat = g * gamma.data.astype(np.float64).reshape(bshape)
        if training:
            m = xd.size / xd.shape[1]
            dx = (inv_std.reshape(bshape) / m) * (
                m * g_hat
                - g_hat.sum(axis=axes).reshape(bshape)
                - x_hat * np.sum(g_hat * x_hat, axis=axes).reshape(bshape)
            )
        else:
            dx = g_hat * inv_std.reshape(bshape)
        x._accumulate(dx)

    return _node(out.astype(DTYPE), (x, gamma, beta), _backward)


def relu(x: Tensor) -> Tensor:
    active = x.data > 0

    def _backward(grad):
        x._accumulate(grad * active)

    return _node(np.where(active, x.data, 0).astype(DTYPE), (x,), _backward)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping ``size``x``size`` max pooling; trailing rows/cols are dropped."""
    n, c, h, w = x.shape
    oh, ow = h // size, w // size
    if oh == 0 or ow == 0:
        raise ShapeError(f"maxpool {size}x{size} does not fit input {x.shape[2:]}")
    cropped = x.data[:, :, :oh * size, :ow * size]
    blocks = cropped.reshape(n, c, oh, size, ow, size)
    out = blocks.max(axis=(3, 5))
    # first maximum in each window receives the gradient
    flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, size * size)
    winner = np.argmax(flat, axis=-1)

    def _backward(grad):
        onehot = np.zeros_like(flat)
        np.put_along_axis(onehot, winner[..., None], grad[..., None], axis=-1)
        back = onehot.reshape(n, c, oh, ow, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh * size, ow * size)
        full = np.zeros_like(x.data)
        full[:, :, :oh * size, :ow * size] = back
        x._accumulate(full)

    return _node(out, (x,), _backward)


def flatten(x: Tensor) -> Tensor:
    shape = x.shape

    def _backward(grad):
        x._accumulate(grad.reshape(shape))

    return _node(x.data.reshape(shape[0], -1), (x,), _backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy against integer class labels."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.data.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"cross-entropy: logits {logits.shape} vs {labels.shape[0]} labels")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = labels.shape[0]
    loss = -log_probs[np.arange(n), labels].mean()

    def _backward(grad):
        probs = np.exp(log_probs)
        probs[np.arange(n), labels] -= 1.0
        logits._accumulate(probs * (float(grad.reshape(-1)[0]) / n))

    return _node(np.array([loss], dtype=DTYPE), (logits,), _backward)


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error over all entries."""
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred.data.astype(np.float64) - target
    loss = np.mean(diff ** 2)

    def _backward(grad):
        pred._accumulate(2.0 * diff * (float(grad.reshape(-1)[0]) / diff.size))

    return _node(np.array([loss], dtype=DTYPE), (pred,), _backward)
