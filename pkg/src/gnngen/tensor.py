"""Dense reverse-mode autodiff core.

Every learned quantity in this project is carried by :class:`Tensor`, a thin
wrapper around a float64 numpy array that records a backward closure when an
op touches a tensor with ``requires_grad=True``.  The op set is deliberately
small: exactly what the GNN zoo, the two autoencoders, and the denoiser need.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

# When enabled, every op asserts its output is finite.  Slow; meant for tests.
debug_checks = False

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Reverse-accumulate gradients from this tensor through the tape."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without grad requires a scalar output")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # Operator sugar used throughout the models.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, Tensor(-1.0))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    if debug_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by op")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient g to the given operand shape after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _make(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return _make(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _make(data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        return ((a, g.T),)

    return _make(a.data.T, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def backward(g):
        return ((a, g.reshape(old)),)

    return _make(a.data.reshape(shape), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        return ((a, np.broadcast_to(g, a.data.shape).copy()),)

    return _make(a.data.sum(), (a,), backward)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0 of a 2-D tensor."""
    if a.data.ndim != 2:
        raise ShapeError("mean_rows expects a 2-D tensor")
    n = a.data.shape[0]

    def backward(g):
        return ((a, np.broadcast_to(g / n, a.data.shape).copy()),)

    return _make(a.data.mean(axis=0), (a,), backward)


def concat_cols(tensors) -> Tensor:
    tensors = list(tensors)
    widths = [t.data.shape[1] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=1)

    def backward(g):
        out = []
        start = 0
        for t, w in zip(tensors, widths):
            out.append((t, g[:, start : start + w]))
            start += w
        return out

    return _make(data, tensors, backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    data = a.data * mask

    def backward(g):
        return ((a, g * mask),)

    return _make(data, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in [0, 1), got {slope}")

    def backward(g):
        return ((a, g * np.where(a.data > 0, 1.0, slope)),)

    return _make(np.maximum(a.data, slope * a.data), (a,), backward)


def softmax_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("softmax_rows expects a 2-D tensor")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return ((a, (g - dot) * p),)

    return _make(p, (a,), backward)


def cross_entropy_masked(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over mask-selected rows."""
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("cross_entropy_masked: empty mask, no labeled nodes")
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[idx, labels[idx]].mean()

    def backward(g):
        p = np.exp(logp)
        grad = np.zeros_like(x)
        grad[idx] = p[idx]
        grad[idx, labels[idx]] -= 1.0
        grad /= idx.size
        return ((logits, grad * g),)

    return _make(loss, (logits,), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        base = (2.0 / n) * diff * g
        return ((a, base), (b, -base))

    return _make((diff * diff).mean(), (a, b), backward)


def dropout(a: Tensor, rate: float, training: bool, rng) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-rate) so eval is a no-op."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    keep = (rng.uniform(a.data.shape) >= rate) / (1.0 - rate)

    def backward(g):
        return ((a, g * keep),)

    return _make(a.data * keep, (a,), backward)


def instance_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each channel over its length axis (last axis), no affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x - mu) * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return ((a, (g - gm - y * gy) * inv),)

    return _make(y, (a,), backward)


def pad_last(a: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the last axis; used for length-preserving denoiser convs."""
    length = a.data.shape[-1]
    data = np.zeros(a.data.shape[:-1] + (left + length + right,))
    data[..., left : left + length] = a.data

    def backward(g):
        return ((a, g[..., left : left + length]),)

    return _make(data, (a,), backward)


def _as_batched(x: np.ndarray):
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"conv input must be (c,L) or (b,c,L), got {x.shape}")


def conv1d(x: Tensor, kernels: Tensor, stride: int) -> Tensor:
    """Valid cross-correlation. x: (c_in,L) or (b,c_in,L); kernels: (c_out,c_in,k)."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    xb, squeeze = _as_batched(x.data)
    c_out, c_in, k = kernels.data.shape
    b, cx, length = xb.shape
    if cx != c_in:
        raise ShapeError(f"conv1d channel mismatch: input {cx}, kernels {c_in}")
    if length < k:
        raise ShapeError(f"conv1d input too short: L={length} < k={k}")
    l_out = (length - k) // stride + 1
    # im2col windows contracted in one tensordot call per pass.
    windows = np.lib.stride_tricks.sliding_window_view(xb, k, axis=2)[:, :, ::stride]
    out = np.tensordot(windows, kernels.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)

    def backward(g):
        gb = g[None] if squeeze else g
        gk = np.tensordot(gb, windows, axes=([0, 2], [0, 2]))
        gwin = np.tensordot(gb, kernels.data, axes=(1, 0))
        gx = np.zeros_like(xb)
        for j in range(k):
            sl = slice(j, j + stride * (l_out - 1) + 1, stride)
            gx[:, :, sl] += gwin[:, :, :, j].transpose(0, 2, 1)
        return ((x, gx[0] if squeeze else gx), (kernels, gk))

    return _make(out[0] if squeeze else out, (x, kernels), backward)


def conv1d_transposed(x: Tensor, kernels: Tensor, stride: int, target_len: int) -> Tensor:
    """Adjoint of conv1d, then deterministic crop / right zero-pad to target_len.

    x: (c_in,L) or (b,c_in,L); kernels: (c_in,c_out,k).
    """
    xb, squeeze = _as_batched(x.data)
    c_in, c_out, k = kernels.data.shape
    b, cx, length = xb.shape
    if cx != c_in:
        raise ShapeError(f"conv1d_transposed channel mismatch: input {cx}, kernels {c_in}")
    raw = (length - 1) * stride + k
    if not (raw - stride < target_len <= raw + stride):
        raise ShapeError(
            f"decoder-shape error: target_len {target_len} unreachable from "
            f"L={length}, stride={stride}, k={k} (raw {raw})"
        )
    full = max(raw, target_len)
    # One large GEMM, then scatter the k taps onto the strided grid.
    xt = np.ascontiguousarray(xb.transpose(0, 2, 1)).reshape(b * length, c_in)
    flat_k = kernels.data.reshape(c_in, c_out * k)
    prod = (xt @ flat_k).reshape(b, length, c_out, k)
    out = np.zeros((b, c_out, full))
    for j in range(k):
        out[:, :, j : j + stride * (length - 1) + 1 : stride] += prod[:, :, :, j].transpose(
            0, 2, 1
        )
    out = out[:, :, :target_len]

    def backward(g):
        gb = g[None] if squeeze else g
        gpad = np.zeros((b, c_out, full))
        gpad[:, :, :target_len] = gb
        gsl = np.empty((b, length, c_out, k))
        for j in range(k):
            sl = slice(j, j + stride * (length - 1) + 1, stride)
            gsl[:, :, :, j] = gpad[:, :, sl].transpose(0, 2, 1)
        g2 = gsl.reshape(b * length, c_out * k)
        gx = (g2 @ flat_k.T).reshape(b, length, c_in).transpose(0, 2, 1)
        gk = (xt.T @ g2).reshape(c_in, c_out, k)
        return ((x, gx if not squeeze else gx[0]), (kernels, gk))

    return _make(out[0] if squeeze else out, (x, kernels), backward)
