"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every op builds its result eagerly and, when any input is tracked, records a
closure that pushes the output gradient back to its inputs. ``backward``
walks the recorded graph once in reverse topological order and then drops
the graph so intermediate buffers can be freed.

Broadcasting is deliberately limited to adding a 1-D bias along the last
axis; every other op insists on matching shapes. Leading batch axes are
allowed everywhere.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonDeterministicFunction, NonFiniteResult, NotScalarLoss, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    # convenience operators
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteResult(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Undo matmul's implicit batch broadcasting for a lower-rank operand.
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    if a.data.ndim > 2 and b.data.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul batch dims {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(_reduce_to(g @ _swap(b.data), a.shape))
        if b.requires_grad:
            b._accum(_reduce_to(_swap(a.data) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    bias = b.data.ndim == 1 and a.data.ndim > 1 and a.shape[-1] == b.shape[0]
    if a.shape != b.shape and not bias:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g.reshape(-1, b.shape[0]).sum(axis=0) if bias else g)

    return _result(a.data + b.data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return _result(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        a._accum(g * s)

    return _result(a.data * s, (a,), backward, "scale")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    for t in tensors:
        if t.data.ndim != ndim or t.shape[:ax] + t.shape[ax + 1 :] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1 :]:
            raise ShapeMismatch(f"concat along {axis}: {[t.shape for t in tensors]}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=ax)):
            if t.requires_grad:
                t._accum(piece)

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def take(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing."""
    data = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] += g
        a._accum(full)

    return _result(np.array(data), (a,), backward, "slice")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.data.ndim < 2:
        raise ShapeMismatch(f"transpose needs >= 2 dims, got {a.shape}")

    def backward(g):
        a._accum(_swap(g))

    return _result(np.ascontiguousarray(_swap(a.data)), (a,), backward, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {shape}") from None

    def backward(g):
        a._accum(g.reshape(a.shape))

    return _result(data, (a,), backward, "reshape")


def flatten(a: Tensor, start: int = 0) -> Tensor:
    """Collapse axes ``start..`` into one."""
    return reshape(a, a.shape[:start] + (-1,))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(g):
        a._accum(g * y * (1.0 - y))

    return _result(y, (a,), backward, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        a._accum(g * (1.0 - y * y))

    return _result(y, (a,), backward, "tanh")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeMismatch(f"softmax axis {axis} invalid for shape {a.shape}")
    e = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (a,), backward, "softmax")


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    def backward(g):
        a._accum(np.broadcast_to(g, a.shape))

    return _result(np.array(a.data.sum()), (a,), backward, "sum")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=(1, 1)) -> Tensor:
    """Single-input-channel 2-D convolution, no padding.

    ``x`` is ``(H, W)`` or ``(B, H, W)``, ``kernel`` is ``(C, kh, kw)`` and the
    result is ``(C, Ho, Wo)`` or ``(B, C, Ho, Wo)``.
    """
    if kernel.data.ndim != 3 or x.data.ndim not in (2, 3):
        raise ShapeMismatch(f"conv2d input {x.shape} kernel {kernel.shape}")
    if bias is not None and bias.shape != kernel.shape[:1]:
        raise ShapeMismatch(f"conv2d bias {bias.shape} for {kernel.shape[0]} channels")
    sh, sw = stride
    batched = x.data.ndim == 3
    xd = x.data if batched else x.data[None]
    C, kh, kw = kernel.shape
    H, W = xd.shape[1:]
    if H < kh or W < kw:
        raise ShapeMismatch(f"conv2d kernel {kernel.shape} larger than input {x.shape}")
    Ho, Wo = (H - kh) // sh + 1, (W - kw) // sw + 1

    def window(a, e):
        return (slice(None), slice(a, a + sh * (Ho - 1) + 1, sh), slice(e, e + sw * (Wo - 1) + 1, sw))

    patches = np.stack([xd[window(a, e)] for a in range(kh) for e in range(kw)], axis=-1)  # (B, Ho, Wo, kh*kw)
    kflat = kernel.data.reshape(C, kh * kw)
    out = np.einsum("bijp,cp->bcij", patches, kflat)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gb = g if batched else g[None]
        if kernel.requires_grad:
            kernel._accum(np.einsum("bcij,bijp->cp", gb, patches).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias._accum(gb.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gp = np.einsum("bcij,cp->bijp", gb, kflat)
            gx = np.zeros_like(xd)
            p = 0
            for a in range(kh):
                for e in range(kw):
                    gx[window(a, e)] += gp[..., p]
                    p += 1
            x._accum(gx if batched else gx[0])

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out if batched else out[0], parents, backward, "conv2d")


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every tracked tensor."""
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise NotScalarLoss(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise NotScalarLoss("loss is not connected to any tracked tensor")

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

    loss._accum(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if node._parents:
            node.grad = None
    for node in order:
        node._parents = ()
        node._backward = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Largest relative error between backprop and central differences.

    ``f`` must rebuild its graph from ``params`` on every call. The relative
    error of one entry is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-7, 1e-4]")
    for p in params:
        p.grad = None
    loss = f()
    if float(f().data) != float(loss.data):
        raise NonDeterministicFunction("two evaluations at the same point differ")
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
