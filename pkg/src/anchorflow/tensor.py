"""Dense float64 arrays with a small reverse-mode gradient tape.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. ``backward`` walks
the graph in reverse topological order (the tape) and accumulates ``grad``
on every node that requires it.

Non-finite results raise ``FloatingPointError`` at the op that produced them.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "stop_gradient",
    "concat",
    "conv2d",
    "resample",
    "tanh",
    "grad_check",
]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = _backward
        self.op = op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op or 'leaf'!r})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- backward ---------------------------------------------------------
    def tape(self) -> list[Tensor]:
        """Nodes reachable from ``self`` that need gradients, in execution order."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return order

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(self.tape()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return reduce_sum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def tanh(self):
        return tanh(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    track = any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    if exponent == 2:
        return _make(ad * ad, (a,), lambda g: (2.0 * ad * g,), "square")
    return _make(ad**exponent, (a,), lambda g: (exponent * ad ** (exponent - 1) * g,), "pow")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: ((1.0 - out * out) * g,), "tanh")


# -- linear algebra and shape ----------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {ad.shape} and {bd.shape}")
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([p.data for p in parts], axis=axis),
        parts,
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def stop_gradient(x: Tensor) -> Tensor:
    """Same values as ``x``, detached from the tape."""
    return Tensor(x.data.copy(), op="stop_gradient")


# -- convolution -------------------------------------------------------------
def conv2d(x: Tensor, kernel: Tensor, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation.

    ``x`` is ``[C_in, H, W]`` or batched ``[B, C_in, H, W]``; ``kernel`` is
    ``[C_out, C_in, k, k]`` with zero padding of ``padding`` pixels.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    kd = kernel.data
    if xd.ndim != 4 or kd.ndim != 4:
        raise ValueError(f"conv2d expects [B,C,H,W] input and [O,C,k,k] kernel, got {x.shape}, {kernel.shape}")
    c_out, c_in, kh, kw = kd.shape
    if xd.shape[1] != c_in:
        raise ValueError(f"input has {xd.shape[1]} channels but kernel expects {c_in}")
    if kh != kw:
        raise ValueError("only square kernels are supported")
    b, _, h, w = xd.shape
    p = int(padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    ho, wo = h + 2 * p - kh + 1, w + 2 * p - kw + 1
    if ho < 1 or wo < 1:
        raise ValueError("kernel larger than padded input")

    # channels-last view so each tap is one matmul over the channel axis
    xl = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    out = np.zeros((b, ho, wo, c_out))
    for i in range(kh):
        for j in range(kw):
            out += xl[:, i : i + ho, j : j + wo, :] @ kd[:, :, i, j].T
    out = out.transpose(0, 3, 1, 2)

    def backward(g):
        gl = np.ascontiguousarray(g.transpose(0, 2, 3, 1)) if batched else np.ascontiguousarray(g[None].transpose(0, 2, 3, 1))
        gk = np.empty_like(kd)
        gxl = np.zeros_like(xl)
        g2 = gl.reshape(-1, c_out)
        for i in range(kh):
            for j in range(kw):
                window = xl[:, i : i + ho, j : j + wo, :]
                gk[:, :, i, j] = g2.T @ window.reshape(-1, c_in)
                gxl[:, i : i + ho, j : j + wo, :] += gl @ kd[:, :, i, j]
        gx = gxl.transpose(0, 3, 1, 2)
        if p:
            gx = gx[:, :, p:-p, p:-p]
        gx = np.ascontiguousarray(gx)
        return (gx if batched else gx[0], gk)

    return _make(np.ascontiguousarray(out if batched else out[0]), (x, kernel), backward, "conv2d")


# -- resampling --------------------------------------------------------------
def resample(x, factor: int, direction: str = "down", mode: str = "box") -> Tensor:
    """Integer-factor resampling over the last two axes.

    ``down`` supports ``box`` (block mean) and ``nearest`` (top-left sample of
    each block). ``up`` replicates pixels; ``box`` and ``nearest`` coincide
    there since a box reconstruction kernel is pixel replication.
    """
    x = _as_tensor(x)
    f = int(factor)
    if f < 1:
        raise ValueError("factor must be a positive integer")
    if mode not in ("box", "nearest"):
        raise ValueError(f"unknown resample mode {mode!r}")
    if x.ndim < 2:
        raise ValueError("resample needs at least two spatial axes")
    h, w = x.shape[-2:]
    lead = x.shape[:-2]
    if direction == "down":
        if h % f or w % f:
            raise ValueError(f"spatial size {h}x{w} is not divisible by {f}")
        blocks = x.data.reshape(*lead, h // f, f, w // f, f)
        if mode == "box":
            # offset by the corner pixel so constant blocks come back exact
            corner = blocks[..., :1, :, :1]
            out = corner[..., 0, :, 0] + (blocks - corner).mean(axis=(-3, -1))

            def backward(g):
                return (np.repeat(np.repeat(g, f, axis=-2), f, axis=-1) / (f * f),)

        else:
            out = x.data[..., ::f, ::f].copy()

            def backward(g):
                gx = np.zeros(x.shape)
                gx[..., ::f, ::f] = g
                return (gx,)

        return _make(out, (x,), backward, f"down{f}")
    if direction == "up":
        out = np.repeat(np.repeat(x.data, f, axis=-2), f, axis=-1)

        def backward(g):
            return (g.reshape(*lead, h, f, w, f).sum(axis=(-3, -1)),)

        return _make(out, (x,), backward, f"up{f}")
    raise ValueError(f"direction must be 'down' or 'up', got {direction!r}")


# -- numerical gradient check ------------------------------------------------
def grad_check(f: Callable[[], Tensor | float], params: Iterable[Tensor], eps: float = 1e-6) -> float:
    """Largest relative error between tape gradients and central differences.

    ``f`` is called with no arguments and must rebuild its graph from the
    current values of ``params``; entries are perturbed in place and restored.
    The error per entry is ``|analytic - numeric| / (|numeric| + 1e-8)``.
    """
    params = list(params)
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    for prm in params:
        prm.grad = None
    out = f()
    if isinstance(out, Tensor) and out.requires_grad:
        out.backward()

    def value() -> float:
        v = f()
        v = float(v.data) if isinstance(v, Tensor) else float(v)
        if not np.isfinite(v):
            raise FloatingPointError("objective is not finite at a perturbed point")
        return v

    worst = 0.0
    for prm in params:
        analytic = prm.grad if prm.grad is not None else np.zeros_like(prm.data)
        flat = prm.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = value()
            flat[idx] = orig - eps
            down = value()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(analytic.reshape(-1)[idx] - numeric) / (abs(numeric) + 1e-8)
            worst = max(worst, err)
    return worst
