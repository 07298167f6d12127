"""Time embeddings, the step-conditioned MLP velocity network, AdamW and EMA."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat, tanh

__all__ = ["frequency_ladders", "sinusoid", "embed_time", "VelocityNet", "AdamW", "ema_update", "build_net"]

DEFAULT_MAX_FREQ = 30.0


def frequency_ladders(dim: int, max_freq: float = DEFAULT_MAX_FREQ) -> tuple[np.ndarray, np.ndarray]:
    """Angular frequencies for the timestep and the step-size embeddings.

    One geometric ladder of ``dim`` frequencies in ``[1, max_freq]`` is split
    by parity: even rungs embed ``T``, odd rungs embed ``dT``. The two ladders
    never share a frequency, so the summed embedding is not symmetric in its
    arguments.
    """
    if dim < 2 or dim % 2:
        raise ValueError(f"embedding dimension must be a positive even number, got {dim}")
    ladder = np.geomspace(1.0, max_freq, dim)
    return ladder[0::2], ladder[1::2]


def sinusoid(u, freqs: np.ndarray) -> np.ndarray:
    ang = np.multiply.outer(np.asarray(u, dtype=np.float64), freqs)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def embed_time(T, dT, n: int, dim: int, max_freq: float = DEFAULT_MAX_FREQ) -> np.ndarray:
    """Sum of sinusoidal embeddings of ``T/n`` and ``dT/n``.

    Layout is ``[sin..., cos...]``; scalar indices give ``[dim]``, arrays give
    ``[len, dim]``. ``n`` may also be a :class:`NoiseSchedule`.
    """
    n = getattr(n, "n", n)
    f_t, f_d = frequency_ladders(dim, max_freq)
    return sinusoid(np.asarray(T) / n, f_t) + sinusoid(np.asarray(dT) / n, f_d)


def _init_dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)


def _batch_indices(T, dT, batch: int) -> tuple[np.ndarray, np.ndarray]:
    T = np.broadcast_to(np.asarray(T, dtype=np.float64), (batch,))
    dT = np.broadcast_to(np.asarray(dT, dtype=np.float64), (batch,))
    return T, dT


class VelocityNet:
    """Predicts ``s(x, T, dT)`` for states of a fixed shape.

    ``x`` is flattened, concatenated with the summed time embedding and sent
    through tanh affine layers. ``dT = 0`` gives the plain flow-matching
    velocity, so one set of weights serves both roles.
    """

    kind = "mlp"

    def __init__(self, state_shape, widths=(128, 128), emb_dim=64, max_freq=DEFAULT_MAX_FREQ, n=1000, seed=0, params=None):
        self.state_shape = tuple(int(s) for s in state_shape)
        self.widths = tuple(int(w) for w in widths)
        self.emb_dim = int(emb_dim)
        self.max_freq = float(max_freq)
        self.n = int(n)
        self.seed = int(seed)
        frequency_ladders(self.emb_dim, self.max_freq)
        self.dim = int(np.prod(self.state_shape))
        if params is None:
            params = self._init_params(np.random.default_rng(self.seed))
        self.params: dict[str, Tensor] = params

    def _init_params(self, rng):
        sizes = [self.dim + self.emb_dim, *self.widths, self.dim]
        params = {}
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            params[f"w{i}"] = Tensor(_init_dense(rng, a, b), requires_grad=True)
            params[f"b{i}"] = Tensor(np.zeros(b), requires_grad=True)
        return params

    def arch(self) -> dict:
        return {
            "kind": self.kind,
            "state_shape": list(self.state_shape),
            "widths": list(self.widths),
            "emb_dim": self.emb_dim,
            "max_freq": self.max_freq,
            "n": self.n,
            "seed": self.seed,
        }

    def with_params(self, arrays: dict[str, np.ndarray], trainable: bool = False) -> "VelocityNet":
        params = {k: Tensor(np.array(arrays[k]), requires_grad=trainable) for k in self.params}
        return type(self)(**_ctor_args(self.arch()), params=params)

    def __call__(self, x, T, dT, cond=None) -> Tensor:
        if cond is not None:
            raise ValueError("this network takes no anchor condition")
        x = x if isinstance(x, Tensor) else Tensor(x)
        batch = x.shape[0]
        if tuple(x.shape[1:]) != self.state_shape:
            raise ValueError(f"expected states of shape {self.state_shape}, got {x.shape[1:]}")
        T, dT = _batch_indices(T, dT, batch)
        emb = Tensor(embed_time(T, dT, self.n, self.emb_dim, self.max_freq))
        h = concat([x.reshape(batch, self.dim), emb], axis=1)
        n_layers = len(self.widths) + 1
        for i in range(n_layers):
            h = h @ self.params[f"w{i}"] + self.params[f"b{i}"]
            if i < n_layers - 1:
                h = tanh(h)
        return h.reshape(batch, *self.state_shape)


def _ctor_args(arch: dict) -> dict:
    return {k: v for k, v in arch.items() if k != "kind"}


_REGISTRY: dict[str, type] = {"mlp": VelocityNet}


def register_net(cls):
    _REGISTRY[cls.kind] = cls
    return cls


def build_net(arch: dict, arrays: dict[str, np.ndarray] | None = None, trainable: bool = True):
    cls = _REGISTRY[arch["kind"]]
    net = cls(**_ctor_args(arch))
    if arrays is not None:
        for k, p in net.params.items():
            p.data = np.array(arrays[k], dtype=np.float64)
            p.requires_grad = trainable
    return net


class AdamW:
    """Adam with decoupled weight decay. Moments live in ``m``/``v`` keyed like the params."""

    def __init__(self, params: dict[str, Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = float(lr)
        self.b1, self.b2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params: dict[str, Tensor]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            # rebinding keeps arrays captured by earlier graphs untouched
            p.data = p.data * (1.0 - self.lr * self.weight_decay) - self.lr * update
            p.grad = None


def ema_update(ema: dict[str, np.ndarray], params: dict[str, Tensor], decay: float, step: int) -> None:
    """In-place EMA with the usual ``(1+step)/(10+step)`` warm-up cap."""
    d = min(decay, (1.0 + step) / (10.0 + step))
    for k, p in params.items():
        ema[k] = d * ema[k] + (1.0 - d) * p.data
