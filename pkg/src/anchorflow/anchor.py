"""Two-stage synthesis: degraded anchors, feature refinement and the gated injector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .flow import TrainSettings, TrainState, sample_fewstep, train_alternating
from .nets import DEFAULT_MAX_FREQ, _batch_indices, _init_dense, embed_time, register_net
from .schedule import NoiseSchedule
from .tensor import Tensor, conv2d, resample, tanh

__all__ = [
    "DegradeConfig",
    "gaussian_kernel",
    "degrade",
    "refine_anchor",
    "injector_gate",
    "inject",
    "AnchorNet",
    "train_stage2",
    "two_stage_sample",
]


@dataclass(frozen=True)
class DegradeConfig:
    blur_sigma: float = 1.0
    resize_factor: int = 4
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("blur and noise levels must be non-negative")
        if self.resize_factor < 1:
            raise ValueError("resize factor must be a positive integer")


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalised 1-D Gaussian taps with radius ``ceil(3 sigma)``."""
    r = int(np.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def degrade(x_hr, cfg: DegradeConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Blur, box-downsample and add Gaussian noise over the last two axes.

    Borders are mirrored so constant images stay constant under blur. The rng
    is only consumed when ``noise_sigma > 0``.
    """
    x = np.asarray(x_hr.data if isinstance(x_hr, Tensor) else x_hr, dtype=np.float64)
    f = cfg.resize_factor
    h, w = x.shape[-2:]
    if h % f or w % f:
        raise ValueError(f"spatial size {h}x{w} is not divisible by {f}")
    if cfg.blur_sigma > 0:
        k = gaussian_kernel(cfg.blur_sigma)
        x = correlate1d(x, k, axis=-1, mode="reflect")
        x = correlate1d(x, k, axis=-2, mode="reflect")
    if f > 1:
        x = resample(x, f, "down", "box").data
    if cfg.noise_sigma > 0:
        if rng is None:
            raise ValueError("a noisy degradation needs an rng")
        x = x + cfg.noise_sigma * rng.standard_normal(x.shape)
    return x


def refine_anchor(anchor, target_hw, k1: Tensor, k3: Tensor) -> Tensor:
    """Nearest-upsample the anchor to ``target_hw``, then a 1x1 and a 3x3 convolution."""
    anchor = anchor if isinstance(anchor, Tensor) else Tensor(anchor)
    h, w = anchor.shape[-2:]
    H, W = target_hw
    if H % h or W % w or H // h != W // w:
        raise ValueError(f"cannot upsample {h}x{w} to {H}x{W} by one integer factor")
    up = resample(anchor, H // h, "up", "nearest")
    return conv2d(conv2d(up, k1, padding=0), k3, padding=1)


# largest double below 1: float tanh saturates to exactly +-1, which would put
# the gain 1 + alpha on the boundary of (0, 2)
_GATE_LIMIT = 1.0 - 2.0**-52


def injector_gate(T, dT, gate: dict[str, Tensor], n: int, emb_dim: int, max_freq: float = DEFAULT_MAX_FREQ) -> Tensor:
    """``alpha = tanh(MLP(SinEmb(T) + SinEmb(dT)))`` with a two-layer MLP; one scalar per index pair."""
    e = Tensor(np.atleast_2d(embed_time(T, dT, n, emb_dim, max_freq)))
    hidden = tanh(e @ gate["g0"] + gate["gb0"])
    return tanh(hidden @ gate["g1"] + gate["gb1"]) * _GATE_LIMIT


def inject(z, z_anchor, alpha) -> Tensor:
    """``z + (1 + alpha) * z_anchor``; ``alpha`` is a scalar or one value per batch element."""
    z = z if isinstance(z, Tensor) else Tensor(z)
    z_anchor = z_anchor if isinstance(z_anchor, Tensor) else Tensor(z_anchor)
    if z.shape != z_anchor.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {z_anchor.shape}")
    alpha = alpha if isinstance(alpha, Tensor) else Tensor(alpha)
    if alpha.size > 1:
        alpha = alpha.reshape(alpha.size, *([1] * (z.ndim - 1)))
    return z + z_anchor * (alpha + 1.0)


@register_net
class AnchorNet:
    """Convolutional velocity network for HR states with an anchor injector.

    Three 3x3 convolutions with tanh, each hidden layer biased per channel by
    the time embedding. The refined anchor is injected after the first hidden
    layer (``inject="first"``), after every hidden layer (``"all"``), or not at
    all (``"off"``). Backbone weights are drawn before injector weights, so
    the backbone of a given seed does not depend on the injector.
    """

    kind = "anchor_conv"

    def __init__(self, channels=3, hr_res=(32, 32), factor=4, hidden=16, depth=3, emb_dim=32, gate_width=32,
                 max_freq=DEFAULT_MAX_FREQ, n=1000, seed=0, inject="first", params=None):
        self.channels = int(channels)
        self.hr_res = tuple(int(s) for s in hr_res)
        self.factor = int(factor)
        self.hidden = int(hidden)
        self.depth = int(depth)
        self.emb_dim = int(emb_dim)
        self.gate_width = int(gate_width)
        self.max_freq = float(max_freq)
        self.n = int(n)
        self.seed = int(seed)
        if inject not in ("first", "all", "off"):
            raise ValueError(f"unknown injection mode {inject!r}")
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        self.inject = inject
        self.state_shape = (self.channels, *self.hr_res)
        self.anchor_shape = (self.channels, self.hr_res[0] // self.factor, self.hr_res[1] // self.factor)
        self.params = params if params is not None else self._init_params(np.random.default_rng(self.seed))

    def _init_params(self, rng):
        P = {}
        c, hd = self.channels, self.hidden

        def conv(c_out, c_in, k):
            return Tensor(rng.standard_normal((c_out, c_in, k, k)) / np.sqrt(c_in * k * k), requires_grad=True)

        for i in range(self.depth):
            c_in = c if i == 0 else hd
            c_out = c if i == self.depth - 1 else hd
            P[f"c{i}"] = conv(c_out, c_in, 3)
            if i < self.depth - 1:
                P[f"t{i}"] = Tensor(_init_dense(rng, self.emb_dim, hd), requires_grad=True)
                P[f"b{i}"] = Tensor(np.zeros(hd), requires_grad=True)
        P["r1"] = conv(hd, c, 1)
        P["r3"] = conv(hd, hd, 3)
        P["g0"] = Tensor(_init_dense(rng, self.emb_dim, self.gate_width), requires_grad=True)
        P["gb0"] = Tensor(np.zeros(self.gate_width), requires_grad=True)
        # zero final gate layer: alpha starts at 0, i.e. plain additive injection
        P["g1"] = Tensor(np.zeros((self.gate_width, 1)), requires_grad=True)
        P["gb1"] = Tensor(np.zeros(1), requires_grad=True)
        return P

    @property
    def gate(self) -> dict[str, Tensor]:
        return {k: self.params[k] for k in ("g0", "gb0", "g1", "gb1")}

    def backbone_keys(self) -> list[str]:
        return [k for k in self.params if k[0] in "ctb"]

    def injector_keys(self) -> list[str]:
        return [k for k in self.params if k[0] in "rg"]

    def arch(self) -> dict:
        return {
            "kind": self.kind,
            "channels": self.channels,
            "hr_res": list(self.hr_res),
            "factor": self.factor,
            "hidden": self.hidden,
            "depth": self.depth,
            "emb_dim": self.emb_dim,
            "gate_width": self.gate_width,
            "max_freq": self.max_freq,
            "n": self.n,
            "seed": self.seed,
            "inject": self.inject,
        }

    def with_params(self, arrays, trainable: bool = False) -> "AnchorNet":
        params = {k: Tensor(np.array(arrays[k]), requires_grad=trainable) for k in self.params}
        args = {k: v for k, v in self.arch().items() if k != "kind"}
        return AnchorNet(**args, params=params)

    def alpha(self, T, dT) -> Tensor:
        return injector_gate(T, dT, self.gate, self.n, self.emb_dim, self.max_freq)

    def refine(self, anchor) -> Tensor:
        return refine_anchor(anchor, self.hr_res, self.params["r1"], self.params["r3"])

    def __call__(self, x, T, dT, cond=None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        batch = x.shape[0]
        if tuple(x.shape[1:]) != self.state_shape:
            raise ValueError(f"expected states of shape {self.state_shape}, got {x.shape[1:]}")
        T, dT = _batch_indices(T, dT, batch)
        e = Tensor(embed_time(T, dT, self.n, self.emb_dim, self.max_freq))
        z_a = alpha = None
        if cond is not None and self.inject != "off":
            cond = cond if isinstance(cond, Tensor) else Tensor(cond)
            if tuple(cond.shape) != (batch, *self.anchor_shape):
                raise ValueError(f"anchor shape {cond.shape[1:]} does not match {self.anchor_shape}")
            z_a = self.refine(cond)
            alpha = self.alpha(T, dT)
        h = x
        for i in range(self.depth - 1):
            bias = (e @ self.params[f"t{i}"] + self.params[f"b{i}"]).reshape(batch, self.hidden, 1, 1)
            h = tanh(conv2d(h, self.params[f"c{i}"], padding=1) + bias)
            if z_a is not None and (i == 0 or self.inject == "all"):
                h = inject(h, z_a, alpha)
        return conv2d(h, self.params[f"c{self.depth - 1}"], padding=1)


def train_stage2(state: TrainState, hr_data: np.ndarray, dcfg: DegradeConfig, settings: TrainSettings,
                 steps: int | None = None) -> TrainState:
    """Joint backbone + injector training with anchors degraded from each HR batch.

    Degradation noise comes from ``state.aux_rng`` so the main training stream
    is the same as for unconditional training.
    """
    if state.aux_rng is None:
        state.aux_rng = np.random.default_rng(dcfg.seed)
    return train_alternating(state, hr_data, settings, steps=steps, cond_fn=lambda x1, rng: degrade(x1, dcfg, rng))


def two_stage_sample(anchor_net, hr_net: AnchorNet, n_steps_anchor: int, n_steps_hr: int, rng: np.random.Generator,
                     n: int, sched: NoiseSchedule, anchor=None) -> tuple[np.ndarray, np.ndarray]:
    """Sample LR anchors (Stage I) then HR states guided by them (Stage II).

    Passing ``anchor`` skips Stage I. Returns ``(anchor, hr)``.
    """
    if anchor is None:
        flat = sample_fewstep(anchor_net, n_steps_anchor, sched, rng, anchor_net.state_shape, n)
        anchor = flat.reshape(n, *hr_net.anchor_shape)
    anchor = np.asarray(anchor, dtype=np.float64)
    if anchor.shape[1:] != hr_net.anchor_shape:
        raise ValueError(f"anchor shape {anchor.shape[1:]} does not match {hr_net.anchor_shape}")
    hr = sample_fewstep(hr_net, n_steps_hr, sched, rng, hr_net.state_shape, len(anchor), cond=anchor)
    return anchor, hr
