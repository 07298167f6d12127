"""Rectified flow matching, shortcut self-consistency and few-step samplers.

States at index ``T`` live at interpolation time ``t = 1 - sigma(T)``, so
``x_t = sigma * noise + (1 - sigma) * data``. A step ``T -> T - dT`` advances
``t`` by the noise span ``sigma(T) - sigma(T - dT)``; that span is the step
length in every update below.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nets import AdamW, ema_update
from .schedule import NoiseSchedule, StepSampler, calibration_weight, noise_span
from .tensor import Tensor, stop_gradient

logger = logging.getLogger(__name__)

__all__ = [
    "interpolate",
    "fm_loss",
    "shortcut_step",
    "consistency_target",
    "draw_anc_batch",
    "anc_objective",
    "anc_loss",
    "step_boundaries",
    "sample_fewstep",
    "sample_euler",
    "TrainSettings",
    "TrainState",
    "train_alternating",
]


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _per_sample(a, like: np.ndarray) -> np.ndarray:
    """Broadcast a scalar or ``[B]`` vector against ``[B, ...]`` states."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        return a
    return a.reshape(a.shape + (1,) * (like.ndim - 1))


def sq_norm_mean(diff: Tensor, weights=None) -> Tensor:
    """Batch mean of per-sample squared L2 norms, optionally weighted."""
    per = (diff * diff).reshape(diff.shape[0], -1).sum(axis=1)
    if weights is not None:
        per = per * np.asarray(weights, dtype=np.float64)
    return per.mean()


def interpolate(x0, x1, t) -> tuple[Tensor, Tensor]:
    """Linear path ``(1-t) x0 + t x1`` and its constant velocity ``x1 - x0``."""
    a, b = _data(x0), _data(x1)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    t = _per_sample(t, a)
    return Tensor((1.0 - t) * a + t * b), Tensor(b - a)


def fm_loss(net, x0, x1, sched: NoiseSchedule, rng: np.random.Generator, cond=None, T=None) -> Tensor:
    """Flow-matching regression at ``dT = 0``; ``T`` is uniform on ``1..N`` unless given."""
    x0, x1 = _data(x0), _data(x1)
    if len(x1) == 0:
        raise ValueError("empty batch")
    if T is None:
        T = rng.integers(1, sched.n + 1, size=len(x1))
    xt, ut = interpolate(x0, x1, sched.t_of_index(T))
    pred = net(xt, T, np.zeros_like(T), cond=cond)
    return sq_norm_mean(pred - ut)


def shortcut_step(net, x, T, dT, sched: NoiseSchedule, cond=None) -> Tensor:
    """One update ``x + dsigma * s(x, T, dT)`` from index ``T`` to ``T - dT``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    span = noise_span(sched, T, dT)
    if np.all(np.asarray(span) == 0):
        return x
    v = net(x, T, dT, cond=cond)
    return x + v * _per_sample(span, x.data)


def consistency_target(net, x, T, dT, sched: NoiseSchedule, cond=None) -> Tensor:
    """Detached average velocity of two chained ``dT`` steps.

    The two velocities are weighted by the noise span each step covers, so the
    chained update equals one ``2 dT`` step with the target velocity. On an
    unshifted schedule the spans are equal and this is the plain midpoint
    average.
    """
    T, dT = np.asarray(T), np.asarray(dT)
    if np.any(2 * dT > T):
        raise ValueError("consistency target needs 2*dT <= T")
    x = x if isinstance(x, Tensor) else Tensor(x)
    s1 = net(x, T, dT, cond=cond)
    d1 = noise_span(sched, T, dT)
    x_mid = x + s1 * _per_sample(d1, x.data)
    s2 = net(x_mid, T - dT, dT, cond=cond)
    d2 = noise_span(sched, T - dT, dT)
    total = np.asarray(d1 + d2, dtype=np.float64)
    safe = np.where(total > 0, total, 1.0)
    w1 = np.where(total > 0, d1 / safe, 0.5)
    w2 = np.where(total > 0, d2 / safe, 0.5)
    target = s1 * _per_sample(w1, x.data) + s2 * _per_sample(w2, x.data)
    return stop_gradient(target)


def draw_anc_batch(x1, sampler: StepSampler, sched: NoiseSchedule, rng: np.random.Generator) -> dict:
    """Sample ``(T, dT)``, halve ``dT`` and build noisy states for one ANC batch.

    Entries whose halved step is zero are redrawn.
    """
    x1 = _data(x1)
    batch = len(x1)
    if batch == 0:
        raise ValueError("empty batch")
    T, dT, k = sampler.sample(rng, batch)
    half = dT // 2
    bad = half == 0
    while np.any(bad):
        T2, dT2, k2 = sampler.sample(rng, int(bad.sum()))
        T[bad], dT[bad], k[bad] = T2, dT2, k2
        half = dT // 2
        bad = half == 0
    x0 = rng.standard_normal(x1.shape)
    xt, _ = interpolate(x0, x1, sched.t_of_index(T))
    return {"xt": xt, "T": T, "half": half, "k": k}


def anc_objective(net, xt, T, half, target: Tensor, weights, cond=None) -> Tensor:
    pred = net(xt, T, 2 * np.asarray(half), cond=cond)
    return sq_norm_mean(pred - target, weights)


def anc_loss(net, x1, sampler: StepSampler, sched: NoiseSchedule, p: float, rng, cond=None, calibrate: bool = True,
             target_net=None):
    """Span-calibrated self-consistency loss. Returns ``(loss, mean weight)``.

    ``target_net`` (default: ``net``) evaluates the two chained half steps.
    """
    draw = draw_anc_batch(x1, sampler, sched, rng)
    T, half = draw["T"], draw["half"]
    target = consistency_target(net if target_net is None else target_net, draw["xt"], T, half, sched, cond=cond)
    lam = calibration_weight(sched, T, 2 * half, p) if calibrate else np.ones(len(T))
    loss = anc_objective(net, draw["xt"], T, half, target, lam, cond=cond)
    return loss, float(np.mean(lam))


# -- samplers ------------------------------------------------------------------
def step_boundaries(n: int, n_steps: int) -> np.ndarray:
    """Indices ``N = b0 > b1 > ... > b_n = 0`` splitting the range into equal spans."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if n_steps > n:
        raise ValueError("more steps than timestep indices")
    return np.round(np.linspace(n, 0, n_steps + 1)).astype(np.int64)


def _integrate(net, x: np.ndarray, sched: NoiseSchedule, n_steps: int, shortcut: bool, cond=None) -> np.ndarray:
    bounds = step_boundaries(sched.n, n_steps)
    state = Tensor(x)
    for hi, lo in zip(bounds[:-1], bounds[1:]):
        span = int(hi - lo)
        T = np.full(len(x), hi)
        dT = np.full(len(x), span if shortcut else 0)
        v = net(state, T, dT, cond=cond)
        state = Tensor(state.data + noise_span(sched, int(hi), span) * v.data)
    return state.data


def sample_fewstep(net, n_steps: int, sched: NoiseSchedule, rng, shape, n: int, cond=None) -> np.ndarray:
    """Shortcut sampling from pure noise with each step conditioned on its own span."""
    x = rng.standard_normal((n, *shape))
    return _integrate(net, x, sched, n_steps, shortcut=True, cond=cond)


def sample_euler(net, n_steps: int, sched: NoiseSchedule, rng, shape, n: int, cond=None) -> np.ndarray:
    """Explicit Euler on the ``dT = 0`` velocity field from ``T = N`` to ``0``."""
    x = rng.standard_normal((n, *shape))
    return _integrate(net, x, sched, n_steps, shortcut=False, cond=cond)


# -- training --------------------------------------------------------------------
@dataclass
class TrainSettings:
    steps: int = 2000
    batch: int = 256
    lr: float = 1e-3
    lr_schedule: str = "constant"  # constant | cosine
    weight_decay: float = 0.0
    ema_decay: float = 0.999
    objective: str = "shortcut"  # shortcut | fm
    mode: str = "alternating"  # alternating | combined
    sc_weight: float = 1.0
    p: float = 0.5
    calibrate: bool = True
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    sampler: StepSampler = field(default_factory=StepSampler)

    def __post_init__(self):
        if self.objective not in ("shortcut", "fm"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.mode not in ("alternating", "combined"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown learning-rate schedule {self.lr_schedule!r}")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant":
            return self.lr
        frac = min(step / max(self.steps, 1), 1.0)
        return 0.5 * self.lr * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainState:
    net: object
    opt: AdamW
    rng: np.random.Generator
    ema: dict
    step: int = 0
    history: list = field(default_factory=list)
    aux_rng: np.random.Generator | None = None

    @classmethod
    def create(cls, net, settings: TrainSettings, seed: int, aux_seed: int | None = None) -> "TrainState":
        opt = AdamW(net.params, lr=settings.lr, weight_decay=settings.weight_decay)
        ema = {k: p.data.copy() for k, p in net.params.items()}
        aux = None if aux_seed is None else np.random.default_rng(aux_seed)
        return cls(net=net, opt=opt, rng=np.random.default_rng(seed), ema=ema, aux_rng=aux)

    def eval_net(self, use_ema: bool = True):
        """Frozen copy of the network for sampling (EMA weights by default)."""
        arrays = self.ema if use_ema else {k: p.data for k, p in self.net.params.items()}
        return self.net.with_params(arrays)


def train_alternating(
    state: TrainState,
    data: np.ndarray,
    settings: TrainSettings,
    steps: int | None = None,
    cond_fn: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None,
) -> TrainState:
    """Alternate flow-matching (even steps) and ANC (odd steps) updates.

    ``cond_fn(batch, aux_rng)`` supplies an anchor per batch element when the
    network is conditional. Histories are ``(step, phase, loss, lambda_mean)``.
    """
    data = np.asarray(data, dtype=np.float64)
    steps = settings.steps if steps is None else steps
    sched, sampler = settings.schedule, settings.sampler
    net, rng = state.net, state.rng
    for _ in range(steps):
        idx = rng.integers(0, len(data), size=settings.batch)
        x1 = data[idx]
        cond = cond_fn(x1, state.aux_rng) if cond_fn is not None else None
        if settings.objective == "fm":
            phase = "fm"
        elif settings.mode == "combined":
            phase = "combined"
        else:
            phase = "fm" if state.step % 2 == 0 else "anc"

        lam = math.nan
        if phase == "fm":
            x0 = rng.standard_normal(x1.shape)
            loss = fm_loss(net, x0, x1, sched, rng, cond=cond)
        elif phase == "anc":
            loss, lam = anc_loss(net, x1, sampler, sched, settings.p, rng, cond=cond, calibrate=settings.calibrate)
        else:
            x0 = rng.standard_normal(x1.shape)
            flow = fm_loss(net, x0, x1, sched, rng, cond=cond)
            sc, lam = anc_loss(net, x1, sampler, sched, settings.p, rng, cond=cond, calibrate=settings.calibrate)
            loss = flow + sc * settings.sc_weight

        value = float(loss.data)
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite {phase} loss at step {state.step}")
        loss.backward()
        state.opt.lr = settings.lr_at(state.step)
        state.opt.step(net.params)
        ema_update(state.ema, net.params, settings.ema_decay, state.step)
        state.history.append((state.step, phase, value, lam))
        state.step += 1
        if state.step % 500 == 0:
            logger.info("step %d %s loss %.5f", state.step, phase, value)
    return state
