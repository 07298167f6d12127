"""Evaluation metrics: multi-scale detail residual, sliced W2, consistency residual, latency."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import consistency_target, interpolate, step_boundaries
from .schedule import NoiseSchedule, StepSampler
from .tensor import Tensor, resample

__all__ = [
    "MetricReport",
    "PAPER_KSET",
    "mhd_mse",
    "sliced_w2",
    "residual_pairs",
    "fewstep_pairs",
    "sc_residual",
    "latency_metrics",
]

PAPER_KSET = (3, 4, 5)


@dataclass
class MetricReport:
    metric: str
    value: float
    config: dict = field(default_factory=dict)
    note: str = ""

    def row(self) -> dict:
        return {"metric": self.metric, "value": self.value, "config": self.config, "note": self.note}


def mhd_mse(video, kset=PAPER_KSET, down_mode: str = "box") -> float:
    """Mean over ``k`` of the MSE between ``video`` and its ``2**k`` down/up reconstruction.

    Works on any array whose last two axes are spatial (``[F, C, H, W]`` for video).
    """
    v = np.asarray(video.data if isinstance(video, Tensor) else video, dtype=np.float64)
    kset = list(kset)
    if not kset:
        raise ValueError("kset must not be empty")
    h, w = v.shape[-2:]
    f_max = 2 ** max(kset)
    if h % f_max or w % f_max:
        raise ValueError(f"spatial size {h}x{w} is not divisible by {f_max}")
    total = 0.0
    for k in kset:
        f = 2**k
        # offsets from each block's corner pixel keep constant blocks exactly zero
        d = v - resample(v[..., ::f, ::f], f, "up", "nearest").data
        rec = resample(resample(d, f, "down", down_mode), f, "up", "nearest").data
        total += float(np.mean((d - rec) ** 2))
    return total / len(kset)


def _w2_sq_1d(a_sorted: np.ndarray, b_sorted: np.ndarray) -> np.ndarray:
    """Exact squared W2 between uniform empirical measures, per row of sorted projections."""
    n, m = a_sorted.shape[-1], b_sorted.shape[-1]
    if n == m:
        return np.mean((a_sorted - b_sorted) ** 2, axis=-1)
    # quantile functions are piecewise constant on the merged breakpoint grid
    grid = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    widths = np.diff(np.concatenate([[0.0], grid]))
    mids = grid - widths / 2
    ia = np.minimum((mids * n).astype(np.int64), n - 1)
    ib = np.minimum((mids * m).astype(np.int64), m - 1)
    return np.sum(widths * (a_sorted[..., ia] - b_sorted[..., ib]) ** 2, axis=-1)


def sliced_w2(a, b, n_proj: int = 256, seed: int = 0) -> float:
    """Sliced 2-Wasserstein distance: root of the mean squared 1-D W2 over random directions."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sliced_w2 needs non-empty point sets")
    if n_proj < 1:
        raise ValueError("n_proj must be >= 1")
    a, b = a.reshape(len(a), -1), b.reshape(len(b), -1)
    if a.shape[1] != b.shape[1]:
        raise ValueError("point sets live in different dimensions")
    dirs = np.random.default_rng(seed).standard_normal((n_proj, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(dirs @ a.T, axis=1)
    pb = np.sort(dirs @ b.T, axis=1)
    return float(np.sqrt(np.mean(_w2_sq_1d(pa, pb))))


def residual_pairs(sampler: StepSampler) -> list[tuple[int, int]]:
    """``(T, dT)`` pairs of the anchor grid times each candidate ladder, halved as in training."""
    pairs = []
    for T, ladder in zip(sampler.anchors, sampler.steps_table()):
        for step in ladder:
            if step // 2 > 0:
                pairs.append((int(T), int(step // 2)))
    return pairs


def fewstep_pairs(sched: NoiseSchedule, n_steps: int) -> list[tuple[int, int]]:
    """``(T, d)`` pairs whose doubled step ``2d`` is a transition of the ``n_steps`` sampler."""
    bounds = step_boundaries(sched.n, n_steps)
    return [(int(hi), int(hi - lo) // 2) for hi, lo in zip(bounds[:-1], bounds[1:]) if (hi - lo) // 2 > 0]


def sc_residual(net, probe, sched: NoiseSchedule, pairs, seed: int = 0, cond=None) -> float:
    """Unweighted mean of ``||s(x,T,2d) - target(x,T,d)||^2`` over ``pairs``.

    ``probe`` is a fixed batch of data; noisy states at each ``T`` reuse one
    seeded noise draw so repeated evaluations are bitwise identical.
    """
    probe = np.asarray(probe, dtype=np.float64)
    noise = np.random.default_rng(seed).standard_normal(probe.shape)
    vals = []
    for T, d in pairs:
        xt, _ = interpolate(noise, probe, sched.t_of_index(T))
        Tb = np.full(len(probe), T)
        db = np.full(len(probe), d)
        tgt = consistency_target(net, xt, Tb, db, sched, cond=cond).data
        pred = net(xt, Tb, 2 * db, cond=cond).data
        vals.append(np.mean(np.sum((pred - tgt).reshape(len(probe), -1) ** 2, axis=1)))
    return float(np.mean(vals))


def latency_metrics(latency_s: float, frames: int, H: int, W: int) -> tuple[float, float]:
    """Latency normalised per pixel (``frames*H*W``) and per frame."""
    if frames <= 0 or H <= 0 or W <= 0:
        raise ValueError("frames and resolution must be positive")
    if latency_s < 0:
        raise ValueError("latency must be non-negative")
    return latency_s / (frames * H * W), latency_s / frames
