"""Discrete timestep indices, the shifted noise schedule and shortcut step sampling.

Index convention: ``T`` counts remaining noise. ``T = N`` is pure noise,
``T = 0`` is data, and a denoising step of size ``dT`` moves ``T -> T - dT``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseSchedule",
    "StepSampler",
    "sigma_of_index",
    "candidate_steps",
    "sample_step",
    "noise_span",
    "calibration_weight",
]


@dataclass(frozen=True)
class NoiseSchedule:
    n: int = 1000
    shift: float = 3.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("schedule needs n >= 1")
        if self.shift < 1.0:
            raise ValueError("shift must be >= 1")

    def sigma(self, T):
        return sigma_of_index(self, T)

    def t_of_index(self, T):
        """Interpolation time of index ``T``: 0 is noise, 1 is data."""
        return 1.0 - sigma_of_index(self, T)


def _check_index(sched: NoiseSchedule, T) -> np.ndarray:
    T = np.asarray(T)
    if np.any(T < 0) or np.any(T > sched.n):
        raise ValueError(f"timestep index outside [0, {sched.n}]")
    return T


def sigma_of_index(sched: NoiseSchedule, T):
    """Noise level ``s*u / (1 + (s-1)*u)`` with ``u = T/N``; scalar in, scalar out."""
    T = _check_index(sched, T)
    u = T / sched.n
    s = sched.shift
    sig = s * u / (1.0 + (s - 1.0) * u)
    return float(sig) if sig.ndim == 0 else sig


def candidate_steps(T: int, K: int, min_step: int = 1) -> list[int]:
    """Halving ladder ``floor(T / 2**k)`` for ``k < K``, clamped below at ``min_step``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if T < min_step:
        raise ValueError(f"T={T} is smaller than min_step={min_step}")
    return [max(int(T) >> k, min_step) for k in range(K)]


@dataclass(frozen=True)
class StepSampler:
    beta: float = 0.7
    k: int = 6
    anchors: tuple[int, ...] = (500, 600, 700, 800)
    min_step: int = 1
    focus: float = 1.0
    n: int = 1000
    _probs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if not self.anchors:
            raise ValueError("anchor set must be non-empty")
        if not 0.0 <= self.focus <= 1.0:
            raise ValueError("focus must lie in [0, 1]")
        object.__setattr__(self, "anchors", tuple(int(a) for a in self.anchors))
        w = np.exp(-self.beta * np.arange(self.k))
        object.__setattr__(self, "_probs", w / w.sum())

    @property
    def probs(self) -> np.ndarray:
        return self._probs.copy()

    def steps_table(self) -> np.ndarray:
        """``[len(anchors), K]`` table of candidate step sizes."""
        return np.array([candidate_steps(a, self.k, self.min_step) for a in self.anchors])

    def sample(self, rng: np.random.Generator, size: int):
        """Vectorised draw of ``size`` triples ``(T, dT, k)``.

        With ``focus < 1`` each ``T`` comes from the anchor set with probability
        ``focus`` and is uniform on ``min_step..n`` otherwise.
        """
        ai = rng.integers(0, len(self.anchors), size=size)
        ks = rng.choice(self.k, size=size, p=self._probs)
        T = np.asarray(self.anchors)[ai]
        if self.focus < 1.0:
            spread = rng.uniform(size=size) >= self.focus
            T = np.where(spread, rng.integers(self.min_step, self.n + 1, size=size), T)
        dT = np.maximum(T[:, None] >> np.arange(self.k)[None, :], self.min_step)[np.arange(size), ks]
        return T, dT, ks


def sample_step(sampler: StepSampler, rng: np.random.Generator) -> tuple[int, int, int]:
    T, dT, k = sampler.sample(rng, 1)
    return int(T[0]), int(dT[0]), int(k[0])


def noise_span(sched: NoiseSchedule, T, dT):
    T, dT = np.asarray(T), np.asarray(dT)
    if np.any(dT < 0) or np.any(dT > T):
        raise ValueError("need 0 <= dT <= T")
    span = np.abs(sigma_of_index(sched, T) - sigma_of_index(sched, T - dT))
    return float(span) if np.ndim(span) == 0 else span


def calibration_weight(sched: NoiseSchedule, T, dT, p: float = 0.5):
    if p <= 0:
        raise ValueError("sensitivity p must be positive")
    return noise_span(sched, T, dT) ** p
