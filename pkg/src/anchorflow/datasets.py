"""Procedural data: 2-D toy point clouds and paired LR/HR shape sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import resample

__all__ = ["TOY_NAMES", "ToyDistribution", "gen_2d", "ShapeSequence", "gen_shapes", "shape_corpus"]

TOY_NAMES = ("two_moons", "eight_gaussians", "checkerboard")
BOX = 4.0


@dataclass(frozen=True)
class ToyDistribution:
    name: str = "two_moons"
    n: int = 1000
    seed: int = 0


def _two_moons(rng, n):
    n_out = n // 2
    n_in = n - n_out
    a = rng.uniform(0.0, np.pi, n_out)
    b = rng.uniform(0.0, np.pi, n_in)
    outer = np.stack([np.cos(a), np.sin(a)], axis=1)
    inner = np.stack([1.0 - np.cos(b), 0.5 - np.sin(b)], axis=1)
    pts = np.concatenate([outer, inner]) + 0.05 * rng.standard_normal((n, 2))
    pts = (pts - np.array([0.5, 0.25])) * 2.0
    return pts[rng.permutation(n)]


def _eight_gaussians(rng, n):
    ang = np.arange(8) * (np.pi / 4)
    centers = 2.5 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    which = rng.integers(0, 8, n)
    return centers[which] + 0.2 * rng.standard_normal((n, 2))


def _checkerboard(rng, n):
    x = rng.uniform(-3.0, 3.0, n)
    row = rng.integers(0, 3, n) * 2 + (np.floor(x) % 2)
    y = rng.uniform(0.0, 1.0, n) + row - 3.0
    return np.stack([x, y], axis=1)


def gen_2d(dist: ToyDistribution) -> np.ndarray:
    """``[n, 2]`` points, a pure function of ``(name, n, seed)``, clipped to ``[-4, 4]^2``."""
    if dist.n < 1:
        raise ValueError("n must be >= 1")
    makers = {"two_moons": _two_moons, "eight_gaussians": _eight_gaussians, "checkerboard": _checkerboard}
    if dist.name not in makers:
        raise ValueError(f"unknown toy distribution {dist.name!r}; choose from {TOY_NAMES}")
    rng = np.random.default_rng(dist.seed)
    return np.clip(makers[dist.name](rng, dist.n), -BOX, BOX)


@dataclass(frozen=True)
class ShapeSequence:
    frames: int = 3
    lr_res: tuple[int, int] = (8, 8)
    factor: int = 4
    seed: int = 0
    n_shapes: int = 2
    speed: float = 0.08

    @property
    def hr_res(self) -> tuple[int, int]:
        return (self.lr_res[0] * self.factor, self.lr_res[1] * self.factor)


def _render(kind, params, yy, xx):
    if kind == "disc":
        cy, cx, r = params
        return ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.float64)
    cy, cx, half_len, half_wid, theta = params
    dy, dx = yy - cy, xx - cx
    along = dx * np.cos(theta) + dy * np.sin(theta)
    across = -dx * np.sin(theta) + dy * np.cos(theta)
    return ((np.abs(along) <= half_len) & (np.abs(across) <= half_wid)).astype(np.float64)


def gen_shapes(spec: ShapeSequence) -> tuple[np.ndarray, np.ndarray]:
    """Moving discs and bars rendered at HR; LR is the exact block mean of HR.

    Coordinates are in units of the image side, so a scene looks the same at
    any resolution. Returns ``(lr [F,h,w], hr [F,H,W])`` with values in [0, 1].
    """
    if spec.factor not in (2, 4, 8):
        raise ValueError(f"resize factor must be 2, 4 or 8, got {spec.factor}")
    rng = np.random.default_rng(spec.seed)
    H, W = spec.hr_res
    yy, xx = np.meshgrid((np.arange(H) + 0.5) / H, (np.arange(W) + 0.5) / W, indexing="ij")
    hr = np.zeros((spec.frames, H, W))
    for _ in range(spec.n_shapes):
        kind = "disc" if rng.uniform() < 0.5 else "bar"
        level = rng.uniform(0.4, 1.0)
        cy, cx = rng.uniform(0.25, 0.75, 2)
        vy, vx = rng.uniform(-spec.speed, spec.speed, 2)
        if kind == "disc":
            extra = (rng.uniform(0.1, 0.22),)
        else:
            extra = (rng.uniform(0.15, 0.3), rng.uniform(0.04, 0.08), rng.uniform(0.0, np.pi))
        for f in range(spec.frames):
            mask = _render(kind, (cy + f * vy, cx + f * vx, *extra), yy, xx)
            hr[f] = np.maximum(hr[f], level * mask)
    lr = resample(hr, spec.factor, "down", "box").data
    return lr, hr


def shape_corpus(n: int, base: ShapeSequence = ShapeSequence()) -> tuple[np.ndarray, np.ndarray]:
    """``n`` independent sequences with seeds ``base.seed + i``, stacked on axis 0."""
    pairs = [gen_shapes(ShapeSequence(**{**base.__dict__, "seed": base.seed + i})) for i in range(n)]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])
