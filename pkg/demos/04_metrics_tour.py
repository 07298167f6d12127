"""Small worked examples for every metric."""
import numpy as np

from anchorflow import latency_metrics, mhd_mse, sliced_w2

# detail residual: a checkerboard loses everything under 2x block averaging, a flat image loses nothing
board = (np.indices((32, 32)).sum(axis=0) % 2).astype(float)[None]
print("checkerboard", mhd_mse(board, [1]), " flat", mhd_mse(np.ones((1, 32, 32)), [1]))

# sliced W2 of a translated cloud: squared value tends to |v|^2 / 2 in two dimensions
pts = np.random.default_rng(0).standard_normal((2000, 2))
v = np.array([1.0, 1.0])
print("sliced W2^2", sliced_w2(pts, pts + v, n_proj=4000) ** 2, "expected", v @ v / 2)

# latency normalised by pixels and by frames
per_px, per_fr = latency_metrics(146, 121, 2560, 1440)
print(f"per pixel {per_px:.3g} s, per frame {per_fr:.3g} s")
