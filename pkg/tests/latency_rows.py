"""Reference latency rows: (latency_s, frames, H, W, printed per-pixel, printed per-frame)."""

LATENCY_ROWS = [
    (1635, 121, 2560, 1440, 3.66e-6, 13.51),
    (7150, 121, 3840, 2144, 7.18e-6, 59.09),
    (124, 49, 1920, 1072, 1.23e-6, 2.53),
    (1623, 81, 1920, 1088, 9.66e-6, 20.04),
    (24125, 81, 3840, 2160, 3.59e-5, 298.17),
    (3138, 81, 1920, 1088, 1.85e-5, 38.74),
    (15235, 81, 2880, 1632, 4.00e-5, 188.09),
    (146, 121, 2560, 1440, 3.27e-7, 1.21),
    (590, 121, 3840, 2144, 5.92e-7, 4.88),
]

# three significant figures: relative error below half a unit in the third digit
SIG3_RTOL = 5e-3


def cells():
    """Yield ``(label, computed, printed)`` for every per-pixel and per-frame cell."""
    from anchorflow.metrics import latency_metrics

    for lat, f, h, w, px, fr in LATENCY_ROWS:
        per_px, per_fr = latency_metrics(lat, f, h, w)
        tag = f"{lat}s_{f}x{h}x{w}"
        yield f"{tag}_per_pixel", per_px, px
        yield f"{tag}_per_frame", per_fr, fr
