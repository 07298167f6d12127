"""Byte-stable array container, checkpoints, loss CSVs and PGM image grids.

Container layout: the 8-byte magic ``AFLOWPK1``, a little-endian u64 header
length, a compact sorted-key JSON header, then the raw little-endian array
buffers in header order. Nothing time- or host-dependent is written, so equal
inputs give equal bytes.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from pathlib import Path

import numpy as np

from .flow import TrainState
from .nets import AdamW, build_net

__all__ = [
    "FORMAT_VERSION",
    "save_arrays",
    "load_arrays",
    "sha256_file",
    "save_state",
    "load_state",
    "write_loss_csv",
    "write_pgm_grid",
]

MAGIC = b"AFLOWPK1"
FORMAT_VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8"}


def _encode(arrays: dict[str, np.ndarray], meta: dict) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = "i8" if np.issubdtype(arr.dtype, np.integer) else "f8"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"version": FORMAT_VERSION, "meta": meta, "arrays": entries}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(blobs)


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_encode(arrays, meta or {}))
    return path


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path} is not an array container")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    header = json.loads(buf[16 : 16 + hlen])
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported container version {header.get('version')}")
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        arr = np.frombuffer(buf[start : start + e["nbytes"]], dtype=_DTYPES[e["dtype"]])
        arrays[e["name"]] = arr.reshape(e["shape"]).copy()
    return arrays, header["meta"]


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable_history(history):
    return [[s, ph, loss, None if math.isnan(lam) else lam] for s, ph, loss, lam in history]


def save_state(path, state: TrainState, extra: dict | None = None) -> Path:
    """Parameters, AdamW moments, EMA weights, step counter, RNG states and history."""
    arrays = {}
    for k, p in state.net.params.items():
        arrays[f"param/{k}"] = p.data
        arrays[f"adam_m/{k}"] = state.opt.m[k]
        arrays[f"adam_v/{k}"] = state.opt.v[k]
        arrays[f"ema/{k}"] = state.ema[k]
    opt = state.opt
    meta = {
        "arch": state.net.arch(),
        "step": state.step,
        "optimizer": {"t": opt.t, "lr": opt.lr, "betas": [opt.b1, opt.b2], "eps": opt.eps, "weight_decay": opt.weight_decay},
        "rng": state.rng.bit_generator.state,
        "aux_rng": None if state.aux_rng is None else state.aux_rng.bit_generator.state,
        "history": _jsonable_history(state.history),
        "extra": extra or {},
    }
    return save_arrays(path, arrays, meta)


def _restore_rng(snapshot) -> np.random.Generator:
    bitgen = getattr(np.random, snapshot["bit_generator"])()
    bitgen.state = snapshot
    return np.random.Generator(bitgen)


def load_state(path) -> tuple[TrainState, dict]:
    """Inverse of :func:`save_state`; returns the state and the ``extra`` dict."""
    arrays, meta = load_arrays(path)
    if "arch" not in meta:
        raise ValueError(f"{path} is not a checkpoint")
    keys = [n.split("/", 1)[1] for n in arrays if n.startswith("param/")]
    net = build_net(meta["arch"], {k: arrays[f"param/{k}"] for k in keys})
    o = meta["optimizer"]
    opt = AdamW(net.params, lr=o["lr"], betas=o["betas"], eps=o["eps"], weight_decay=o["weight_decay"])
    opt.t = o["t"]
    opt.m = {k: arrays[f"adam_m/{k}"] for k in keys}
    opt.v = {k: arrays[f"adam_v/{k}"] for k in keys}
    history = [(s, ph, loss, math.nan if lam is None else lam) for s, ph, loss, lam in meta["history"]]
    state = TrainState(
        net=net,
        opt=opt,
        rng=_restore_rng(meta["rng"]),
        ema={k: arrays[f"ema/{k}"] for k in keys},
        step=meta["step"],
        history=history,
        aux_rng=None if meta["aux_rng"] is None else _restore_rng(meta["aux_rng"]),
    )
    return state, meta["extra"]


def write_loss_csv(path, history) -> Path:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "phase", "loss", "lambda_mean"])
    for step, phase, loss, lam in history:
        w.writerow([step, phase, repr(float(loss)), "" if math.isnan(lam) else repr(float(lam))])
    path.write_text(buf.getvalue())
    return path


def write_pgm_grid(path, images: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> Path:
    """Tile ``[rows, cols, H, W]`` images into one 8-bit binary PGM."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    rows, cols, h, w = images.shape
    grid = images.transpose(0, 2, 1, 3).reshape(rows * h, cols * w)
    pix = np.clip(np.round((grid - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.write_bytes(f"P5\n{cols * w} {rows * h}\n255\n".encode() + pix.tobytes())
    return path
