"""Command line: ``gen``, ``train``, ``sample``, ``eval`` and ``bench``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
Every output lands under the chosen output directory; wall-clock times go to a
separate ``timing.json`` so all other files are byte-reproducible.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .anchor import AnchorNet, train_stage2, two_stage_sample
from .config import OUT_ENV, ConfigError, RunConfig, load_config
from .datasets import TOY_NAMES, ToyDistribution, gen_2d, shape_corpus
from .flow import TrainState, sample_euler, sample_fewstep, train_alternating
from .metrics import MetricReport, PAPER_KSET, latency_metrics, mhd_mse, residual_pairs, sc_residual, sliced_w2
from .nets import VelocityNet
from .store import load_arrays, load_state, save_arrays, save_state, sha256_file, write_loss_csv, write_pgm_grid

logger = logging.getLogger("anchorflow")

EXIT_USAGE = 2
EXIT_NUMERIC = 3
METRICS = ("mhd_mse", "sliced_w2", "latency", "sc_residual")


class UsageError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------
def _out_dir(args, cfg: RunConfig | None, default: str) -> Path:
    if getattr(args, "out", None):
        out = Path(args.out)
    elif cfg is not None:
        out = cfg.out_dir()
    else:
        out = Path(os.environ.get(OUT_ENV, "runs")) / default
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _echo_config(out: Path, cfg: RunConfig) -> None:
    (out / "config.toml").write_text(cfg.to_text())


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from exc


def _is_toy(cfg: RunConfig) -> bool:
    return cfg["data.kind"] in TOY_NAMES


def _dataset(cfg: RunConfig) -> dict[str, np.ndarray]:
    if _is_toy(cfg):
        return {"points": gen_2d(ToyDistribution(cfg["data.kind"], cfg["data.n"], cfg["data.seed"]))}
    lr, hr = shape_corpus(cfg["data.n"], cfg.shape_spec())
    return {"lr": lr, "hr": hr}


def _load_checkpoint(path) -> tuple[TrainState, dict]:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_state(path)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from exc


def _load_array(spec: str) -> np.ndarray:
    """``file`` or ``file:name``; containers with one array need no name."""
    path, _, name = spec.partition(":")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input not found: {p}")
    if p.suffix == ".npy":
        return np.load(p)
    try:
        arrays, _ = load_arrays(p)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if name:
        if name not in arrays:
            raise UsageError(f"{p} has no array {name!r}; available: {sorted(arrays)}")
        return arrays[name]
    if len(arrays) != 1:
        raise UsageError(f"{p} holds {sorted(arrays)}; pick one with {p}:NAME")
    return next(iter(arrays.values()))


# -- gen ---------------------------------------------------------------------------
def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg, "gen")
    arrays = _dataset(cfg)
    path = save_arrays(out / "data.afpk", arrays, {"kind": cfg["data.kind"], "seed": cfg["data.seed"]})
    lines = [f"name = {cfg['data.kind']}", f"seed = {cfg['data.seed']}"]
    lines += [f"shape.{k} = {'x'.join(map(str, v.shape))}" for k, v in arrays.items()]
    lines.append(f"sha256 = {sha256_file(path)}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    _echo_config(out, cfg)
    print(f"wrote {path}")
    return 0


# -- train -------------------------------------------------------------------------
def _build_net(stage: str, cfg: RunConfig):
    seed = cfg["seed"]
    common = dict(emb_dim=cfg["net.emb_dim"], max_freq=cfg["net.max_freq"], n=cfg["schedule.n"], seed=seed)
    if stage == "shortcut":
        if not _is_toy(cfg):
            raise UsageError("train shortcut needs a 2-D toy dataset (data.kind)")
        return VelocityNet((2,), widths=tuple(cfg["net.widths"]), **common)
    if _is_toy(cfg):
        raise UsageError(f"train {stage} needs data.kind = \"shapes\"")
    spec = cfg.shape_spec()
    if stage == "anchor":
        return VelocityNet((spec.frames, *spec.lr_res), widths=tuple(cfg["net.widths"]), **common)
    if cfg["degrade.resize_factor"] != spec.factor:
        raise UsageError("degrade.resize_factor must equal data.factor for hr training")
    return AnchorNet(channels=spec.frames, hr_res=spec.hr_res, factor=spec.factor, hidden=cfg["net.hidden"],
                     depth=cfg["net.depth"], gate_width=cfg["net.gate_width"], inject=cfg["net.inject"], **common)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg, f"train-{args.stage}")
    settings = cfg.train_settings()
    data = _dataset(cfg)
    if args.resume:
        state, extra = _load_checkpoint(args.resume)
        if extra.get("stage") != args.stage:
            raise UsageError(f"checkpoint is a {extra.get('stage')!r} run, not {args.stage!r}")
    else:
        aux = cfg["degrade.seed"] if args.stage == "hr" else None
        state = TrainState.create(_build_net(args.stage, cfg), settings, seed=cfg["seed"], aux_seed=aux)
    remaining = settings.steps - state.step
    if remaining < 0:
        raise UsageError(f"checkpoint is already at step {state.step} > train.steps = {settings.steps}")

    t0 = time.perf_counter()
    if args.stage == "shortcut":
        train_alternating(state, data["points"], settings, steps=remaining)
    elif args.stage == "anchor":
        train_alternating(state, data["lr"], settings, steps=remaining)
    else:
        train_stage2(state, data["hr"], cfg.degrade(), settings, steps=remaining)
    elapsed = time.perf_counter() - t0

    ckpt = save_state(out / "checkpoint.afpk", state, {"stage": args.stage, "config": cfg.to_text()})
    write_loss_csv(out / "loss.csv", state.history)
    _echo_config(out, cfg)
    _write_json(out / "timing.json", {"train_seconds": elapsed, "steps": remaining})
    print(f"wrote {ckpt} after {state.step} steps")
    return 0


# -- sample ------------------------------------------------------------------------
def cmd_sample(args) -> int:
    state, extra = _load_checkpoint(args.checkpoint)
    cfg = RunConfig.from_text(extra["config"])
    out = _out_dir(args, None, "sample")
    stage = extra["stage"]
    sched = cfg.schedule()
    net = state.eval_net(use_ema=not args.raw)
    steps = _int_list(args.steps) if args.steps else (cfg["infer.sweep"] if args.sweep else [cfg["infer.steps"]])
    if any(s < 1 or s > sched.n for s in steps):
        raise UsageError(f"step counts must lie in 1..{sched.n}")
    if args.n < 0:
        raise UsageError("--n must be >= 0")

    anchor_net = None
    if stage == "hr" and not args.gt_anchor:
        if not args.anchor_checkpoint:
            raise UsageError("two-stage sampling needs --anchor-checkpoint (or --gt-anchor)")
        a_state, a_extra = _load_checkpoint(args.anchor_checkpoint)
        if a_extra.get("stage") != "anchor":
            raise UsageError("--anchor-checkpoint must come from `train anchor`")
        anchor_net = a_state.eval_net(use_ema=not args.raw)

    manifest = {"checkpoint": str(args.checkpoint), "stage": stage, "seed": args.seed, "n": args.n,
                "steps": steps, "sampler": "euler" if args.euler else "fewstep", "files": []}
    timing = {}
    for n_steps in steps if args.n > 0 else []:
        rng = np.random.default_rng(args.seed)
        t0 = time.perf_counter()
        arrays = {}
        if stage == "hr":
            gt = None
            if args.gt_anchor:
                spec = cfg.shape_spec(seed=args.gt_anchor_seed)
                gt = shape_corpus(args.n, spec)[0]
            anchor, hr = two_stage_sample(anchor_net, net, cfg["infer.anchor_steps"], n_steps, rng, args.n, sched, anchor=gt)
            arrays = {"anchor": anchor, "hr": hr}
        elif args.euler:
            arrays = {"samples": sample_euler(net, n_steps, sched, rng, net.state_shape, args.n)}
        else:
            arrays = {"samples": sample_fewstep(net, n_steps, sched, rng, net.state_shape, args.n)}
        timing[f"steps_{n_steps}_seconds"] = time.perf_counter() - t0
        name = f"samples_{n_steps}.afpk"
        save_arrays(out / name, arrays, {"seed": args.seed, "steps": n_steps})
        manifest["files"].append(name)
        for key, arr in arrays.items():
            if arr.ndim == 4:
                pgm = f"{key}_{n_steps}.pgm"
                write_pgm_grid(out / pgm, arr[:16])  # one row per sample, one column per frame
                manifest["files"].append(pgm)
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "timing.json", timing)
    print(f"wrote {len(manifest['files'])} files to {out}")
    return 0


# -- eval ----------------------------------------------------------------------------
def _parse_res(text: str) -> tuple[int, int]:
    try:
        a, b = (int(t) for t in text.lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"--res expects WIDTHxHEIGHT, got {text!r}") from exc
    return a, b


def _eval_one(args) -> list[MetricReport]:
    m = args.metric
    if m == "latency":
        if args.latency is None or args.frames is None or args.res is None:
            raise UsageError("latency needs --latency, --frames and --res")
        w, h = _parse_res(args.res)
        per_px, per_fr = latency_metrics(args.latency, args.frames, h, w)
        cfg = {"latency_s": args.latency, "frames": args.frames, "res": args.res}
        return [MetricReport("latency_per_pixel", per_px, cfg), MetricReport("latency_per_frame", per_fr, cfg)]
    if not args.input:
        raise UsageError(f"{m} needs --input")
    if m == "mhd_mse":
        kset = _int_list(args.kset) if args.kset else list(PAPER_KSET)
        value = mhd_mse(_load_array(args.input), kset)
        return [MetricReport(m, value, {"input": args.input, "kset": kset})]
    if m == "sliced_w2":
        if not args.ref:
            raise UsageError("sliced_w2 needs --ref")
        a, b = _load_array(args.input), _load_array(args.ref)
        value = sliced_w2(a, b, n_proj=args.n_proj, seed=args.seed)
        return [MetricReport(m, value, {"input": args.input, "ref": args.ref, "n_proj": args.n_proj, "seed": args.seed})]
    # sc_residual: --input is a checkpoint, --ref a probe batch
    state, extra = _load_checkpoint(args.input)
    cfg = RunConfig.from_text(extra["config"])
    probe = _load_array(args.ref) if args.ref else _dataset(cfg)["points"][:256]
    value = sc_residual(state.eval_net(), probe, cfg.schedule(), residual_pairs(cfg.sampler()), seed=args.seed)
    return [MetricReport(m, value, {"input": args.input, "probe": args.ref or "config dataset", "seed": args.seed})]


def _write_reports(out: Path, reports: list[MetricReport]) -> None:
    rows = [r.row() for r in reports]
    _write_json(out / "report.json", rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value", "config", "note"])
    for r in rows:
        w.writerow([r["metric"], repr(float(r["value"])), json.dumps(r["config"], sort_keys=True), r["note"]])
    (out / "report.csv").write_text(buf.getvalue())


def cmd_eval(args) -> int:
    if args.metric not in METRICS:
        raise UsageError(f"unknown metric {args.metric!r}; choose from {', '.join(METRICS)}")
    reports = _eval_one(args)
    out = _out_dir(args, None, "eval")
    _write_reports(out, reports)
    for r in reports:
        print(f"{r.metric} = {r.value:.6g}")
    return 0


# -- bench ---------------------------------------------------------------------------
def _bench_seed(cfg_text: str, seed: int, n_eval: int) -> list[dict]:
    cfg = RunConfig.from_text(cfg_text).replace(seed=seed, data__seed=seed)
    data = _dataset(cfg)["points"]
    held = gen_2d(ToyDistribution(cfg["data.kind"], n_eval, 10_000 + seed))
    sched = cfg.schedule()
    rows = []
    for objective in ("fm", "shortcut"):
        settings = cfg.replace(train__objective=objective).train_settings()
        state = TrainState.create(_build_net("shortcut", cfg), settings, seed=seed)
        train_alternating(state, data, settings)
        net = state.eval_net()
        evals = [("euler", 50)] + [("fewstep", n) for n in cfg["infer.sweep"]] + [("euler", n) for n in cfg["infer.sweep"]]
        for kind, n in evals:
            fn = sample_euler if kind == "euler" else sample_fewstep
            x = fn(net, n, sched, np.random.default_rng(seed), (2,), n_eval)
            rows.append({"seed": seed, "objective": objective, "sampler": kind, "steps": n,
                         "sliced_w2": sliced_w2(x, held, n_proj=256, seed=0)})
    return rows


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    if not _is_toy(cfg):
        raise UsageError("bench runs on 2-D toy datasets")
    out = _out_dir(args, cfg, "bench")
    seeds = _int_list(args.seeds)
    t0 = time.perf_counter()
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            parts = list(pool.map(_bench_seed, [cfg.to_text()] * len(seeds), seeds, [args.n_eval] * len(seeds)))
    else:
        parts = [_bench_seed(cfg.to_text(), s, args.n_eval) for s in seeds]
    rows = [r for part in parts for r in part]
    _write_json(out / "bench.json", rows)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["seed", "objective", "sampler", "steps", "sliced_w2"], lineterminator="\n")
    w.writeheader()
    w.writerows({**r, "sliced_w2": repr(r["sliced_w2"])} for r in rows)
    (out / "bench.csv").write_text(buf.getvalue())
    _echo_config(out, cfg)
    _write_json(out / "timing.json", {"bench_seconds": time.perf_counter() - t0})
    print(f"wrote {len(rows)} rows to {out / 'bench.csv'}")
    return 0


# -- entry point -----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anchorflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a dataset and its manifest")
    g.add_argument("config")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one stage")
    t.add_argument("stage", choices=("anchor", "hr", "shortcut"))
    t.add_argument("config")
    t.add_argument("--out")
    t.add_argument("--resume", help="continue from a checkpoint up to train.steps")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--anchor-checkpoint", help="Stage-I checkpoint for two-stage sampling")
    s.add_argument("--gt-anchor", action="store_true", help="use clean LR frames from the config's shape generator")
    s.add_argument("--gt-anchor-seed", type=int, default=100_000)
    s.add_argument("--steps", help="comma-separated step counts (default infer.steps)")
    s.add_argument("--sweep", action="store_true", help="use the infer.sweep step counts")
    s.add_argument("--euler", action="store_true", help="plain Euler on the zero-step velocity")
    s.add_argument("--raw", action="store_true", help="raw weights instead of the EMA copy")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="compute a metric")
    e.add_argument("metric", help=f"one of {', '.join(METRICS)}")
    e.add_argument("--input")
    e.add_argument("--ref")
    e.add_argument("--kset")
    e.add_argument("--n-proj", type=int, default=256)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--latency", type=float)
    e.add_argument("--frames", type=int)
    e.add_argument("--res")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="FM vs shortcut step sweep over seeds")
    b.add_argument("config")
    b.add_argument("--seeds", default="0,1,2")
    b.add_argument("--n-eval", type=int, default=5000)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
