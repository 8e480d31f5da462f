"""Command-line entry point: ``wiener-aec {simulate,process,evaluate,gradcheck}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import metrics
from .attention import AttentionParams, CheckpointError, load_checkpoint
from .gradcheck import TOLERANCE, run_suite
from .simulate import (SAMPLE_RATE, Scenario, ScenarioError, render_scenario, sample_scenario,
                       speech_like)
from .stft import StftConfig, istft
from .wiener import stws_pipeline

logger = logging.getLogger("wiener_aec")


class UsageError(Exception):
    """Bad configuration or input; mapped to exit code 2."""


# --- WAV helpers ----------------------------------------------------------------

def read_wav(path) -> tuple[int, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"missing input file: {path}")
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise UsageError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    return rate, np.asarray(data, dtype=float)


def write_wav(path, x, rate: int = SAMPLE_RATE, fmt: str = "float32"):
    x = np.asarray(x, dtype=float)
    if fmt == "pcm16":
        data = np.clip(np.round(x * 32767), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = x.astype(np.float32)
    else:
        raise UsageError(f"unknown wav format {fmt!r}")
    wavfile.write(path, rate, data)


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return cfg


def merge(cfg: dict, args: argparse.Namespace, keys) -> dict:
    """Flags that were given on the command line override config values."""
    out = dict(cfg)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- simulate -----------------------------------------------------------------------

def _scenario_job(job):
    index, scenario, cfg = job
    duration = float(cfg.get("duration", 5.0))
    if cfg.get("far_wav"):
        _, far = read_wav(cfg["far_wav"])
    else:
        far = speech_like(duration, seed=scenario.seed * 2 + 1)
    if cfg.get("single_talk"):
        near = np.zeros_like(far)
    elif cfg.get("near_wav"):
        _, near = read_wav(cfg["near_wav"])
    else:
        near = speech_like(duration, seed=scenario.seed * 2 + 2)
    n = min(len(far), len(near))
    bundle = render_scenario(scenario, far[:n], near[:n])
    out = Path(cfg["out_dir"]) / f"scenario_{index:03d}"
    out.mkdir(parents=True, exist_ok=True)
    fmt = cfg.get("wav_format", "float32")
    for name in ("far", "near", "echo", "mic"):
        write_wav(out / f"{name}.wav", getattr(bundle, name), fmt=fmt)
    dump_json(bundle.metadata(), out / "meta.json")
    return str(out)


def build_scenarios(cfg: dict) -> list[Scenario]:
    if "scenarios" in cfg:
        scenarios = []
        for i, d in enumerate(cfg["scenarios"]):
            d = dict(d)
            d.setdefault("seed", int(cfg.get("seed", 0)) * 1000 + i)
            scenarios.append(Scenario.from_dict(d).validate())
        return scenarios
    seed = int(cfg.get("seed", 0))
    n = int(cfg.get("n_scenarios", 1))
    sers = cfg.get("ser_db")
    sers = [None] if sers is None else (sers if isinstance(sers, list) else [sers])
    fraction = float(cfg.get("nonlinear_fraction", 0.9))
    scenarios = []
    for i in range(n):
        for j, ser in enumerate(sers):
            s = sample_scenario(seed * 100003 + i, ser_db=None if ser is None else float(ser),
                                nonlinear_fraction=fraction)
            scenarios.append(s.validate())
    return scenarios


def cmd_simulate(args) -> int:
    cfg = merge(load_config(args.config), args,
                ["out_dir", "seed", "n_scenarios", "duration", "ser_db", "workers",
                 "wav_format", "single_talk", "nonlinear_fraction"])
    if "out_dir" not in cfg:
        raise UsageError("an output directory is required (--out-dir or config 'out_dir')")
    scenarios = build_scenarios(cfg)
    try:
        Path(cfg["out_dir"]).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory: {exc}") from None
    jobs = [(i, s, cfg) for i, s in enumerate(scenarios)]
    workers = int(cfg.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            dirs = list(pool.map(_scenario_job, jobs))
    else:
        dirs = [_scenario_job(job) for job in jobs]
    for d in dirs:
        print(d)
    return 0


# --- process ------------------------------------------------------------------------

def cmd_process(args) -> int:
    cfg = merge(load_config(args.config), args,
                ["far", "mic", "out", "m", "window_frames", "epsilon", "attention",
                 "checkpoint", "filter_dump", "seed"])
    for key in ("far", "mic", "out"):
        if key not in cfg:
            raise UsageError(f"missing required setting {key!r}")
    m = int(cfg.get("m", 20))
    L = int(cfg.get("window_frames", 100))
    eps = float(cfg.get("epsilon", 1e-3))
    if m < 1 or L < 1 or eps < 0:
        raise UsageError("m and window-frames must be >= 1, epsilon >= 0")
    rate_far, far = read_wav(cfg["far"])
    rate_mic, mic = read_wav(cfg["mic"])
    if rate_far != rate_mic or rate_far != SAMPLE_RATE:
        raise UsageError(f"sample rates must both be {SAMPLE_RATE} Hz "
                         f"(far {rate_far}, mic {rate_mic})")
    if len(far) != len(mic):
        raise UsageError(f"far ({len(far)}) and mic ({len(mic)}) lengths differ")

    params = None
    attention = cfg.get("attention", "off")
    if isinstance(attention, bool):
        attention = "on" if attention else "off"
    if attention == "on":
        if cfg.get("checkpoint"):
            try:
                params = load_checkpoint(cfg["checkpoint"])
            except (OSError, CheckpointError) as exc:
                raise UsageError(f"bad checkpoint: {exc}") from None
            if params.m != m:
                raise UsageError(f"checkpoint was trained for m={params.m}, got --m {m}")
        else:
            params = AttentionParams.init(m, seed=int(cfg.get("seed", 17)))
    elif attention != "off":
        raise UsageError(f"--attention must be 'on' or 'off', got {attention!r}")

    spec, filt = stws_pipeline(far, mic, m=m, L=L, epsilon=eps, attention=params)
    write_wav(cfg["out"], istft(spec, len(mic)))
    if cfg.get("filter_dump"):
        norms = np.linalg.norm(filt.H, axis=-1).T
        np.savez(cfg["filter_dump"], filter_norm=norms, m=m, window_frames=L, epsilon=eps)
    return 0


# --- evaluate -----------------------------------------------------------------------

def _items_from_root(root: Path, processed: str):
    items = []
    for meta_path in sorted(root.glob("*/meta.json")):
        d = meta_path.parent
        with open(meta_path) as fh:
            meta = json.load(fh)
        items.append({"name": d.name, "near": d / "near.wav", "mic": d / "mic.wav",
                      "out": d / processed, "ser_db": meta["scenario"]["ser_db"]})
    return items


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    items = list(cfg.get("items", []))
    if args.root:
        items += _items_from_root(Path(args.root), args.processed)
    reports = []
    for item in items:
        for key in ("near", "mic", "out"):
            if key not in item:
                raise UsageError(f"item {item.get('name')!r} lacks {key!r}")
        _, near = read_wav(item["near"])
        _, mic = read_wav(item["mic"])
        _, out = read_wav(item["out"])
        n = min(len(near), len(mic), len(out))
        reports.append(metrics.evaluate(item.get("name", Path(item["out"]).stem),
                                        near[:n], mic[:n], out[:n], item.get("ser_db")))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_csv(reports, out_dir / "report.csv")
    metrics.write_json(reports, out_dir / "summary.json")
    for rep in reports:
        print(f"{rep.name}\t{rep.condition}\tSDR={rep.sdr_db}\tERLE={rep.erle_db}")
    return 0


# --- gradcheck -------------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    params = None
    if args.checkpoint:
        try:
            params = load_checkpoint(args.checkpoint)
        except (OSError, CheckpointError) as exc:
            print(f"FAIL: {exc}")
            return 1
    seeds = range(args.seed, args.seed + args.n_seeds)
    results = run_suite(seeds, params=params)
    worst = max(results, key=lambda r: r.max_error)
    for res in results:
        print(f"seed {res.seed}: max rel err {res.max_error:.3e} ({res.worst_tensor})")
    ok = worst.max_error <= TOLERANCE
    verdict = "PASS" if ok else f"FAIL (tensor {worst.worst_tensor!r})"
    print(f"max rel err {worst.max_error:.3e} <= {TOLERANCE:g}: {verdict}")
    return 0 if ok else 1


# --- entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wiener-aec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render synthetic echo scenarios to WAV")
    p.add_argument("--config")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-scenarios", dest="n_scenarios", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--ser-db", dest="ser_db", type=float, nargs="+")
    p.add_argument("--nonlinear-fraction", dest="nonlinear_fraction", type=float)
    p.add_argument("--single-talk", dest="single_talk", action="store_true", default=None)
    p.add_argument("--wav-format", dest="wav_format", choices=["float32", "pcm16"])
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("process", help="run the short-time Wiener canceller")
    p.add_argument("--config")
    p.add_argument("--far")
    p.add_argument("--mic")
    p.add_argument("--out")
    p.add_argument("--m", type=int)
    p.add_argument("--window-frames", dest="window_frames", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--attention", choices=["on", "off"])
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--filter-dump", dest="filter_dump")
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("evaluate", help="score processed files against references")
    p.add_argument("--config")
    p.add_argument("--root", help="directory produced by 'simulate'")
    p.add_argument("--processed", default="enhanced.wav",
                   help="processed file name inside each scenario directory")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of attention gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-seeds", dest="n_seeds", type=int, default=5)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
