"""Command-line entry point.

Subcommands cover the whole experiment loop: ``gen`` (synthetic corpora),
``train-flow`` / ``train-warpnet`` / ``train-sr`` (the gated phases),
``eval`` (reports), ``infer`` (single-scene prediction), ``plot`` (figures
from saved reports), and ``selftest`` (invariant suite).

Exit codes: 0 success, 2 usage/config problem, 3 data or phase-order
problem, 4 selftest violations.  Failures print one machine-readable JSON
record to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .config import TrainConfig, load_config
from .datasets import load_corpus, make_flow_corpus, make_scene_corpus, save_corpus
from .errors import (ConfigError, DataError, DivergenceError, PhaseOrderError,
                     RefHsrError, ShapeError, SingularMappingError)
from .evaluation import evaluate_sr, infer_scene
from .ops import srf_convert
from .raster_io import load_raster, save_cube, save_png, save_raster
from .selftest import run_selftest
from .training import (load_system, train_phase1_flow, train_phase1_warpnet,
                       train_phase2_sr)
from .types import SpectralResponse

ENV_OUT = "REFHSR_OUT"

USAGE_EXIT = 2
DATA_EXIT = 3
SELFTEST_EXIT = 4


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def _resolve_out(arg_out: Optional[str], default_name: str) -> Path:
    if arg_out:
        return Path(arg_out)
    root = os.environ.get(ENV_OUT)
    if root:
        return Path(root) / default_name
    raise ConfigError(f"--out is required (or set ${ENV_OUT})")


def _load_train_config(args, expected_phase: str) -> TrainConfig:
    cfg = load_config(args.config)
    if cfg.phase != expected_phase:
        raise ConfigError(
            f"config at {args.config} has phase={cfg.phase!r}; this subcommand "
            f"trains phase {expected_phase!r}")
    overrides = {}
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return cfg.replace(**overrides) if overrides else cfg


## ---------------------------------------------------------------------------
## subcommand handlers
## ---------------------------------------------------------------------------


def _cmd_gen(args) -> int:
    out = _resolve_out(args.out, "dataset")
    if args.kind == "scenes":
        corpus = make_scene_corpus(
            args.scenes, args.size, args.size, bands=args.bands,
            scale=args.scale, views=args.views, seed=args.seed)
        save_corpus(corpus, out)
        _emit({"out": str(out), "kind": "scenes", "scenes": len(corpus),
               "views": args.views, "size": args.size, "bands": args.bands,
               "scale": args.scale, "seed": args.seed})
    else:
        corpus = make_flow_corpus(
            args.pairs, args.size, args.size, seed=args.seed,
            max_shift=args.max_shift)
        save_corpus(corpus, out)
        _emit({"out": str(out), "kind": "shifts", "pairs": len(corpus),
               "size": args.size, "max_shift": args.max_shift,
               "seed": args.seed})
    return 0


def _cmd_train_flow(args) -> int:
    cfg = _load_train_config(args, "flow")
    corpus = load_corpus(args.data)
    out = _resolve_out(args.out, "flow_ckpt")
    result = train_phase1_flow(corpus, cfg, out, resume=args.resume)
    _emit(dict(result.history[-1], out=str(out)))
    return 0


def _cmd_train_warpnet(args) -> int:
    cfg = _load_train_config(args, "warpnet")
    corpus = load_corpus(args.data)
    out = _resolve_out(args.out, "warp_ckpt")
    result = train_phase1_warpnet(corpus, args.flow_ckpt, cfg, out,
                                  resume=args.resume)
    _emit(dict(result.history[-1], out=str(out)))
    return 0


def _cmd_train_sr(args) -> int:
    cfg = _load_train_config(args, "sr")
    corpus = load_corpus(args.data)
    out = _resolve_out(args.out, "sr_ckpt")
    result = train_phase2_sr(
        corpus, cfg, out, flow_ckpt=args.flow_ckpt,
        warpnet_ckpt=args.warpnet_ckpt, from_scratch=args.from_scratch,
        resume=args.resume)
    _emit(dict(result.history[-1], out=str(out)))
    return 0


def _cmd_eval(args) -> int:
    corpus = load_corpus(args.data)
    out = _resolve_out(args.out, "eval")
    if args.ckpt:
        cfg, system = load_system(args.ckpt)
        scale = cfg.scale
    else:
        system = None
        scale = getattr(corpus, "scale", None)
        if scale is None:
            raise DataError("baseline evaluation needs a scene corpus")
    report = evaluate_sr(system, corpus, scale, out_dir=out)
    summary = {"out": str(out), "bicubic": report["bicubic"]}
    if "model" in report:
        summary["model"] = report["model"]
        summary["gain"] = report["gain"]
    _emit(summary)
    return 0


def _cmd_infer(args) -> int:
    corpus = load_corpus(args.data)
    cfg, system = load_system(args.ckpt)
    out = _resolve_out(args.out, "infer")
    out.mkdir(parents=True, exist_ok=True)
    cube = infer_scene(system, corpus, cfg.scale, args.scene, args.view)
    save_cube(cube, out / "sr.hsi")
    srf = SpectralResponse.gaussian_rgb(cube.band_centers)
    save_png(srf_convert(cube, srf), out / "sr_rgb.png")
    scene = corpus.scenes[args.scene]
    if system.aligned:
        import torch

        to_t = lambda a: torch.from_numpy(
            np.ascontiguousarray(a, dtype=np.float32)).permute(2, 0, 1)[None]
        with torch.no_grad():
            flow = system.flow(to_t(scene.views[args.view].ref_rgb.data),
                               to_t(scene.target_rgb.data))[-1]
        save_raster(flow[0].permute(1, 2, 0).numpy(), out / "flow.f32")
    _emit({"out": str(out), "scene": args.scene, "view": args.view})
    return 0


def _cmd_plot(args) -> int:
    from . import plots

    out = _resolve_out(args.out, "plots")
    out.mkdir(parents=True, exist_ok=True)

    if args.kind == "flow-viz":
        if not args.flow:
            raise ConfigError("plot --kind flow-viz needs --flow <raster.f32>")
        flow = load_raster(args.flow)
        dest = out / "flow_viz.png"
        plots.plot_flow(flow, dest)
        _emit({"out": str(dest)})
        return 0

    if not args.report:
        raise ConfigError(f"plot --kind {args.kind} needs --report <report.json>")
    report_path = Path(args.report)
    if not report_path.is_file():
        raise DataError(f"report not found: {report_path}")
    report = json.loads(report_path.read_text())

    if args.kind in ("band-psnr", "band-ssim"):
        key = args.kind.split("-")[1]
        series = report.get("per_band", {})
        if key not in series:
            raise DataError(f"report has no model per-band {key} series")
        dest = out / f"{args.kind}.png"
        plots.plot_band_curve(series[key], dest, ylabel=key.upper(),
                              baseline=series.get(f"bicubic_{key}"),
                              band_centers=report.get("band_centers"))
    elif args.kind == "spectral-curve":
        entry = _scene_entry(report, args.scene)
        curves = {name.replace("mean_spectrum_", ""): entry[name]
                  for name in ("mean_spectrum_gt", "mean_spectrum_model",
                               "mean_spectrum_bicubic") if name in entry}
        if "model" not in curves:
            raise DataError("report has no model spectra (baseline-only run?)")
        dest = out / f"spectral_scene_{args.scene:03d}.png"
        plots.plot_spectral_curves(curves, dest,
                                   band_centers=report.get("band_centers"))
    elif args.kind == "error-map":
        entry = _scene_entry(report, args.scene)
        name = entry.get("error_map")
        if not name:
            raise DataError(f"report has no error map for scene {args.scene}")
        err = load_raster(report_path.parent / name)
        dest = out / f"error_scene_{args.scene:03d}.png"
        plots.plot_error_map(err, dest, title=f"scene {args.scene} abs error")
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown plot kind {args.kind!r}")
    _emit({"out": str(dest)})
    return 0


def _scene_entry(report: dict, scene: int) -> dict:
    for entry in report.get("per_scene", []):
        if entry.get("scene") == scene:
            return entry
    raise DataError(f"report has no scene {scene}")


def _cmd_selftest(args) -> int:
    failures = run_selftest(verbose=args.verbose)
    return SELFTEST_EXIT if failures else 0


## ---------------------------------------------------------------------------
## parser
## ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refhsr",
        description="RGB-guided hyperspectral super-resolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--kind", choices=("scenes", "shifts"), default="scenes")
    p.add_argument("--scenes", type=int, default=8)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--pairs", type=int, default=500)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--bands", type=int, default=8)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--max-shift", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_gen)

    for name, handler, extra in (
        ("train-flow", _cmd_train_flow, ()),
        ("train-warpnet", _cmd_train_warpnet, ("--flow-ckpt",)),
        ("train-sr", _cmd_train_sr, ("--flow-ckpt", "--warpnet-ckpt")),
    ):
        p = sub.add_parser(name, help=f"run {name.replace('-', ' ')} training")
        p.add_argument("--data", required=True)
        p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--resume", action="store_true")
        p.add_argument("--epochs", type=int, default=None,
                       help="override the config epoch count")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        for flag in extra:
            p.add_argument(flag, default=None)
        if name == "train-sr":
            p.add_argument("--from-scratch", action="store_true",
                           help="train without alignment checkpoints")
        p.set_defaults(handler=handler)

    p = sub.add_parser("eval", help="score a checkpoint against a corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", default=None,
                   help="phase-2 checkpoint; omit for the bicubic baseline only")
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("infer", help="super-resolve one scene")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", type=int, default=0)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_infer)

    p = sub.add_parser("plot", help="render figures from a saved report")
    p.add_argument("--kind", required=True,
                   choices=("error-map", "band-psnr", "band-ssim",
                            "spectral-curve", "flow-viz"))
    p.add_argument("--report", default=None)
    p.add_argument("--flow", default=None)
    p.add_argument("--scene", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_plot)

    p = sub.add_parser("selftest", help="run the built-in invariant suite")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(handler=_cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else USAGE_EXIT
    try:
        return args.handler(args)
    except ConfigError as exc:
        _error_record(exc)
        return USAGE_EXIT
    except (DataError, ShapeError, SingularMappingError, PhaseOrderError,
            DivergenceError) as exc:
        _error_record(exc)
        return DATA_EXIT
    except OSError as exc:
        _error_record(exc)
        return DATA_EXIT
    except RefHsrError as exc:
        _error_record(exc)
        return DATA_EXIT


def _error_record(exc: Exception) -> None:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)},
                     sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
