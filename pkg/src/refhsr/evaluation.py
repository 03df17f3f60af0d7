"""Evaluation reports: aggregate metrics, per-band curves, error maps.

``report.json`` is the source of truth for every number we publish; plots
are rendered from it afterwards.  A bicubic baseline is always computed
alongside the model so gains are never quoted against a missing reference.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import torch

from .datasets import Corpus, SceneCorpus
from .errors import DataError
from .metrics import psnr, sam, ssim
from .ops import upsample
from .raster_io import save_raster
from .sr_model import SrSystem
from .types import HsiCube

PathLike = Union[str, Path]

REPORT_NAME = "report.json"


def metric_summary(pred: np.ndarray, gt: np.ndarray) -> Dict[str, float]:
    """The three headline metrics, band-averaged, as a plain dict."""
    return {
        "psnr": psnr(pred, gt),
        "ssim": ssim(pred, gt),
        "sam": sam(pred, gt),
    }


def per_band_metrics(pred: np.ndarray, gt: np.ndarray) -> Dict[str, List[float]]:
    bands = gt.shape[2]
    return {
        "psnr": [psnr(pred[..., b:b + 1], gt[..., b:b + 1]) for b in range(bands)],
        "ssim": [ssim(pred[..., b:b + 1], gt[..., b:b + 1]) for b in range(bands)],
    }


def _to_chw(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(
        np.ascontiguousarray(arr, dtype=np.float32)
    ).permute(2, 0, 1)[None]


def _predict(system: SrSystem, scene, scale: int, view_index: int) -> np.ndarray:
    lr_up = _to_chw(upsample(scene.lr, scale).data)
    tgt = _to_chw(scene.target_rgb.data)
    ref = _to_chw(scene.views[view_index].ref_rgb.data)
    with torch.no_grad():
        out = system(lr_up, tgt, ref)
    return np.clip(out[0].permute(1, 2, 0).numpy().astype(np.float64), 0.0, 1.0)


def evaluate_sr(
    system: Optional[SrSystem],
    corpus: Corpus,
    scale: int,
    *,
    out_dir: Optional[PathLike] = None,
) -> dict:
    """Score ``system`` (and the bicubic baseline) over a scene corpus.

    With ``system=None`` only the baseline is reported.  When ``out_dir`` is
    given, per-scene absolute-error maps are written as ``.f32`` rasters and
    the report itself is saved as ``report.json``.
    """
    if not isinstance(corpus, SceneCorpus):
        raise DataError("evaluation needs a rendered scene corpus")
    if corpus.scale != scale:
        raise DataError(f"corpus was degraded at x{corpus.scale}, requested x{scale}")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    per_scene = []
    band_accum: Dict[str, List[np.ndarray]] = {
        "psnr": [], "ssim": [], "bicubic_psnr": [], "bicubic_ssim": []}
    error_maps = []
    bands = corpus.scenes[0].hr.shape[2]

    for i, scene in enumerate(corpus.scenes):
        gt = scene.hr.data.astype(np.float64)
        bic = upsample(scene.lr, scale).data.astype(np.float64)
        entry: dict = {"scene": i, "bicubic": metric_summary(bic, gt)}
        bic_bands = per_band_metrics(bic, gt)
        band_accum["bicubic_psnr"].append(np.asarray(bic_bands["psnr"]))
        band_accum["bicubic_ssim"].append(np.asarray(bic_bands["ssim"]))
        entry["mean_spectrum_gt"] = gt.mean(axis=(0, 1)).tolist()
        entry["mean_spectrum_bicubic"] = bic.mean(axis=(0, 1)).tolist()

        if system is not None:
            views = [_predict(system, scene, scale, v)
                     for v in range(len(scene.views))]
            scores = [metric_summary(p, gt) for p in views]
            entry["model"] = {k: float(np.mean([s[k] for s in scores]))
                              for k in ("psnr", "ssim", "sam")}
            model_bands = per_band_metrics(views[0], gt)
            band_accum["psnr"].append(np.asarray(model_bands["psnr"]))
            band_accum["ssim"].append(np.asarray(model_bands["ssim"]))
            entry["mean_spectrum_model"] = views[0].mean(axis=(0, 1)).tolist()
            if out_dir is not None:
                err = np.abs(views[0] - gt).mean(axis=2)[..., None]
                name = f"error_scene_{i:03d}.f32"
                save_raster(err, out_dir / name)
                entry["error_map"] = name
                error_maps.append(name)
        per_scene.append(entry)

    def _mean(key_outer: str, key_inner: str) -> float:
        return float(np.mean([s[key_outer][key_inner] for s in per_scene]))

    centers = corpus.scenes[0].hr.band_centers
    report: dict = {
        "scale": scale,
        "bands": bands,
        "band_centers": list(centers) if centers is not None else None,
        "n_scenes": len(corpus.scenes),
        "bicubic": {k: _mean("bicubic", k) for k in ("psnr", "ssim", "sam")},
        "per_band": {
            "bicubic_psnr": np.mean(band_accum["bicubic_psnr"], axis=0).tolist(),
            "bicubic_ssim": np.mean(band_accum["bicubic_ssim"], axis=0).tolist(),
        },
        "per_scene": per_scene,
        "error_maps": error_maps,
    }
    if system is not None:
        report["model"] = {k: _mean("model", k) for k in ("psnr", "ssim", "sam")}
        report["per_band"]["psnr"] = np.mean(band_accum["psnr"], axis=0).tolist()
        report["per_band"]["ssim"] = np.mean(band_accum["ssim"], axis=0).tolist()
        report["gain"] = {
            "psnr_db": report["model"]["psnr"] - report["bicubic"]["psnr"],
            "sam_rel": (report["bicubic"]["sam"] - report["model"]["sam"])
                       / max(report["bicubic"]["sam"], 1e-12),
        }
    if out_dir is not None:
        (out_dir / REPORT_NAME).write_text(
            json.dumps(report, sort_keys=True, indent=2) + "\n")
    return report


def infer_scene(system: SrSystem, corpus: SceneCorpus, scale: int,
                scene_index: int, view_index: int = 0) -> HsiCube:
    """Super-resolve one scene/view; returns the predicted cube."""
    if not isinstance(corpus, SceneCorpus):
        raise DataError("inference needs a rendered scene corpus")
    if not (0 <= scene_index < len(corpus.scenes)):
        raise DataError(f"scene index {scene_index} out of range")
    scene = corpus.scenes[scene_index]
    if not (0 <= view_index < len(scene.views)):
        raise DataError(f"view index {view_index} out of range")
    pred = _predict(system, scene, scale, view_index)
    return HsiCube(pred.astype(np.float32), scene.hr.band_centers)
