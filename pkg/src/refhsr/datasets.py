"""Procedural training corpora and their on-disk layout.

Two corpus kinds exist:

* ``FlowCorpus`` — analytic pattern pairs related by a rigid sub-pixel shift,
  with the exact constant flow field as ground truth.  Used for the first
  alignment phase.
* ``SceneCorpus`` — layered hyperspectral micro-scenes with depth, each
  rendered from jittered viewpoints; carries everything the later phases
  need (degraded cube, reference views, ground-truth flow).

Both serialize to a directory with a ``manifest.json`` plus raw rasters, and
generation is bit-reproducible under a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from scipy import ndimage

from .augment import AugmentConfig
from .errors import DataError
from .pairs import make_pair
from .raster_io import load_cube, load_raster, save_cube, save_png, save_raster
from .scenes import pattern_rgb, random_scene
from .types import (DegradationConfig, DepthMap, FlowField, HsiCube, RgbImage,
                    SpectralResponse)

PathLike = Union[str, Path]

MANIFEST_NAME = "manifest.json"
CORPUS_FORMAT = 1


## ---------------------------------------------------------------------------
## corpus containers
## ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowPair:
    """``warp(ref, flow) == tgt`` up to noise; flow is constant (dx, dy)."""

    tgt: RgbImage
    ref: RgbImage
    flow: FlowField


@dataclass(frozen=True)
class SceneView:
    ref_rgb: RgbImage
    flow: FlowField


@dataclass(frozen=True)
class SceneSample:
    hr: HsiCube
    depth: DepthMap
    lr: HsiCube
    source_rgb: RgbImage   # clean RGB of the cube's own view (alignment target)
    target_rgb: RgbImage   # blurry upsampled RGB of the degraded cube
    views: Tuple[SceneView, ...]


@dataclass(frozen=True)
class FlowCorpus:
    kind = "flow"
    pairs: Tuple[FlowPair, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class SceneCorpus:
    kind = "scenes"
    scenes: Tuple[SceneSample, ...]
    scale: int
    seed: int

    def __len__(self) -> int:
        return len(self.scenes)


Corpus = Union[FlowCorpus, SceneCorpus]


## ---------------------------------------------------------------------------
## builders
## ---------------------------------------------------------------------------


def make_flow_corpus(
    n_pairs: int,
    height: int = 64,
    width: int = 64,
    *,
    seed: int = 0,
    max_shift: float = 5.0,
    noise_sigma: float = 0.01,
    blur_max_sigma: float = 0.8,
) -> FlowCorpus:
    """Rigid-shift pairs: tgt(p) = pattern(p + s), ref(p) = pattern(p).

    The target half is optionally blurred (half of the pairs) and both sides
    get light sensor noise, so the estimator has to cope with the slightly
    degraded inputs it sees downstream.
    """
    if n_pairs < 1:
        raise DataError("make_flow_corpus: n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        pat_seed = int(rng.integers(0, 2**31 - 1))
        dx, dy = rng.uniform(-max_shift, max_shift, size=2)
        ref = pattern_rgb(height, width, pat_seed)
        tgt = pattern_rgb(height, width, pat_seed, shift=(dx, dy))
        if blur_max_sigma > 0 and rng.random() < 0.5:
            sig = rng.uniform(0.3, blur_max_sigma)
            tgt = ndimage.gaussian_filter(tgt, (sig, sig, 0.0), mode="reflect")
        if noise_sigma > 0:
            ref = ref + rng.normal(0.0, noise_sigma, ref.shape)
            tgt = tgt + rng.normal(0.0, noise_sigma, tgt.shape)
        flow = np.broadcast_to(
            np.array([dx, dy], dtype=np.float64), (height, width, 2)
        ).copy()
        pairs.append(FlowPair(
            tgt=RgbImage(np.clip(tgt, 0.0, 1.0)),
            ref=RgbImage(np.clip(ref, 0.0, 1.0)),
            flow=FlowField(flow),
        ))
    return FlowCorpus(pairs=tuple(pairs), seed=seed)


def make_scene_corpus(
    n_scenes: int,
    height: int = 64,
    width: int = 64,
    *,
    bands: int = 8,
    scale: int = 4,
    views: int = 3,
    seed: int = 0,
    n_planes: int = 32,
    noise_sigma: float = 0.003,
    jitter: float = 0.02,
) -> SceneCorpus:
    """Layered scenes, each degraded once and rendered from ``views`` poses."""
    if n_scenes < 1 or views < 1:
        raise DataError("make_scene_corpus: need at least one scene and one view")
    rng = np.random.default_rng(seed)
    deg_cfg = DegradationConfig(scale=scale)
    scenes = []
    for _ in range(n_scenes):
        scene_seed = int(rng.integers(0, 2**31 - 1))
        hr, depth = random_scene(height, width, bands, scene_seed)
        srf = SpectralResponse.gaussian_rgb(hr.band_centers)
        aug_cfg = AugmentConfig(
            noise_sigma=noise_sigma,
            brightness=(1.0 - jitter, 1.0 + jitter),
            contrast=(1.0 - jitter, 1.0 + jitter),
            seed=scene_seed,
        )
        view_list = []
        first = None
        for _v in range(views):
            view_seed = int(rng.integers(0, 2**31 - 1))
            pair = make_pair(hr, depth, srf, deg_cfg, aug_cfg, view_seed,
                             n_planes=n_planes)
            if first is None:
                first = pair
            view_list.append(SceneView(ref_rgb=pair.ref_rgb, flow=pair.flow))
        scenes.append(SceneSample(
            hr=hr,
            depth=depth,
            lr=first.lr_cube,
            source_rgb=first.source_rgb,
            target_rgb=first.target_rgb,
            views=tuple(view_list),
        ))
    return SceneCorpus(scenes=tuple(scenes), scale=scale, seed=seed)


## ---------------------------------------------------------------------------
## disk layout
## ---------------------------------------------------------------------------


def _write_manifest(out_dir: Path, record: dict) -> None:
    text = json.dumps(record, sort_keys=True, indent=2) + "\n"
    (out_dir / MANIFEST_NAME).write_text(text)


def _read_manifest(root: Path) -> dict:
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"not a corpus directory (no {MANIFEST_NAME}): {root}")
    record = json.loads(path.read_text())
    if record.get("format") != CORPUS_FORMAT:
        raise DataError(f"unsupported corpus format {record.get('format')!r} in {path}")
    return record


def save_flow_corpus(corpus: FlowCorpus, out_dir: PathLike) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, pair in enumerate(corpus.pairs):
        pair_dir = out_dir / f"pair_{i:04d}"
        pair_dir.mkdir(exist_ok=True)
        save_raster(pair.tgt.data, pair_dir / "tgt.f32")
        save_raster(pair.ref.data, pair_dir / "ref.f32")
        save_raster(pair.flow.data, pair_dir / "flow.f32")
    h, w, _ = corpus.pairs[0].tgt.shape
    _write_manifest(out_dir, {
        "format": CORPUS_FORMAT, "kind": corpus.kind, "pairs": len(corpus),
        "height": h, "width": w, "seed": corpus.seed,
    })
    return out_dir


def save_scene_corpus(corpus: SceneCorpus, out_dir: PathLike) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(corpus.scenes):
        scene_dir = out_dir / f"scene_{i:03d}"
        scene_dir.mkdir(exist_ok=True)
        save_cube(scene.hr, scene_dir / "source.hsi")
        save_cube(scene.lr, scene_dir / "lr.hsi")
        save_raster(scene.depth.data[..., None], scene_dir / "depth.f32")
        save_raster(scene.source_rgb.data, scene_dir / "source_rgb.f32")
        save_raster(scene.target_rgb.data, scene_dir / "target_rgb.f32")
        save_png(scene.target_rgb, scene_dir / "target_rgb.png")
        for v, view in enumerate(scene.views):
            view_dir = scene_dir / f"view_{v:02d}"
            view_dir.mkdir(exist_ok=True)
            save_raster(view.ref_rgb.data, view_dir / "ref_rgb.f32")
            save_png(view.ref_rgb, view_dir / "ref_rgb.png")
            save_raster(view.flow.data, view_dir / "flow.f32")
    h, w, b = corpus.scenes[0].hr.shape
    _write_manifest(out_dir, {
        "format": CORPUS_FORMAT, "kind": corpus.kind, "scenes": len(corpus),
        "views": len(corpus.scenes[0].views), "height": h, "width": w,
        "bands": b, "scale": corpus.scale, "seed": corpus.seed,
    })
    return out_dir


def save_corpus(corpus: Corpus, out_dir: PathLike) -> Path:
    if isinstance(corpus, FlowCorpus):
        return save_flow_corpus(corpus, out_dir)
    return save_scene_corpus(corpus, out_dir)


def load_corpus(root: PathLike) -> Corpus:
    """Read a corpus directory back; dispatches on the manifest ``kind``."""
    root = Path(root)
    record = _read_manifest(root)
    kind = record.get("kind")
    if kind == "flow":
        pairs = []
        for i in range(int(record["pairs"])):
            pair_dir = root / f"pair_{i:04d}"
            pairs.append(FlowPair(
                tgt=RgbImage(load_raster(pair_dir / "tgt.f32")),
                ref=RgbImage(load_raster(pair_dir / "ref.f32")),
                flow=FlowField(load_raster(pair_dir / "flow.f32")),
            ))
        return FlowCorpus(pairs=tuple(pairs), seed=int(record["seed"]))
    if kind == "scenes":
        scenes = []
        for i in range(int(record["scenes"])):
            scene_dir = root / f"scene_{i:03d}"
            views = []
            for v in range(int(record["views"])):
                view_dir = scene_dir / f"view_{v:02d}"
                views.append(SceneView(
                    ref_rgb=RgbImage(load_raster(view_dir / "ref_rgb.f32")),
                    flow=FlowField(load_raster(view_dir / "flow.f32")),
                ))
            scenes.append(SceneSample(
                hr=load_cube(scene_dir / "source.hsi"),
                depth=DepthMap(load_raster(scene_dir / "depth.f32")[..., 0]),
                lr=load_cube(scene_dir / "lr.hsi"),
                source_rgb=RgbImage(load_raster(scene_dir / "source_rgb.f32")),
                target_rgb=RgbImage(load_raster(scene_dir / "target_rgb.f32")),
                views=tuple(views),
            ))
        return SceneCorpus(scenes=tuple(scenes), scale=int(record["scale"]),
                           seed=int(record["seed"]))
    raise DataError(f"unknown corpus kind {kind!r} in {root}")
