"""The three training phases: flow alignment, warp refinement, fusion.

Phases are gated: warp-net training requires a flow checkpoint, and the
fusion phase requires both alignment checkpoints unless explicitly started
from scratch.  Every trainer

* is bit-reproducible under a fixed seed (model init, data order, noise),
* appends one JSON line per epoch to ``train_log.jsonl``,
* checkpoints after every epoch (model + optimizer + RNG states), so an
  interrupted run resumes exactly where it stopped,
* raises :class:`DivergenceError` the moment a loss stops being finite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from .checkpoints import (Checkpoint, check_fingerprint, checkpoint_exists,
                          config_from_manifest, load_checkpoint, require_phase,
                          restore_rng, save_checkpoint)
from .config import TrainConfig
from .datasets import Corpus, FlowCorpus, SceneCorpus
from .encoders import EncoderConfig
from .errors import ConfigError, DataError, DivergenceError, PhaseOrderError
from .flow_net import FlowEstimator, FlowEstimatorConfig, flow_loss, flow_metrics
from .metrics import psnr
from .ops import upsample
from .aggregation import IdfaConfig
from .sr_model import SrModelConfig, SrSystem, SuperResolutionNet
from .warp import warp_tensor
from .warp_net import WarpNet

PathLike = Union[str, Path]

LOG_NAME = "train_log.jsonl"

_FLOW_ARCH_FIELDS = ("flow_levels", "flow_radius", "flow_iters", "flow_channels")
_WARP_ARCH_FIELDS = ("warp_base",)


@dataclass(frozen=True)
class TrainResult:
    checkpoint: Checkpoint
    history: Tuple[dict, ...]
    log_path: Path


## ---------------------------------------------------------------------------
## model factories
## ---------------------------------------------------------------------------


def build_flow(cfg: TrainConfig) -> FlowEstimator:
    return FlowEstimator(FlowEstimatorConfig(
        pyramid_levels=cfg.flow_levels,
        correlation_radius=cfg.flow_radius,
        refinement_iters=cfg.flow_iters,
        feature_channels=cfg.flow_channels,
    ))


def build_warpnet(cfg: TrainConfig) -> WarpNet:
    return WarpNet(base=cfg.warp_base)


def build_sr(cfg: TrainConfig) -> SuperResolutionNet:
    return SuperResolutionNet(SrModelConfig(
        bands=cfg.bands,
        encoder=EncoderConfig(levels=cfg.levels, base_channels=cfg.base_channels),
        heads=cfg.heads,
        blocks_per_stage=cfg.blocks,
        idfa=IdfaConfig(kernel_size=cfg.idfa_kernel, max_offset=cfg.idfa_max_offset),
        match_patch=cfg.match_patch,
        interaction=cfg.interaction,
    ))


def build_system(cfg: TrainConfig) -> SrSystem:
    """Construct the full model; construction order is fixed for seeding."""
    flow = build_flow(cfg) if cfg.use_alignment else None
    warp = build_warpnet(cfg) if cfg.use_alignment else None
    return SrSystem(build_sr(cfg), flow, warp)


def load_system(ckpt_dir: PathLike) -> Tuple[TrainConfig, SrSystem]:
    """Rebuild an inference-ready system from a phase-2 checkpoint."""
    payload, manifest = require_phase(ckpt_dir, "sr")
    cfg = config_from_manifest(manifest)
    system = build_system(cfg)
    system.sr.load_state_dict(payload["models"]["sr"])
    if system.aligned:
        system.flow.load_state_dict(payload["models"]["flow"])
        system.warp.load_state_dict(payload["models"]["warpnet"])
    system.eval()
    return cfg, system


## ---------------------------------------------------------------------------
## shared plumbing
## ---------------------------------------------------------------------------


def _to_chw(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(
        np.ascontiguousarray(arr, dtype=np.float32)
    ).permute(2, 0, 1)


def _stack(arrs: Sequence[np.ndarray]) -> torch.Tensor:
    return torch.stack([_to_chw(a) for a in arrs])


def _dihedral(x: torch.Tensor, t: int) -> torch.Tensor:
    """One of the 8 axis-aligned flips/rotations of a (B, C, H, W) tensor."""
    if x.shape[-1] != x.shape[-2]:
        t &= ~1  # odd quarter-turns would change the shape
    if t >= 4:
        x = torch.flip(x, dims=(3,))
    if t % 4:
        x = torch.rot90(x, t % 4, dims=(2, 3))
    return x


def _split_indices(n: int, val_fraction: float) -> Tuple[List[int], List[int]]:
    """Deterministic tail split; a single sample validates on itself."""
    if n == 1:
        return [0], [0]
    n_val = min(max(1, int(round(n * val_fraction))), n - 1)
    idx = list(range(n))
    return idx[:-n_val], idx[-n_val:]


def _append_log(path: Path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _finite_or_raise(loss: torch.Tensor, phase: str, step: int) -> None:
    if not bool(torch.isfinite(loss)):
        raise DivergenceError(f"{phase} training: non-finite loss at step {step}")


def _params_finite_or_raise(params: Sequence[torch.Tensor], phase: str,
                            step: int) -> None:
    # catch blow-ups at the update that caused them; otherwise the next
    # forward pass fails somewhere deep inside with an unhelpful error
    for p in params:
        if not bool(torch.isfinite(p).all()):
            raise DivergenceError(
                f"{phase} training: parameters diverged at step {step}")


def _check_arch(manifest_cfg: TrainConfig, cfg: TrainConfig, fields: Sequence[str],
                what: str) -> None:
    for name in fields:
        a, b = getattr(manifest_cfg, name), getattr(cfg, name)
        if a != b:
            raise ConfigError(
                f"{what} checkpoint was trained with {name}={a}, config says {b}"
            )


def _try_resume(out_dir: Path, cfg: TrainConfig, modules: Dict[str, nn.Module],
                optimizer: torch.optim.Optimizer,
                rng: np.random.Generator) -> Tuple[int, int, List[dict]]:
    """Restore state from ``out_dir``; returns (epoch, step, history-so-far)."""
    if not checkpoint_exists(out_dir):
        raise DataError(f"cannot resume: no checkpoint at {out_dir}")
    payload, manifest = load_checkpoint(out_dir)
    if manifest["phase"] != cfg.phase:
        raise PhaseOrderError(
            f"cannot resume {cfg.phase!r} training from a {manifest['phase']!r} "
            f"checkpoint at {out_dir}"
        )
    check_fingerprint(manifest, cfg)
    for name, module in modules.items():
        module.load_state_dict(payload["models"][name])
    if payload.get("optimizer") is not None:
        optimizer.load_state_dict(payload["optimizer"])
    restore_rng(payload, rng)
    return int(manifest["epoch"]), int(manifest["step"]), [dict(manifest["metrics"])]


def _flow_training_pairs(corpus: Corpus):
    """(tgt, ref, flow) triples as float arrays; both corpus kinds qualify."""
    if isinstance(corpus, FlowCorpus):
        return [(p.tgt.data, p.ref.data, p.flow.data) for p in corpus.pairs]
    if isinstance(corpus, SceneCorpus):
        return [(s.target_rgb.data, v.ref_rgb.data, v.flow.data)
                for s in corpus.scenes for v in s.views]
    raise DataError("flow training needs a corpus with ground-truth flow")


def _require_scenes(corpus: Corpus, phase: str) -> SceneCorpus:
    if not isinstance(corpus, SceneCorpus):
        raise DataError(f"{phase} training needs a rendered scene corpus, "
                        f"got kind {getattr(corpus, 'kind', '?')!r}")
    return corpus


## ---------------------------------------------------------------------------
## phase 1a: flow estimator
## ---------------------------------------------------------------------------


def train_phase1_flow(corpus: Corpus, cfg: TrainConfig, out_dir: PathLike,
                      *, resume: bool = False) -> TrainResult:
    if cfg.phase != "flow":
        raise ConfigError(f"train_phase1_flow called with phase={cfg.phase!r}")
    samples = _flow_training_pairs(corpus)
    train_idx, val_idx = _split_indices(len(samples), cfg.val_fraction)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / LOG_NAME

    torch.manual_seed(cfg.seed)
    model = build_flow(cfg)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate,
                                  weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    start_epoch, step = 0, 0
    history: List[dict] = []
    if resume:
        start_epoch, step, history = _try_resume(
            out_dir, cfg, {"flow": model}, optimizer, rng)

    checkpoint = None
    for epoch in range(start_epoch, cfg.epochs):
        model.train()
        order = rng.permutation(train_idx)
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = [samples[j] for j in order[lo:lo + cfg.batch_size]]
            tgt = _stack([b[0] for b in batch])
            ref = _stack([b[1] for b in batch])
            gt = _stack([b[2] for b in batch])
            preds = model(ref, tgt)
            loss = flow_loss(preds, gt)
            _finite_or_raise(loss, "flow", step)
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            step += 1
            _params_finite_or_raise(list(model.parameters()), cfg.phase, step)
            losses.append(float(loss.detach()))

        model.eval()
        epes, f1s = [], []
        with torch.no_grad():
            for j in val_idx:
                tgt, ref, gt = samples[j]
                pred = model(_stack([ref]), _stack([tgt]))[-1]
                m = flow_metrics(pred[0].permute(1, 2, 0).numpy(), gt)
                epes.append(m["epe"])
                f1s.append(m["f1"])
        record = {"phase": "flow", "epoch": epoch + 1, "step": step,
                  "loss": float(np.mean(losses)),
                  "epe": float(np.mean(epes)), "f1": float(np.mean(f1s))}
        history.append(record)
        _append_log(log_path, record)
        checkpoint = save_checkpoint(
            out_dir, phase="flow", config=cfg,
            models={"flow": model.state_dict()},
            optimizer_state=optimizer.state_dict(), numpy_rng=rng,
            epoch=epoch + 1, step=step, metrics=record)

    if checkpoint is None:  # resume found nothing left to do
        _, manifest = load_checkpoint(out_dir)
        checkpoint = Checkpoint(path=out_dir, manifest=manifest)
    return TrainResult(checkpoint, tuple(history), log_path)


## ---------------------------------------------------------------------------
## phase 1b: warp refinement, flow frozen
## ---------------------------------------------------------------------------


def train_phase1_warpnet(corpus: Corpus, flow_ckpt: PathLike, cfg: TrainConfig,
                         out_dir: PathLike, *, resume: bool = False) -> TrainResult:
    if cfg.phase != "warpnet":
        raise ConfigError(f"train_phase1_warpnet called with phase={cfg.phase!r}")
    scenes = _require_scenes(corpus, "warp refinement")

    payload_f, manifest_f = require_phase(flow_ckpt, "flow")
    _check_arch(config_from_manifest(manifest_f), cfg, _FLOW_ARCH_FIELDS, "flow")
    flow_model = build_flow(cfg)
    flow_model.load_state_dict(payload_f["models"]["flow"])
    flow_model.eval()
    flow_model.requires_grad_(False)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / LOG_NAME

    # the frozen flow makes the coarse warp a fixed preprocessing step
    coarse_list, tgt_list, src_list = [], [], []
    with torch.no_grad():
        for scene in scenes.scenes:
            tgt = _stack([scene.target_rgb.data])
            src = _stack([scene.source_rgb.data])
            for view in scene.views:
                ref = _stack([view.ref_rgb.data])
                flow = flow_model(ref, tgt)[-1]
                coarse_list.append(warp_tensor(ref, flow, "border")[0])
                tgt_list.append(tgt[0])
                src_list.append(src[0])
    n = len(coarse_list)
    train_idx, val_idx = _split_indices(n, cfg.val_fraction)

    torch.manual_seed(cfg.seed)
    model = build_warpnet(cfg)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate,
                                  weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    start_epoch, step = 0, 0
    history: List[dict] = []
    if resume:
        start_epoch, step, history = _try_resume(
            out_dir, cfg, {"warpnet": model}, optimizer, rng)

    def _psnr(t: torch.Tensor, s: torch.Tensor) -> float:
        return psnr(np.clip(t.permute(1, 2, 0).numpy(), 0, 1).astype(np.float64),
                    s.permute(1, 2, 0).numpy().astype(np.float64))

    psnr_coarse = float(np.mean([_psnr(coarse_list[j], src_list[j]) for j in val_idx]))

    checkpoint = None
    for epoch in range(start_epoch, cfg.epochs):
        model.train()
        order = rng.permutation(train_idx)
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            coarse = torch.stack([coarse_list[j] for j in idx])
            tgt = torch.stack([tgt_list[j] for j in idx])
            src = torch.stack([src_list[j] for j in idx])
            refined = model(coarse, tgt)
            loss = torch.mean(torch.abs(refined - src))
            _finite_or_raise(loss, "warpnet", step)
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            step += 1
            _params_finite_or_raise(list(model.parameters()), cfg.phase, step)
            losses.append(float(loss.detach()))

        model.eval()
        with torch.no_grad():
            gains = [_psnr(model(coarse_list[j][None], tgt_list[j][None])[0].detach(),
                           src_list[j]) for j in val_idx]
        record = {"phase": "warpnet", "epoch": epoch + 1, "step": step,
                  "loss": float(np.mean(losses)),
                  "psnr_coarse": psnr_coarse,
                  "psnr_refined": float(np.mean(gains)),
                  "gain_db": float(np.mean(gains)) - psnr_coarse}
        history.append(record)
        _append_log(log_path, record)
        checkpoint = save_checkpoint(
            out_dir, phase="warpnet", config=cfg,
            models={"warpnet": model.state_dict()},
            optimizer_state=optimizer.state_dict(), numpy_rng=rng,
            epoch=epoch + 1, step=step, metrics=record,
            upstream={"flow": manifest_f["fingerprint"]})

    if checkpoint is None:
        _, manifest = load_checkpoint(out_dir)
        checkpoint = Checkpoint(path=out_dir, manifest=manifest)
    return TrainResult(checkpoint, tuple(history), log_path)


## ---------------------------------------------------------------------------
## phase 2: full fusion network
## ---------------------------------------------------------------------------


def train_phase2_sr(corpus: Corpus, cfg: TrainConfig, out_dir: PathLike,
                    *, flow_ckpt: Optional[PathLike] = None,
                    warpnet_ckpt: Optional[PathLike] = None,
                    from_scratch: bool = False,
                    resume: bool = False) -> TrainResult:
    if cfg.phase != "sr":
        raise ConfigError(f"train_phase2_sr called with phase={cfg.phase!r}")
    scenes = _require_scenes(corpus, "super-resolution")
    if scenes.scale != cfg.scale:
        raise DataError(f"corpus was degraded at x{scenes.scale}, config says "
                        f"x{cfg.scale}")

    upstream = {}
    payload_f = payload_w = None
    if cfg.use_alignment and not from_scratch:
        if flow_ckpt is None or warpnet_ckpt is None:
            raise PhaseOrderError(
                "phase-2 training needs both alignment checkpoints; pass "
                "from_scratch=True to start without them")
        payload_f, manifest_f = require_phase(flow_ckpt, "flow")
        payload_w, manifest_w = require_phase(warpnet_ckpt, "warpnet")
        _check_arch(config_from_manifest(manifest_f), cfg, _FLOW_ARCH_FIELDS, "flow")
        _check_arch(config_from_manifest(manifest_w), cfg, _WARP_ARCH_FIELDS, "warpnet")
        upstream = {"flow": manifest_f["fingerprint"],
                    "warpnet": manifest_w["fingerprint"]}

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / LOG_NAME

    torch.manual_seed(cfg.seed)
    system = build_system(cfg)
    if payload_f is not None:
        system.flow.load_state_dict(payload_f["models"]["flow"])
        system.warp.load_state_dict(payload_w["models"]["warpnet"])
    if system.aligned and not cfg.fine_tune_alignment:
        system.flow.requires_grad_(False)
        system.warp.requires_grad_(False)
        system.flow.eval()
        system.warp.eval()

    trainable = [p for p in system.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(trainable, lr=cfg.learning_rate,
                                  weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)

    # flat (scene, view) sample list with per-scene tensors staged once
    staged = []
    for scene in scenes.scenes:
        lr_up = _to_chw(upsample(scene.lr, scenes.scale).data)[None]
        hr = _to_chw(scene.hr.data)[None]
        tgt = _to_chw(scene.target_rgb.data)[None]
        for view in scene.views:
            staged.append((lr_up, hr, tgt, _to_chw(view.ref_rgb.data)[None]))
    train_idx, val_idx = _split_indices(len(staged), cfg.val_fraction)

    frozen_align = system.aligned and not cfg.fine_tune_alignment
    refined_cache: Dict[int, torch.Tensor] = {}
    if frozen_align:
        with torch.no_grad():
            for j, (_, _, tgt, ref) in enumerate(staged):
                refined_cache[j] = system.align(ref, tgt)

    def _forward(j: int, t: int = 0) -> torch.Tensor:
        lr_up, _, tgt, ref = staged[j]
        if frozen_align:
            ref = refined_cache[j]
        if t:
            lr_up = _dihedral(lr_up, t)
            tgt = _dihedral(tgt, t)
            ref = _dihedral(ref, t)
        if frozen_align:
            return system.sr(lr_up, tgt, ref)
        return system(lr_up, tgt, ref)

    def _val_psnr() -> float:
        vals = []
        with torch.no_grad():
            for j in val_idx:
                out = torch.clamp(_forward(j), 0.0, 1.0)
                hr = staged[j][1]
                vals.append(psnr(out[0].permute(1, 2, 0).numpy().astype(np.float64),
                                 hr[0].permute(1, 2, 0).numpy().astype(np.float64)))
        return float(np.mean(vals))

    psnr_bicubic = float(np.mean([
        psnr(np.clip(staged[j][0][0].permute(1, 2, 0).numpy(), 0, 1).astype(np.float64),
             staged[j][1][0].permute(1, 2, 0).numpy().astype(np.float64))
        for j in val_idx]))

    start_epoch, step = 0, 0
    history: List[dict] = []
    if resume:
        modules = {"sr": system.sr}
        if system.aligned:
            modules.update(flow=system.flow, warpnet=system.warp)
        start_epoch, step, history = _try_resume(out_dir, cfg, modules,
                                                 optimizer, rng)

    checkpoint = None
    for epoch in range(start_epoch, cfg.epochs):
        system.sr.train()
        if system.aligned and cfg.fine_tune_alignment:
            system.flow.train()
            system.warp.train()
        order = rng.permutation(train_idx)
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            if cfg.augment_flips:
                ts = rng.integers(0, 8, size=len(idx))
            else:
                ts = np.zeros(len(idx), dtype=np.int64)
            loss = torch.stack(
                [torch.mean(torch.abs(_forward(j, int(t))
                                      - _dihedral(staged[j][1], int(t))))
                 for j, t in zip(idx, ts)]
            ).mean()
            _finite_or_raise(loss, "sr", step)
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(trainable, cfg.grad_clip)
            optimizer.step()
            step += 1
            _params_finite_or_raise(trainable, "sr", step)
            losses.append(float(loss.detach()))

        system.eval()
        record = {"phase": "sr", "epoch": epoch + 1, "step": step,
                  "loss": float(np.mean(losses)), "psnr": _val_psnr(),
                  "psnr_bicubic": psnr_bicubic}
        history.append(record)
        _append_log(log_path, record)
        models = {"sr": system.sr.state_dict()}
        if system.aligned:
            models["flow"] = system.flow.state_dict()
            models["warpnet"] = system.warp.state_dict()
        checkpoint = save_checkpoint(
            out_dir, phase="sr", config=cfg, models=models,
            optimizer_state=optimizer.state_dict(), numpy_rng=rng,
            epoch=epoch + 1, step=step, metrics=record, upstream=upstream)

    if checkpoint is None:
        _, manifest = load_checkpoint(out_dir)
        checkpoint = Checkpoint(path=out_dir, manifest=manifest)
    return TrainResult(checkpoint, tuple(history), log_path)
