"""Checkpoint directories: a torch parameter archive plus a JSON manifest.

Layout::

    ckpt_dir/
      params.pt       model/optimizer state dicts + RNG states
      manifest.json   phase tag, config, config fingerprint, step counters,
                      last metric snapshot

Resume is refused when the stored config fingerprint differs from the live
one, and downstream phases check the phase tag before consuming a checkpoint.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np
import torch

from .config import TrainConfig
from .errors import ConfigError, DataError, PhaseOrderError

PathLike = Union[str, Path]

PARAMS_NAME = "params.pt"
MANIFEST_NAME = "manifest.json"
CKPT_FORMAT = 1


@dataclass(frozen=True)
class Checkpoint:
    path: Path
    manifest: Mapping


def save_checkpoint(
    out_dir: PathLike,
    *,
    phase: str,
    config: TrainConfig,
    models: Dict[str, dict],
    optimizer_state: Optional[dict],
    numpy_rng: Optional[np.random.Generator],
    epoch: int,
    step: int,
    metrics: Optional[Mapping] = None,
    upstream: Optional[Mapping] = None,
) -> Checkpoint:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "models": models,
        "optimizer": optimizer_state,
        "torch_rng": torch.get_rng_state(),
        "numpy_rng": numpy_rng.bit_generator.state if numpy_rng is not None else None,
    }
    torch.save(payload, out_dir / PARAMS_NAME)
    manifest = {
        "format": CKPT_FORMAT,
        "phase": phase,
        "fingerprint": config.fingerprint(),
        "config": dataclasses.asdict(config),
        "epoch": epoch,
        "step": step,
        "metrics": dict(metrics) if metrics else {},
        "upstream": dict(upstream) if upstream else {},
    }
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    return Checkpoint(path=out_dir, manifest=manifest)


def checkpoint_exists(ckpt_dir: PathLike) -> bool:
    ckpt_dir = Path(ckpt_dir)
    return (ckpt_dir / PARAMS_NAME).is_file() and (ckpt_dir / MANIFEST_NAME).is_file()


def load_checkpoint(ckpt_dir: PathLike) -> tuple:
    """Return ``(payload, manifest)``; raises :class:`DataError` when absent."""
    ckpt_dir = Path(ckpt_dir)
    if not checkpoint_exists(ckpt_dir):
        raise DataError(f"no checkpoint at {ckpt_dir}")
    manifest = json.loads((ckpt_dir / MANIFEST_NAME).read_text())
    if manifest.get("format") != CKPT_FORMAT:
        raise DataError(f"unsupported checkpoint format in {ckpt_dir}")
    # the archive holds RNG state objects, not just tensors
    payload = torch.load(ckpt_dir / PARAMS_NAME, map_location="cpu",
                         weights_only=False)
    return payload, manifest


def require_phase(ckpt_dir: PathLike, expected: str) -> tuple:
    """Load a checkpoint that must come from ``expected``'s training phase."""
    ckpt_dir = Path(ckpt_dir)
    if not checkpoint_exists(ckpt_dir):
        raise PhaseOrderError(
            f"missing {expected!r} checkpoint at {ckpt_dir}; run the earlier "
            f"training phase first"
        )
    payload, manifest = load_checkpoint(ckpt_dir)
    got = manifest.get("phase")
    if got != expected:
        raise PhaseOrderError(
            f"checkpoint at {ckpt_dir} is from phase {got!r}, expected {expected!r}"
        )
    return payload, manifest


def check_fingerprint(manifest: Mapping, config: TrainConfig) -> None:
    stored = manifest.get("fingerprint")
    live = config.fingerprint()
    if stored != live:
        raise ConfigError(
            "checkpoint/config mismatch: stored fingerprint "
            f"{str(stored)[:12]}… != live {live[:12]}…; refusing to resume"
        )


def config_from_manifest(manifest: Mapping) -> TrainConfig:
    raw = dict(manifest["config"])
    raw["blocks"] = tuple(raw["blocks"])
    return TrainConfig(**raw)


def restore_rng(payload: Mapping, numpy_rng: Optional[np.random.Generator]) -> None:
    torch.set_rng_state(payload["torch_rng"])
    if numpy_rng is not None and payload.get("numpy_rng") is not None:
        numpy_rng.bit_generator.state = payload["numpy_rng"]
