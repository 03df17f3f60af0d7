"""Run configuration: one flat dataclass, INI files, and content fingerprints.

A config file is plain ``key = value`` INI with three sections::

    [train]
    phase = sr
    epochs = 200
    learning_rate = 1e-3

    [data]
    scale = 4
    bands = 8

    [model]
    base_channels = 16
    levels = 2
    blocks = 2,2

Every key maps onto a :class:`TrainConfig` field; unknown keys are rejected so
typos fail loudly.  ``fingerprint()`` hashes the canonical JSON form and is
stored in checkpoint manifests — resuming with a different config refuses to
run.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

from .errors import ConfigError

PathLike = Union[str, Path]

PHASES = ("flow", "warpnet", "sr")
TRAIN_SCALES = (4, 8, 16)


@dataclass(frozen=True)
class TrainConfig:
    # [train]
    phase: str = "sr"
    epochs: int = 1
    learning_rate: float = 1e-5
    weight_decay: float = 5e-5
    batch_size: int = 1
    seed: int = 0
    grad_clip: float = 1.0
    val_fraction: float = 0.125
    augment_flips: bool = True

    # [data]
    scale: int = 4
    bands: int = 8

    # [model]
    base_channels: int = 16
    levels: int = 2
    heads: int = 4
    blocks: Tuple[int, ...] = (2, 2)
    match_patch: int = 3
    idfa_kernel: int = 3
    idfa_max_offset: float = 4.0
    interaction: bool = True
    use_alignment: bool = True
    fine_tune_alignment: bool = True
    flow_levels: int = 2
    flow_radius: int = 3
    flow_iters: int = 6
    flow_channels: int = 48
    warp_base: int = 32

    def __post_init__(self) -> None:
        if self.phase not in PHASES:
            raise ConfigError(f"TrainConfig: phase must be one of {PHASES}, got {self.phase!r}")
        if self.epochs < 1:
            raise ConfigError("TrainConfig: epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("TrainConfig: batch_size must be >= 1")
        if not (self.learning_rate > 0):
            raise ConfigError("TrainConfig: learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("TrainConfig: weight_decay must be >= 0")
        if not (self.grad_clip > 0):
            raise ConfigError("TrainConfig: grad_clip must be > 0")
        if not (0.0 < self.val_fraction < 1.0):
            raise ConfigError("TrainConfig: val_fraction must lie in (0, 1)")
        if self.scale not in TRAIN_SCALES:
            raise ConfigError(f"TrainConfig: scale must be one of {TRAIN_SCALES}, got {self.scale}")
        if self.bands < 2:
            raise ConfigError("TrainConfig: bands must be >= 2")
        if len(self.blocks) != self.levels:
            raise ConfigError(
                f"TrainConfig: blocks has {len(self.blocks)} entries for {self.levels} levels"
            )

    def fingerprint(self) -> str:
        """sha256 over the canonical JSON form; stable across processes.

        ``epochs`` is excluded: it only says where a run stops, so resuming
        a checkpoint to train longer is still the same experiment.
        """
        record = dataclasses.asdict(self)
        record.pop("epochs")
        blob = json.dumps(record, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def replace(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs)


_SECTIONS = {
    "train": ("phase", "epochs", "learning_rate", "weight_decay", "batch_size",
              "seed", "grad_clip", "val_fraction", "augment_flips"),
    "data": ("scale", "bands"),
    "model": ("base_channels", "levels", "heads", "blocks", "match_patch",
              "idfa_kernel", "idfa_max_offset", "interaction", "use_alignment",
              "fine_tune_alignment", "flow_levels", "flow_radius", "flow_iters",
              "flow_channels", "warp_base"),
}
_FIELD_SECTION = {name: sec for sec, names in _SECTIONS.items() for name in names}
_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _parse_value(name: str, raw: str):
    field = _FIELDS[name]
    raw = raw.strip()
    try:
        if field.type == "bool" or isinstance(field.default, bool):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(field.default, int):
            return int(raw)
        if isinstance(field.default, float):
            return float(raw)
        if isinstance(field.default, tuple):
            return tuple(int(tok) for tok in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {name}: {exc}") from exc


def load_config(path: PathLike) -> TrainConfig:
    """Parse an INI config file into a validated :class:`TrainConfig`."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _FIELD_SECTION or _FIELD_SECTION[key] != section:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
            values[key] = _parse_value(key, raw)
    return TrainConfig(**values)


def save_config(cfg: TrainConfig, path: PathLike) -> None:
    """Write ``cfg`` back out in the same INI shape ``load_config`` reads."""
    parser = configparser.ConfigParser()
    data = dataclasses.asdict(cfg)
    for section, names in _SECTIONS.items():
        parser[section] = {}
        for name in names:
            value = data[name]
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            parser[section][name] = str(value)
    with open(path, "w") as fh:
        parser.write(fh)
