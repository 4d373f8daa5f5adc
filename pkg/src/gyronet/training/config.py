"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from ..errors import ContractError
from ..models import ArchSpec, InitScheme

_SECTION = "train"
_ARCH_KEYS = {"depth", "widths", "blocks", "curvature", "num_classes", "init_scheme",
              "per_channel_gamma"}


@dataclass
class TrainConfig:
    arch: ArchSpec = field(default_factory=ArchSpec)
    lr: float = 1e-3
    weight_decay: float = 1e-4
    optimizer: str = "adam"
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    bn_mode: str = "midpoint"
    augmentation: bool = True
    dataset: str = "cifar10"  # or "synthetic"
    data_path: str | None = None
    out_dir: str = "runs/default"
    subset: int | None = None
    test_subset: int | None = None
    synthetic_train: int = 256
    synthetic_test: int = 256
    image_size: int = 8
    checkpoint_every_epoch: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 2:
            raise ContractError("batch_size must be at least 2 for batch norm")
        if self.epochs < 0:
            raise ContractError("epochs must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ContractError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.bn_mode not in ("midpoint", "frechet"):
            raise ContractError(f"bn_mode must be midpoint or frechet, got {self.bn_mode!r}")
        if self.dataset not in ("cifar10", "synthetic"):
            raise ContractError(f"dataset must be cifar10 or synthetic, got {self.dataset!r}")

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)


def _ints(text: str) -> tuple:
    return tuple(int(p) for p in text.replace(",", " ").split())


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "none", "all") else int(text)


def parse_config(text: str) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` comments allowed) into a :class:`TrainConfig`."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ContractError(f"malformed config: {exc}") from exc
    sec = parser[_SECTION]
    plain = {f.name: f for f in dataclasses.fields(TrainConfig) if f.name != "arch"}
    unknown = set(sec) - set(plain) - _ARCH_KEYS
    if unknown:
        raise ContractError(f"unknown config keys: {', '.join(sorted(unknown))}")

    arch = {}
    if "depth" in sec:
        arch["depth"] = sec.getint("depth")
    if "widths" in sec:
        arch["widths"] = _ints(sec["widths"])
    if "blocks" in sec:
        arch["blocks"] = _ints(sec["blocks"])
    if "curvature" in sec:
        arch["c"] = sec.getfloat("curvature")
    if "num_classes" in sec:
        arch["num_classes"] = sec.getint("num_classes")
    if "init_scheme" in sec:
        arch["init_scheme"] = InitScheme(sec["init_scheme"])
    if "per_channel_gamma" in sec:
        arch["per_channel_gamma"] = sec.getboolean("per_channel_gamma")

    values: dict = {"arch": ArchSpec(**arch)}
    for key in sec:
        if key not in plain:
            continue
        default = plain[key].default
        if key in ("subset", "test_subset"):
            values[key] = _optional_int(sec[key])
        elif isinstance(default, bool):
            values[key] = sec.getboolean(key)
        elif isinstance(default, int):
            values[key] = sec.getint(key)
        elif isinstance(default, float):
            values[key] = sec.getfloat(key)
        else:
            values[key] = sec[key]
    return TrainConfig(**values)


def load_config(path: str) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
