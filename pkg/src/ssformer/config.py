"""Named model profiles, training hyperparameters and JSON config files."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from typing import Optional, Tuple

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigError

PROFILES = ("ade20k", "cityscapes", "toy")


@dataclass
class TrainConfig:
    lr: float = 6e-5
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 8
    max_iters: int = 200
    seed: int = 0
    eval_interval: int = 50
    lr_decay: bool = False
    profile: str = "toy"

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if not self.lr >= 0:
            raise ConfigError("lr must be non-negative")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("betas must be two values in [0, 1)")
        if self.batch_size < 1 or self.max_iters < 0 or self.eval_interval < 1:
            raise ConfigError("batch_size and eval_interval must be >= 1, max_iters >= 0")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {PROFILES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class SynthConfig:
    """Parameters of the generated dataset used by ``train --data synth``."""

    seed: int = 0
    n_samples: int = 256
    height: int = 64
    width: int = 64
    n_classes: int = 3
    eval_seed: int = 1
    eval_samples: int = 32


def profile(name: str) -> Tuple[EncoderConfig, DecoderConfig, Tuple[int, int]]:
    """(encoder, decoder, default input size) for a named profile."""
    if name == "ade20k":
        return EncoderConfig(), DecoderConfig(embed_dim=128, num_classes=150), (512, 512)
    if name == "cityscapes":
        return EncoderConfig(), DecoderConfig(embed_dim=128, num_classes=19), (1024, 1024)
    if name == "toy":
        enc = EncoderConfig(embed_dim=32, window_size=2, depths=[1, 1, 1, 1], num_heads=[1, 2, 4, 8])
        return enc, DecoderConfig(embed_dim=32, num_classes=3), (64, 64)
    raise ConfigError(f"unknown profile {name!r}; choose from {PROFILES}")


def model_digest(enc: EncoderConfig, dec: DecoderConfig) -> bytes:
    """SHA-256 over the canonical JSON of the architecture."""
    blob = json.dumps({"encoder": enc.to_dict(), "decoder": dec.to_dict()}, sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode()).digest()


def _build(cls, overrides: Optional[dict], base=None):
    overrides = overrides or {}
    if not isinstance(overrides, dict):
        raise ConfigError(f"{cls.__name__} section must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    values = asdict(base) if base is not None else {}
    values.update(overrides)
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> tuple:
    """Read a JSON config with optional sections train/encoder/decoder/synth.

    Encoder and decoder sections override the profile named in ``train``.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw)


def parse_config(raw: dict) -> tuple:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - {"train", "encoder", "decoder", "synth"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    train = _build(TrainConfig, raw.get("train"))
    enc, dec, _ = profile(train.profile)
    enc = _build(EncoderConfig, raw.get("encoder"), enc)
    dec = _build(DecoderConfig, raw.get("decoder"), dec)
    synth = _build(SynthConfig, raw.get("synth"))
    return train, enc, dec, synth
