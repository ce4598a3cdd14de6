"""All-MLP decoder and the full segmentation model."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import ops
from .encoder import EncoderConfig, MultiScaleFeatures, SwinEncoder, check_pyramid
from .errors import ConfigError, DimensionError
from .nn import Linear, Module
from .tensor import Tensor, as_tensor


@dataclass
class DecoderConfig:
    embed_dim: int = 128
    num_classes: int = 150
    ignore_index: int = 255

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.embed_dim < 1:
            raise ConfigError("decoder embed_dim must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class MLPDecoder(Module):
    """Project each stage to a common width, upsample to stage-1 size, concat, fuse, classify."""

    def __init__(self, enc_cfg: EncoderConfig, cfg: DecoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        projections = []
        for s in range(4):
            proj = Linear(enc_cfg.stage_dim(s), cfg.embed_dim, rng)
            setattr(self, f"proj{s}", proj)
            projections.append(proj)
        self._projections = tuple(projections)
        self.fuse = Linear(4 * cfg.embed_dim, cfg.embed_dim, rng)
        self.classifier = Linear(cfg.embed_dim, cfg.num_classes, rng)

    def forward(self, features) -> Tensor:
        feats = list(features)
        check_pyramid(feats)
        h, w = feats[0].shape[-3], feats[0].shape[-2]
        for s, (f, proj) in enumerate(zip(feats, self._projections)):
            if f.shape[-1] != proj.in_features:
                raise DimensionError(f"stage {s} has {f.shape[-1]} channels, decoder expects {proj.in_features}")
        levels = []
        for f, proj in zip(feats, self._projections):
            y = proj(f)
            if y.shape[-3:-1] != (h, w):
                y = ops.bilinear_upsample(y, h, w)
            levels.append(y)
        fused = ops.gelu(self.fuse(ops.concat(levels, axis=-1)))
        return self.classifier(fused)


def decode(features, decoder: MLPDecoder) -> Tensor:
    """Stage-1 resolution logits (..., H/4, W/4, N_cls)."""
    return decoder(features)


class SSformer(Module):
    """Encoder + decoder; ``forward`` returns logits at the input resolution."""

    def __init__(self, enc_cfg: Optional[EncoderConfig] = None, dec_cfg: Optional[DecoderConfig] = None,
                 seed: int = 0):
        self.enc_cfg = enc_cfg or EncoderConfig()
        self.dec_cfg = dec_cfg or DecoderConfig(embed_dim=self.enc_cfg.embed_dim)
        rng = np.random.default_rng(seed)
        self.encoder = SwinEncoder(self.enc_cfg, rng)
        self.decoder = MLPDecoder(self.enc_cfg, self.dec_cfg, rng)

    def forward(self, images) -> Tensor:
        images = as_tensor(images)
        hh, ww = images.shape[-3], images.shape[-2]
        features = self.encoder(images)
        logits = self.decoder(features)
        p = self.enc_cfg.patch_size
        hp, wp = p * logits.shape[-3], p * logits.shape[-2]
        logits = ops.bilinear_upsample(logits, hp, wp)
        if (hp, wp) != (hh, ww):
            logits = logits[..., :hh, :ww, :]
        return logits

    def predict(self, images) -> np.ndarray:
        from .tensor import no_grad
        with no_grad():
            return np.argmax(self.forward(images).data, axis=-1)


def full_forward(image, model: SSformer) -> Tensor:
    """Logits (H, W, N_cls) for an (H, W, 3) image, or batched equivalents."""
    return model(as_tensor(image))


__all__ = ["DecoderConfig", "MLPDecoder", "SSformer", "decode", "full_forward", "MultiScaleFeatures"]
