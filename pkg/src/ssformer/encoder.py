"""Hierarchical shifted-window transformer encoder.

Feature maps are channel-last and batched: ``(B, h, w, c)``. Public helpers
also accept a single unbatched map ``(h, w, c)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence

import numpy as np

from . import ops
from .errors import ConfigError, ContractError, DimensionError
from .nn import LayerNorm, Linear, Module, normal
from .tensor import Tensor, as_tensor

MASK_VALUE = -1e9


@dataclass
class EncoderConfig:
    patch_size: int = 4
    window_size: int = 7
    embed_dim: int = 128
    depths: List[int] = field(default_factory=lambda: [2, 2, 18, 2])
    num_heads: List[int] = field(default_factory=lambda: [4, 8, 16, 32])
    mlp_ratio: float = 4.0
    in_channels: int = 3

    def __post_init__(self):
        self.depths = list(self.depths)
        self.num_heads = list(self.num_heads)
        self.validate()

    def validate(self) -> None:
        if len(self.depths) != 4 or len(self.num_heads) != 4:
            raise ConfigError("depths and num_heads must both have 4 entries")
        if self.patch_size < 1 or self.window_size < 1:
            raise ConfigError("patch_size and window_size must be >= 1")
        if self.embed_dim < 1 or self.in_channels < 1 or self.mlp_ratio <= 0:
            raise ConfigError("embed_dim, in_channels and mlp_ratio must be positive")
        for s, (depth, heads) in enumerate(zip(self.depths, self.num_heads)):
            if depth < 1 or heads < 1:
                raise ConfigError(f"stage {s}: depth and heads must be >= 1")
            if self.stage_dim(s) % heads:
                raise ConfigError(f"stage {s}: {self.stage_dim(s)} channels not divisible by {heads} heads")

    def stage_dim(self, stage: int) -> int:
        return self.embed_dim * 2 ** stage

    @property
    def input_multiple(self) -> int:
        """Input sides are padded up to a multiple of this."""
        return self.patch_size * 2 ** 3

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MultiScaleFeatures:
    """Four stage outputs, finest first."""

    features: List[Tensor]

    def __post_init__(self):
        check_pyramid(self.features)

    def __len__(self):
        return len(self.features)

    def __getitem__(self, i):
        return self.features[i]

    def __iter__(self):
        return iter(self.features)

    @property
    def shapes(self):
        return [f.shape for f in self.features]


def check_pyramid(features: Sequence[Tensor]) -> None:
    if len(features) != 4:
        raise ContractError(f"expected 4 pyramid levels, got {len(features)}")
    first = features[0].shape
    for s, f in enumerate(features):
        expect = first[:-3] + (first[-3] // 2 ** s, first[-2] // 2 ** s, first[-1] * 2 ** s)
        if f.shape != expect or first[-3] % 2 ** s or first[-2] % 2 ** s:
            raise ContractError(f"pyramid level {s} has shape {f.shape}, expected {expect}")


def _batched(x: Tensor):
    """Return (B, h, w, c) view and whether a batch axis was added."""
    x = as_tensor(x)
    if x.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"expected (h, w, c) or (B, h, w, c), got {x.shape}")
    return x, False


# ---------------------------------------------------------------- windows

def window_partition(x, window_size: int) -> Tensor:
    """Split (B, h, w, c) into (B*nw, M*M, c) windows, row-major over the grid."""
    x, _ = _batched(x)
    b, h, w, c = x.shape
    m = window_size
    if h % m or w % m:
        raise ContractError(f"map {h}x{w} is not divisible by window size {m}")
    x = ops.reshape(x, (b, h // m, m, w // m, m, c))
    x = ops.permute(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (b * (h // m) * (w // m), m * m, c))


def window_reverse(windows, window_size: int, h: int, w: int, batch: Optional[int] = None) -> Tensor:
    """Inverse of :func:`window_partition`.

    Returns (batch, h, w, c), or (h, w, c) when ``batch`` is None.
    """
    windows = as_tensor(windows)
    m = window_size
    if h % m or w % m:
        raise ContractError(f"map {h}x{w} is not divisible by window size {m}")
    nw = (h // m) * (w // m)
    b = 1 if batch is None else batch
    c = windows.shape[-1]
    if windows.shape != (b * nw, m * m, c):
        raise DimensionError(f"windows shape {windows.shape} does not tile a {b}x{h}x{w} map")
    x = ops.reshape(windows, (b, h // m, w // m, m, m, c))
    x = ops.permute(x, (0, 1, 3, 2, 4, 5))
    if batch is None:
        return ops.reshape(x, (h, w, c))
    return ops.reshape(x, (b, h, w, c))


@lru_cache(maxsize=None)
def relative_position_index(window_size: int) -> np.ndarray:
    """(M*M, M*M) index into the (2M-1)^2 bias table."""
    m = window_size
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij")).reshape(2, -1)
    rel = (coords[:, :, None] - coords[:, None, :]).transpose(1, 2, 0) + (m - 1)
    index = rel[:, :, 0] * (2 * m - 1) + rel[:, :, 1]
    index.setflags(write=False)
    return index


def padded_size(n: int, m: int) -> int:
    return -(-n // m) * m


@lru_cache(maxsize=128)
def attention_mask(h: int, w: int, window_size: int, shift: int) -> Optional[np.ndarray]:
    """Additive (nw, M*M, M*M) mask for a map of h x w real tokens.

    The map is zero-padded to multiples of M. Shifted windows must not mix
    tokens from regions that only became adjacent through the cyclic roll,
    and real tokens never attend to padding. Returns None when neither
    condition can occur.
    """
    m = window_size
    hp, wp = padded_size(h, m), padded_size(w, m)
    if shift == 0 and (hp, wp) == (h, w):
        return None
    region = np.zeros((hp, wp), dtype=np.int64)
    if shift > 0:
        bands = (slice(0, -m), slice(-m, -shift), slice(-shift, None))
        rid = 0
        for hs in bands:
            for ws in bands:
                region[hs, ws] = rid
                rid += 1
    is_pad = np.zeros((hp, wp), dtype=bool)
    is_pad[h:, :] = True
    is_pad[:, w:] = True
    if shift > 0:
        is_pad = np.roll(is_pad, (-shift, -shift), axis=(0, 1))

    def windows(a):
        return a.reshape(hp // m, m, wp // m, m).transpose(0, 2, 1, 3).reshape(-1, m * m)

    rw, pw = windows(region), windows(is_pad)
    blocked = (rw[:, :, None] != rw[:, None, :]) | (pw[:, None, :] & ~pw[:, :, None])
    mask = np.where(blocked, MASK_VALUE, 0.0)
    mask.setflags(write=False)
    return mask


# ---------------------------------------------------------------- attention

class WindowAttention(Module):
    """Multi-head self-attention inside each window, with relative position bias."""

    def __init__(self, dim: int, num_heads: int, window_size: int, rng: np.random.Generator):
        if dim % num_heads:
            raise ConfigError(f"{dim} channels not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.window_size = window_size
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = Linear(dim, 3 * dim, rng)
        self.relative_position_bias_table = normal(rng, ((2 * window_size - 1) ** 2, num_heads))
        self.proj = Linear(dim, dim, rng)

    def position_bias(self) -> Tensor:
        n = self.window_size ** 2
        index = relative_position_index(self.window_size).reshape(-1)
        bias = ops.take(self.relative_position_bias_table, index)
        return ops.permute(ops.reshape(bias, (n, n, self.num_heads)), (2, 0, 1))

    def forward(self, windows: Tensor, mask: Optional[np.ndarray] = None, return_attention: bool = False):
        bw, n, c = windows.shape
        heads = self.num_heads
        if c != self.dim:
            raise DimensionError(f"window channels {c} != attention dim {self.dim}")
        if n != self.window_size ** 2:
            raise DimensionError(f"window holds {n} tokens, expected {self.window_size ** 2}")
        qkv = ops.reshape(self.qkv(windows), (bw, n, 3, heads, c // heads))
        qkv = ops.permute(qkv, (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ops.matmul(ops.mul(q, self.scale), ops.swap_last(k))
        scores = ops.add(scores, self.position_bias())
        if mask is not None:
            nw = mask.shape[0]
            if mask.shape != (nw, n, n) or bw % nw:
                raise DimensionError(f"mask shape {mask.shape} incompatible with {bw} windows of {n} tokens")
            scores = ops.reshape(scores, (bw // nw, nw, heads, n, n))
            scores = ops.add(scores, Tensor(mask[None, :, None], dtype=scores.dtype))
            scores = ops.reshape(scores, (bw, heads, n, n))
        attn = ops.softmax(scores, axis=-1)
        out = ops.matmul(attn, v)
        out = ops.reshape(ops.permute(out, (0, 2, 1, 3)), (bw, n, c))
        out = self.proj(out)
        return (out, attn) if return_attention else out


def window_attention(windows, attention: WindowAttention, mask=None) -> Tensor:
    return attention(as_tensor(windows), mask)


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class SwinBlock(Module):
    """Pre-norm block; odd-indexed blocks use shifted windows."""

    def __init__(self, dim: int, num_heads: int, window_size: int, block_index: int,
                 mlp_ratio: float, rng: np.random.Generator):
        self.window_size = window_size
        self.shift = window_size // 2 if block_index % 2 else 0
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, num_heads, window_size, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng)

    def forward(self, x: Tensor, return_attention: bool = False):
        x, unbatched = _batched(x)
        b, h, w, c = x.shape
        m, s = self.window_size, self.shift
        hp, wp = padded_size(h, m), padded_size(w, m)
        y = ops.pad(self.norm1(x), [(0, 0), (0, hp - h), (0, wp - w), (0, 0)])
        if s:
            y = ops.cyclic_roll(y, (-s, -s), (1, 2))
        mask = attention_mask(h, w, m, s)
        attended = self.attn(window_partition(y, m), mask, return_attention=return_attention)
        if return_attention:
            attended, attn = attended
        y = window_reverse(attended, m, hp, wp, batch=b)
        if s:
            y = ops.cyclic_roll(y, (s, s), (1, 2))
        if (hp, wp) != (h, w):
            y = y[:, :h, :w, :]
        x = ops.add(x, y)
        x = ops.add(x, self.mlp(self.norm2(x)))
        if unbatched:
            x = ops.reshape(x, x.shape[1:])
        return (x, attn) if return_attention else x


# ---------------------------------------------------------------- embedding / merging

def patchify(image, patch_size: int) -> Tensor:
    """(B, H, W, C) -> (B, H/P, W/P, P*P*C), each patch flattened row-major, channel-last."""
    image, _ = _batched(image)
    b, hh, ww, c = image.shape
    p = patch_size
    if hh % p or ww % p:
        raise ContractError(f"image {hh}x{ww} is not divisible by patch size {p}; pad first")
    x = ops.reshape(image, (b, hh // p, p, ww // p, p, c))
    x = ops.permute(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (b, hh // p, ww // p, p * p * c))


class PatchEmbed(Module):
    def __init__(self, patch_size: int, in_channels: int, embed_dim: int, rng: np.random.Generator):
        self.patch_size = patch_size
        self.in_channels = in_channels
        self.proj = Linear(patch_size * patch_size * in_channels, embed_dim, rng)
        self.norm = LayerNorm(embed_dim)

    def forward(self, image: Tensor, normalize: bool = True) -> Tensor:
        image, unbatched = _batched(image)
        if image.shape[-1] != self.in_channels:
            raise DimensionError(f"image has {image.shape[-1]} channels, expected {self.in_channels}")
        x = self.proj(patchify(image, self.patch_size))
        if normalize:
            x = self.norm(x)
        return ops.reshape(x, x.shape[1:]) if unbatched else x


def merge_gather(x) -> Tensor:
    """(B, h, w, c) -> (B, h/2, w/2, 4c), order: top-left, bottom-left, top-right, bottom-right."""
    x, _ = _batched(x)
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"patch merging needs even dims, got {h}x{w}")
    x = ops.reshape(x, (b, h // 2, 2, w // 2, 2, c))
    x = ops.permute(x, (0, 1, 3, 4, 2, 5))
    return ops.reshape(x, (b, h // 2, w // 2, 4 * c))


def patch_merging(x, reduction_weight, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Gather 2x2 neighbourhoods, layernorm (skipped if gamma and beta are None), reduce 4c -> 2c."""
    x, unbatched = _batched(x)
    y = merge_gather(x)
    if gamma is not None or beta is not None:
        y = ops.layernorm(y, gamma, beta, eps)
    y = ops.matmul(y, reduction_weight)
    return ops.reshape(y, y.shape[1:]) if unbatched else y


class PatchMerging(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.norm = LayerNorm(4 * dim)
        self.reduction = Linear(4 * dim, 2 * dim, rng, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        return patch_merging(x, self.reduction.weight, self.norm.weight, self.norm.bias, self.norm.eps)


class Stage(Module):
    def __init__(self, cfg: EncoderConfig, stage: int, rng: np.random.Generator):
        dim = cfg.stage_dim(stage)
        blocks = []
        for j in range(cfg.depths[stage]):
            block = SwinBlock(dim, cfg.num_heads[stage], cfg.window_size, j, cfg.mlp_ratio, rng)
            setattr(self, f"block{j}", block)
            blocks.append(block)
        self._blocks = tuple(blocks)
        self.out_norm = LayerNorm(dim)
        if stage < 3:
            self.downsample = PatchMerging(dim, rng)

    def forward(self, x: Tensor):
        for block in self._blocks:
            x = block(x)
        return x


class SwinEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg.patch_size, cfg.in_channels, cfg.embed_dim, rng)
        stages = []
        for s in range(4):
            stage = Stage(cfg, s, rng)
            setattr(self, f"stage{s}", stage)
            stages.append(stage)
        self._stages = tuple(stages)

    def forward(self, images) -> MultiScaleFeatures:
        images, unbatched = _batched(images)
        b, hh, ww, c = images.shape
        if c != self.cfg.in_channels:
            raise DimensionError(f"image has {c} channels, expected {self.cfg.in_channels}")
        if hh < self.cfg.patch_size or ww < self.cfg.patch_size:
            raise ContractError(f"image {hh}x{ww} smaller than patch size {self.cfg.patch_size}")
        q = self.cfg.input_multiple
        images = ops.pad(images, [(0, 0), (0, padded_size(hh, q) - hh), (0, padded_size(ww, q) - ww), (0, 0)])
        x = self.patch_embed(images)
        features = []
        for s, stage in enumerate(self._stages):
            x = stage(x)
            out = stage.out_norm(x)
            features.append(ops.reshape(out, out.shape[1:]) if unbatched else out)
            if s < 3:
                x = stage.downsample(x)
        return MultiScaleFeatures(features)


def encode_forward(image, encoder: SwinEncoder) -> MultiScaleFeatures:
    return encoder(as_tensor(image))


def feature_shapes(cfg: EncoderConfig, height: int, width: int) -> list:
    """Pyramid shapes produced for an (height, width) input, padding included."""
    q = cfg.input_multiple
    h0, w0 = padded_size(height, q) // cfg.patch_size, padded_size(width, q) // cfg.patch_size
    return [(h0 >> s, w0 >> s, cfg.stage_dim(s)) for s in range(4)]


__all__ = [
    "EncoderConfig", "MultiScaleFeatures", "SwinEncoder", "SwinBlock", "WindowAttention",
    "PatchEmbed", "PatchMerging", "window_partition", "window_reverse", "attention_mask",
    "relative_position_index", "patchify", "merge_gather", "patch_merging", "encode_forward",
    "window_attention", "feature_shapes", "MASK_VALUE",
]
