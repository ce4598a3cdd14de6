"""
Parameter and FLOP accounting.

Two instruments live here. :func:`omega_ssformer` is the closed-form
estimate ``4hwC^2 + 2M^2hwC + hwC^2 + 4hwC*N_cls``, evaluated literally; its
encoder part is the cost of a single windowed-attention block, so it is not a
whole-network figure. :func:`count_flops_detailed` walks the actual layer
graph (padding included) and is the authoritative count.

FLOP convention: one multiply-accumulate is one unit. Linear layers cost
``tokens * c_in * c_out``; attention costs ``2 * M^4 * c`` per window for the
two score/value products plus its projections; layernorm, softmax and gelu
cost one unit per element; bilinear upsampling four units per output element.
Additions (bias, residual, position bias, masks) are not counted. The same
convention is used by :func:`ssformer.tensor.count_macs`, so the analytic
walk can be checked against an instrumented forward pass.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Tuple

from .decoder import DecoderConfig
from .encoder import EncoderConfig, feature_shapes, padded_size
from .errors import ConfigError


@dataclass(frozen=True)
class ComplexityInputs:
    h: int
    w: int
    C: int
    M: int
    N_cls: int

    def __post_init__(self):
        for name in ("h", "w", "C", "M", "N_cls"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")


def omega_ssformer(inp: ComplexityInputs) -> int:
    hw = inp.h * inp.w
    c = inp.C
    return 4 * hw * c * c + 2 * inp.M * inp.M * hw * c + hw * c * c + 4 * hw * c * inp.N_cls


@dataclass
class LayerCost:
    name: str
    params: int
    flops: int


@dataclass
class ComplexityReport:
    profile: str
    height: int
    width: int
    omega_eq1: int
    flops_detailed: int
    params_total: int
    per_layer: List[LayerCost] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_layer"] = [asdict(layer) for layer in self.per_layer]
        return d


def _linear_params(c_in: int, c_out: int, bias: bool = True) -> int:
    return c_in * c_out + (c_out if bias else 0)


def _layers(enc: EncoderConfig, dec: DecoderConfig, height: int, width: int) -> List[LayerCost]:
    """Every parameterized or counted layer, in forward order, for one image."""
    layers: List[LayerCost] = []
    add = lambda name, params, flops: layers.append(LayerCost(name, params, flops))  # noqa: E731

    shapes = feature_shapes(enc, height, width)
    h0, w0, c0 = shapes[0]
    patch_in = enc.patch_size ** 2 * enc.in_channels
    add("encoder.patch_embed.proj", _linear_params(patch_in, c0), h0 * w0 * patch_in * c0)
    add("encoder.patch_embed.norm", 2 * c0, h0 * w0 * c0)

    m = enc.window_size
    for s, (h, w, d) in enumerate(shapes):
        heads = enc.num_heads[s]
        hidden = int(d * enc.mlp_ratio)
        tokens = h * w
        windows = (padded_size(h, m) // m) * (padded_size(w, m) // m)
        for j in range(enc.depths[s]):
            p = f"encoder.stage{s}.block{j}"
            add(f"{p}.norm1", 2 * d, tokens * d)
            add(f"{p}.attn.qkv", _linear_params(d, 3 * d), windows * m * m * d * 3 * d)
            add(f"{p}.attn.relative_position_bias_table", (2 * m - 1) ** 2 * heads, 0)
            add(f"{p}.attn.scores", 0, windows * m ** 4 * d)
            add(f"{p}.attn.softmax", 0, windows * heads * m ** 4)
            add(f"{p}.attn.weighted_values", 0, windows * m ** 4 * d)
            add(f"{p}.attn.proj", _linear_params(d, d), windows * m * m * d * d)
            add(f"{p}.norm2", 2 * d, tokens * d)
            add(f"{p}.mlp.fc1", _linear_params(d, hidden), tokens * d * hidden)
            add(f"{p}.mlp.gelu", 0, tokens * hidden)
            add(f"{p}.mlp.fc2", _linear_params(hidden, d), tokens * hidden * d)
        add(f"encoder.stage{s}.out_norm", 2 * d, tokens * d)
        if s < 3:
            merged = (h // 2) * (w // 2)
            add(f"encoder.stage{s}.downsample.norm", 2 * 4 * d, merged * 4 * d)
            add(f"encoder.stage{s}.downsample.reduction", _linear_params(4 * d, 2 * d, bias=False),
                merged * 4 * d * 2 * d)

    cd, n_cls = dec.embed_dim, dec.num_classes
    for s, (h, w, d) in enumerate(shapes):
        add(f"decoder.proj{s}", _linear_params(d, cd), h * w * d * cd)
        if s:
            add(f"decoder.upsample{s}", 0, 4 * h0 * w0 * cd)
    add("decoder.fuse", _linear_params(4 * cd, cd), h0 * w0 * 4 * cd * cd)
    add("decoder.fuse.gelu", 0, h0 * w0 * cd)
    add("decoder.classifier", _linear_params(cd, n_cls), h0 * w0 * cd * n_cls)
    if enc.patch_size > 1:
        add("head.upsample", 0, 4 * (enc.patch_size * h0) * (enc.patch_size * w0) * n_cls)
    return layers


def count_params(enc: EncoderConfig, dec: DecoderConfig) -> Tuple[int, List[Tuple[str, int]]]:
    """Total trainable elements and a per-layer breakdown (parameterized layers only)."""
    layers = [l for l in _layers(enc, dec, enc.input_multiple, enc.input_multiple) if l.params]
    return sum(l.params for l in layers), [(l.name, l.params) for l in layers]


def count_flops_detailed(enc: EncoderConfig, dec: DecoderConfig, height: int, width: int) -> int:
    return sum(l.flops for l in _layers(enc, dec, height, width))


def analyze(enc: EncoderConfig, dec: DecoderConfig, height: int, width: int, profile: str = "custom") -> ComplexityReport:
    layers = _layers(enc, dec, height, width)
    hw_in = ComplexityInputs(
        h=padded_size(height, enc.patch_size) // enc.patch_size,
        w=padded_size(width, enc.patch_size) // enc.patch_size,
        C=enc.embed_dim, M=enc.window_size, N_cls=dec.num_classes,
    )
    return ComplexityReport(
        profile=profile,
        height=height,
        width=width,
        omega_eq1=omega_ssformer(hw_in),
        flops_detailed=sum(l.flops for l in layers),
        params_total=sum(l.params for l in layers),
        per_layer=layers,
    )
