"""Swin-style hierarchical encoder with an all-MLP segmentation decoder, on a small numpy autodiff core."""
from .complexity import ComplexityInputs, ComplexityReport, analyze, count_flops_detailed, count_params, omega_ssformer
from .config import TrainConfig, profile
from .decoder import DecoderConfig, MLPDecoder, SSformer, decode, full_forward
from .encoder import EncoderConfig, MultiScaleFeatures, SwinEncoder, encode_forward
from .metrics import ConfusionMatrix, confusion_update, miou, pixel_accuracy
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "ComplexityInputs", "ComplexityReport", "analyze", "count_flops_detailed", "count_params", "omega_ssformer",
    "TrainConfig", "profile",
    "DecoderConfig", "MLPDecoder", "SSformer", "decode", "full_forward",
    "EncoderConfig", "MultiScaleFeatures", "SwinEncoder", "encode_forward",
    "ConfusionMatrix", "confusion_update", "miou", "pixel_accuracy",
    "Tensor", "backward", "no_grad",
]
