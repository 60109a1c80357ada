from .checkpoint import load_checkpoint, save_checkpoint
from .layers import segment_max
from .losses import cosine_loss, softmax_cross_entropy
from .network import (
    ClassificationHyper,
    LayerSpec,
    Network,
    NormalsHyper,
    ShapeError,
    Tape,
    build_network,
    conv_block,
    deconv_block,
    infer_shapes,
    plan_geometry,
)
from .optim import Adam

__all__ = [
    "Adam", "ClassificationHyper", "LayerSpec", "Network", "NormalsHyper", "ShapeError", "Tape",
    "build_network", "conv_block", "cosine_loss", "deconv_block", "infer_shapes", "load_checkpoint",
    "plan_geometry", "save_checkpoint", "segment_max", "softmax_cross_entropy",
]
