from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    PARAM_LAYERS,
    ModelConfig,
    Net3D,
    backward,
    batch_loss,
    forward,
    predict,
    predict_proba,
    softmax,
    weighted_cross_entropy,
    weighted_cross_entropy_grad,
)
from .train import SGD, TrainConfig, inverse_frequency_weights, train

__all__ = [
    "PARAM_LAYERS", "ModelConfig", "Net3D", "SGD", "TrainConfig",
    "backward", "batch_loss", "forward", "inverse_frequency_weights",
    "load_checkpoint", "predict", "predict_proba", "save_checkpoint", "softmax",
    "train", "weighted_cross_entropy", "weighted_cross_entropy_grad",
]
