"""Convolutional encoders, affine decoders and their training."""

from .layers import (ELU, ConvTranspose2d, Conv2d, Dense, Flatten, PodLinear, Sequential,
                     SparseLinear, Unflatten)
from .models import (CaeModel, CnnModel, IcaeModel, build_cae, build_cnn, decode_cae,
                     decode_cnn, decode_icae, decoder_affine, encode)
from .training import (Adam, GradCheckResult, TrainConfig, TrainingError, TrainResult,
                       gradient_check, parameter_hash, train, train_icae)

__all__ = [
    "Adam", "CaeModel", "CnnModel", "Conv2d", "ConvTranspose2d", "Dense", "ELU", "Flatten",
    "GradCheckResult", "IcaeModel", "PodLinear", "Sequential", "SparseLinear", "TrainConfig",
    "TrainResult", "TrainingError", "Unflatten", "build_cae", "build_cnn", "decode_cae",
    "decode_cnn", "decode_icae", "decoder_affine", "encode", "gradient_check",
    "parameter_hash", "train", "train_icae",
]
