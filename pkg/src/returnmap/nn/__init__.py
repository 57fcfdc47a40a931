"""From-scratch residual CNN: layers, network, loss, optimizer, checkpoints."""

from .adam import Adam
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .loss import HENON_LOSS, SAM_LOSS, LossWeights, weighted_mse
from .network import ConvRegressor, NetConfig, StaleCacheError

__all__ = [
    "Adam",
    "ConvRegressor",
    "NetConfig",
    "StaleCacheError",
    "LossWeights",
    "weighted_mse",
    "HENON_LOSS",
    "SAM_LOSS",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]
