from .baselines import DenoisingAutoencoder, PlainTripletEmbedding, corrupt
from .config import LossConfig, config_hash
from .estimator import NormedEmbedding
from .losses import (
    cosine_loss,
    loss_components,
    loss_contrastive,
    loss_intermediate,
    loss_terminal,
    squared_norm,
    total_loss,
    triplet_loss,
)
from .model import (
    Checkpoint,
    EmbeddingModel,
    TrainHistory,
    TrainingDivergedError,
    batch_components,
    batch_total_loss,
    fit_loop,
    train,
)
from .sampling import SamplingError, StateIndex, TripletBatch, sample_triplet_batch

__all__ = [
    "Checkpoint",
    "DenoisingAutoencoder",
    "EmbeddingModel",
    "LossConfig",
    "NormedEmbedding",
    "PlainTripletEmbedding",
    "SamplingError",
    "StateIndex",
    "TrainHistory",
    "TrainingDivergedError",
    "TripletBatch",
    "batch_components",
    "batch_total_loss",
    "config_hash",
    "corrupt",
    "cosine_loss",
    "fit_loop",
    "loss_components",
    "loss_contrastive",
    "loss_intermediate",
    "loss_terminal",
    "sample_triplet_batch",
    "squared_norm",
    "total_loss",
    "train",
    "triplet_loss",
]
