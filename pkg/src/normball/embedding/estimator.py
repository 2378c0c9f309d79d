"""scikit-learn style wrappers around the encoders."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from ..cohort import STATE_DIM, PatientTrajectory, split_cohort
from .config import LossConfig
from .model import EmbeddingModel, train
from .sampling import StateIndex


def is_cohort(X) -> bool:
    return isinstance(X, (list, tuple)) and len(X) > 0 and isinstance(X[0], PatientTrajectory)


def check_cohort(X) -> list[PatientTrajectory]:
    if not is_cohort(X):
        raise TypeError("expected a non-empty list of PatientTrajectory")
    return list(X)


class CohortEncoderMixin(TransformerMixin):
    """``transform`` for fitted encoders exposing ``model_``.

    Accepts a cohort (embeds every state, stacked in cohort order), a 2-D
    array of states (MLP encoders), or a 3-D array of histories (GRU encoders).
    """

    def _embed(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        model: EmbeddingModel = self.model_
        if is_cohort(X):
            return model.embed_index(StateIndex(X))
        if model.encoder == "gru":
            X = check_array(X, allow_nd=True, dtype=np.float64)
            if X.ndim != 3 or X.shape[1:] != (model.horizon, STATE_DIM):
                raise ValueError(f"GRU encoder expects (n, {model.horizon}, {STATE_DIM}) histories")
        else:
            X = check_array(X, dtype=np.float64)
            if X.shape[1] != STATE_DIM:
                raise ValueError(f"expected {STATE_DIM} features, got {X.shape[1]}")
        return model.embed(X)

    def transform(self, X) -> np.ndarray:
        return self._embed(X)

    def embed_cohort(self, cohort: Sequence[PatientTrajectory]) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        flat = self.transform(cohort)
        lengths = [p.length for p in cohort]
        return np.split(flat, np.cumsum(lengths)[:-1])


class NormedEmbedding(CohortEncoderMixin, BaseEstimator):
    """Embed clinical states into the unit ball; squared norm tracks mortality risk.

    Parameters
    ----------
    encoder : {"mlp", "gru"}
        Plain MLP on the current state, or a GRU over the trailing ``horizon``
        hours followed by an MLP head on [hidden, current state].
    n_components : int
        Embedding dimension.
    loss_config : LossConfig, optional
        Objective and optimizer settings; defaults to ``LossConfig()``.
    init : {"orthogonal", "uniform"}
        Weight initialization.
    validation_fraction : float
        Share of patients held out for checkpoint selection.
    steps_per_epoch : int, optional
        Overrides the default of one pass over the training states.

    Attributes
    ----------
    model_ : EmbeddingModel
    history_ : TrainHistory
    best_epoch_ : int
    """

    def __init__(self, encoder="mlp", n_components=3, hidden_dim=512, num_layers=8,
                 gru_hidden_dim=128, gru_layers=2, horizon=12, loss_config=None,
                 init="orthogonal", validation_fraction=0.2, steps_per_epoch=None,
                 random_state=0):
        self.encoder = encoder
        self.n_components = n_components
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.gru_hidden_dim = gru_hidden_dim
        self.gru_layers = gru_layers
        self.horizon = horizon
        self.loss_config = loss_config
        self.init = init
        self.validation_fraction = validation_fraction
        self.steps_per_epoch = steps_per_epoch
        self.random_state = random_state

    def _config(self) -> LossConfig:
        return self.loss_config if self.loss_config is not None else LossConfig()

    def fit(self, X, y=None, val_cohort=None):
        """Train on a cohort. ``val_cohort`` skips the internal patient split."""
        cohort = check_cohort(X)
        seeds = np.random.SeedSequence(self.random_state).spawn(3)
        if val_cohort is None:
            train_c, val_c = split_cohort(cohort, 1.0 - self.validation_fraction, np.random.default_rng(seeds[0]))
        else:
            train_c, val_c = cohort, check_cohort(val_cohort)
        model = EmbeddingModel.create(
            self.encoder, self.n_components, self.hidden_dim, self.num_layers,
            self.gru_hidden_dim, self.gru_layers, self.horizon, "tanh", self.init,
            np.random.default_rng(seeds[1]),
        )
        model.fit_scaler(np.concatenate([p.states for p in train_c]))
        ckpt = train(model, train_c, val_c, self._config(), np.random.default_rng(seeds[2]),
                     steps_per_epoch=self.steps_per_epoch)
        self.checkpoint_ = ckpt
        self.model_ = ckpt.model
        self.history_ = ckpt.history
        self.best_epoch_ = ckpt.best_epoch
        return self

    def score_samples(self, X) -> np.ndarray:
        """Squared embedding norm d(x) per state."""
        return np.sum(self._embed(X) ** 2, axis=-1)
