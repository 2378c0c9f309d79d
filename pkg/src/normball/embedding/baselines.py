"""Comparison representation learners: a denoising autoencoder and a plain triplet net.

Both reuse the encoder architecture without the tanh head.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from ..cohort import STATE_DIM, split_cohort
from ..numerics import MlpSpec, init_mlp, mlp_forward, ops
from .estimator import CohortEncoderMixin, check_cohort
from .losses import triplet_loss
from .model import EmbeddingModel, fit_loop
from .sampling import StateIndex


def corrupt(x: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Zero each entry independently with probability ``rate``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("corruption rate must lie in [0, 1)")
    keep = rng.random(np.shape(x)) >= rate
    return np.where(keep, x, 0.0)


def _new_encoder(est, rng) -> EmbeddingModel:
    return EmbeddingModel.create(
        est.encoder, est.n_components, est.hidden_dim, est.num_layers,
        est.gru_hidden_dim, est.gru_layers, est.horizon, None, est.init, rng,
    )


def _split(est, cohort, rng):
    if len(cohort) < 2:
        return cohort, cohort
    return split_cohort(cohort, 1.0 - est.validation_fraction, rng)


class _BaselineParams(BaseEstimator):
    def __init__(self, encoder="mlp", n_components=3, hidden_dim=512, num_layers=8,
                 gru_hidden_dim=128, gru_layers=2, horizon=12, init="orthogonal",
                 batch_size=128, learning_rate=3e-5, epochs=10, validation_fraction=0.2,
                 steps_per_epoch=None, random_state=0):
        self.encoder = encoder
        self.n_components = n_components
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.gru_hidden_dim = gru_hidden_dim
        self.gru_layers = gru_layers
        self.horizon = horizon
        self.init = init
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.validation_fraction = validation_fraction
        self.steps_per_epoch = steps_per_epoch
        self.random_state = random_state

    def _steps(self, index: StateIndex) -> int:
        if self.steps_per_epoch is not None:
            return self.steps_per_epoch
        return max(1, math.ceil(index.n_states / self.batch_size))


class DenoisingAutoencoder(CohortEncoderMixin, _BaselineParams):
    """Reconstruct the clean current state from a corrupted input.

    Entries of the standardized input are zeroed with probability
    ``corruption``; the decoder is one 128-unit ELU layer. Weights with the
    lowest held-out (corrupted) reconstruction error are kept.
    """

    def __init__(self, encoder="mlp", n_components=3, hidden_dim=512, num_layers=8,
                 gru_hidden_dim=128, gru_layers=2, horizon=12, init="orthogonal",
                 batch_size=128, learning_rate=3e-5, epochs=25, validation_fraction=0.2,
                 steps_per_epoch=None, corruption=0.1, decoder_hidden=128, random_state=0):
        super().__init__(encoder, n_components, hidden_dim, num_layers, gru_hidden_dim, gru_layers,
                         horizon, init, batch_size, learning_rate, epochs, validation_fraction,
                         steps_per_epoch, random_state)
        self.corruption = corruption
        self.decoder_hidden = decoder_hidden

    def fit(self, X, y=None):
        cohort = check_cohort(X)
        seeds = np.random.SeedSequence(self.random_state).spawn(4)
        train_c, val_c = _split(self, cohort, np.random.default_rng(seeds[0]))
        init_rng = np.random.default_rng(seeds[1])
        encoder = _new_encoder(self, init_rng)
        encoder.fit_scaler(np.concatenate([p.states for p in train_c]))
        decoder = MlpSpec(self.n_components, STATE_DIM, self.decoder_hidden, 2, None)
        params = dict(encoder.params)
        params.update(init_mlp(decoder, init_rng, prefix="dec", init=self.init))
        train_idx, val_idx = StateIndex(train_c), StateIndex(val_c)
        horizon = encoder.horizon

        def recon_loss(params, x_raw, rng, tape=None):
            x = encoder.standardize(x_raw)
            target = x[:, -1, :] if x.ndim == 3 else x
            noisy = corrupt(x, self.corruption, rng)
            code = encoder.forward(noisy, params, tape, standardized=True)
            recon = mlp_forward(decoder, params, code, tape, prefix="dec")
            return ops.mean(ops.square(ops.sub(recon, target)))

        def draw(index, rng, n):
            p, h = index.all_positions()
            pick = rng.integers(0, index.n_states, size=n)
            return index.gather(p[pick], h[pick], horizon)

        val_rng = np.random.default_rng(seeds[2])
        val_x = draw(val_idx, val_rng, min(4096, val_idx.n_states))
        val_noise_seed = int(val_rng.integers(2**63))

        def step_loss(tape, params, rng):
            return {"total": recon_loss(params, draw(train_idx, rng, self.batch_size), rng, tape)}

        def val_loss(params):
            return recon_loss(params, val_x, np.random.default_rng(val_noise_seed)).item()

        best, history = fit_loop(params, step_loss, val_loss, self.epochs, self._steps(train_idx),
                                 self.learning_rate, np.random.default_rng(seeds[3]))
        encoder.params = {k: best[k] for k in encoder.params}
        self.model_ = encoder
        self.decoder_ = decoder
        self.decoder_params_ = {k: v for k, v in best.items() if k.startswith("dec.")}
        self.history_ = history
        return self

    def reconstruct(self, X) -> np.ndarray:
        """Decoded standardized state for each (uncorrupted) input."""
        code = self.transform(X)
        return mlp_forward(self.decoder_, self.decoder_params_, code, None, prefix="dec").data


class PlainTripletEmbedding(CohortEncoderMixin, _BaselineParams):
    """Unit-normalized embedding trained with noise-augmented positives.

    Anchor: a random state; positive: the anchor plus Gaussian noise of
    ``noise_std`` per standardized dimension; negative: a random state of a
    patient with the opposite outcome.
    """

    def __init__(self, encoder="mlp", n_components=3, hidden_dim=512, num_layers=8,
                 gru_hidden_dim=128, gru_layers=2, horizon=12, init="orthogonal",
                 batch_size=128, learning_rate=3e-5, epochs=10, validation_fraction=0.2,
                 steps_per_epoch=None, noise_std=0.1, margin=0.2, random_state=0):
        super().__init__(encoder, n_components, hidden_dim, num_layers, gru_hidden_dim, gru_layers,
                         horizon, init, batch_size, learning_rate, epochs, validation_fraction,
                         steps_per_epoch, random_state)
        self.noise_std = noise_std
        self.margin = margin

    @staticmethod
    def _normalize(emb):
        norm = ops.norm(emb)
        return ops.div(emb, ops.reshape(norm, (norm.shape[0], 1)))

    def make_triplets(self, index: StateIndex, rng: np.random.Generator, n: int, horizon=None):
        """Raw (anchor, positive, negative) inputs; positive noise is added after scaling."""
        p, h = index.all_positions()
        pick = rng.integers(0, index.n_states, size=n)
        a_p, a_h = p[pick], h[pick]
        anchor = index.gather(a_p, a_h, horizon)
        dead = np.flatnonzero(index.died)
        alive = np.flatnonzero(~index.died)
        if len(dead) == 0 or len(alive) == 0:
            raise ValueError("plain triplet training needs both outcomes")
        opp = np.where(index.died[a_p], alive[rng.integers(0, len(alive), n)], dead[rng.integers(0, len(dead), n)])
        opp_h = (rng.random(n) * index.lengths[opp]).astype(np.int64)
        negative = index.gather(opp, opp_h, horizon)
        noise = rng.normal(0.0, self.noise_std, size=anchor.shape)
        return anchor, noise, negative

    def fit(self, X, y=None):
        cohort = check_cohort(X)
        seeds = np.random.SeedSequence(self.random_state).spawn(4)
        train_c, val_c = _split(self, cohort, np.random.default_rng(seeds[0]))
        encoder = _new_encoder(self, np.random.default_rng(seeds[1]))
        encoder.fit_scaler(np.concatenate([p.states for p in train_c]))
        train_idx, val_idx = StateIndex(train_c), StateIndex(val_c)
        horizon = encoder.horizon

        def loss(params, triplets, tape=None):
            anchor, noise, negative = triplets
            a = encoder.standardize(anchor)
            x = np.concatenate([a, a + noise, encoder.standardize(negative)])
            emb = self._normalize(encoder.forward(x, params, tape, standardized=True))
            b = anchor.shape[0]
            return triplet_loss(ops.take(emb, np.arange(b)), ops.take(emb, np.arange(b, 2 * b)),
                                ops.take(emb, np.arange(2 * b, 3 * b)), self.margin)

        val_set = self.make_triplets(val_idx, np.random.default_rng(seeds[2]),
                                     min(2048, max(self.batch_size, val_idx.n_states)), horizon)

        def step_loss(tape, params, rng):
            return {"total": loss(params, self.make_triplets(train_idx, rng, self.batch_size, horizon), tape)}

        best, history = fit_loop(encoder.params, step_loss, lambda p: loss(p, val_set).item(),
                                 self.epochs, self._steps(train_idx), self.learning_rate,
                                 np.random.default_rng(seeds[3]))
        encoder.params = best
        self.model_ = encoder
        self.history_ = history
        return self

    def transform(self, X) -> np.ndarray:
        emb = self._embed(X)
        norms = np.linalg.norm(emb, axis=-1, keepdims=True)
        return emb / np.where(norms > 0, norms, 1.0)
