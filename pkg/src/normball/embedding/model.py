"""Encoders mapping states (or 12-hr histories) into the unit ball, and their training."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..cohort import STATE_DIM, PatientTrajectory
from ..numerics import (
    AdamState,
    GruSpec,
    MlpSpec,
    Tape,
    Tensor,
    adam_step,
    backward,
    gru_forward,
    init_gru,
    init_mlp,
    load_params,
    mlp_forward,
    ops,
    save_params,
)
from .config import LossConfig
from .losses import loss_components
from .sampling import SamplingError, StateIndex, TripletBatch, as_index, sample_triplet_batch

ENCODERS = ("mlp", "gru")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class EmbeddingModel:
    """Encoder parameters plus the input standardization they were trained with.

    ``encoder='mlp'`` maps a 41-dim state through ``head``. ``encoder='gru'``
    runs ``gru`` over the trailing ``horizon`` hours and feeds
    [final hidden state, current state] to ``head``.
    """

    encoder: str
    head: MlpSpec
    params: dict[str, np.ndarray]
    gru: GruSpec | None = None
    mean: np.ndarray = field(default_factory=lambda: np.zeros(STATE_DIM))
    scale: np.ndarray = field(default_factory=lambda: np.ones(STATE_DIM))

    @classmethod
    def create(cls, encoder: str = "mlp", n_components: int = 3, hidden_dim: int = 512,
               num_layers: int = 8, gru_hidden_dim: int = 128, gru_layers: int = 2,
               horizon: int = 12, output_activation: str | None = "tanh",
               init: str = "orthogonal", rng: np.random.Generator | None = None) -> "EmbeddingModel":
        if encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}")
        rng = np.random.default_rng(0) if rng is None else rng
        gru = None
        params = {}
        head_in = STATE_DIM
        if encoder == "gru":
            gru = GruSpec(STATE_DIM, gru_hidden_dim, gru_layers, horizon)
            params.update(init_gru(gru, rng, init=init))
            head_in = gru_hidden_dim + STATE_DIM
        head = MlpSpec(head_in, n_components, hidden_dim, num_layers, output_activation)
        params.update(init_mlp(head, rng, init=init))
        return cls(encoder, head, params, gru)

    @property
    def n_components(self) -> int:
        return self.head.output_dim

    @property
    def horizon(self) -> int | None:
        return self.gru.horizon if self.gru is not None else None

    def fit_scaler(self, states: np.ndarray) -> "EmbeddingModel":
        states = np.asarray(states, dtype=np.float64)
        self.mean = states.mean(axis=0)
        std = states.std(axis=0)
        self.scale = np.where(std > 1e-12, std, 1.0)
        return self

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def forward(self, x: np.ndarray, params: dict | None = None, tape: Tape | None = None,
                standardized: bool = False) -> Tensor:
        """Embed raw inputs: (n, 41) for the MLP, (n, horizon, 41) for the GRU."""
        params = self.params if params is None else params
        x = np.asarray(x, dtype=np.float64)
        if not standardized:
            x = self.standardize(x)
        if self.encoder == "mlp":
            return mlp_forward(self.head, params, x, tape)
        hidden = gru_forward(self.gru, params, x, tape)
        current = x[..., -1, :]
        if tape is not None:
            current = tape.constant(current)
        axis = hidden.ndim - 1
        return mlp_forward(self.head, params, ops.concat([hidden, current], axis=axis), tape)

    def embed(self, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] <= chunk:
            return self.forward(x).data
        return np.concatenate([self.forward(x[i:i + chunk]).data for i in range(0, x.shape[0], chunk)])

    def inputs_for(self, index: StateIndex, patients, hours) -> np.ndarray:
        return index.gather(patients, hours, self.horizon)

    def embed_index(self, index: StateIndex) -> np.ndarray:
        """Embeddings of every state of an indexed cohort, in cohort order."""
        patients, hours = index.all_positions()
        return self.embed(self.inputs_for(index, patients, hours))

    def embed_cohort(self, cohort: Sequence[PatientTrajectory]) -> list[np.ndarray]:
        index = as_index(cohort)
        flat = self.embed_index(index)
        return np.split(flat, np.cumsum(index.lengths)[:-1])

    def risk(self, x: np.ndarray) -> np.ndarray:
        return np.sum(self.embed(x) ** 2, axis=-1)

    def copy(self) -> "EmbeddingModel":
        return copy.deepcopy(self)

    # --- persistence
    def arch_meta(self) -> dict:
        meta = {
            "encoder": self.encoder,
            "n_components": self.head.output_dim,
            "hidden_dim": self.head.hidden_dim,
            "num_layers": self.head.num_layers,
            "output_activation": self.head.output_activation,
        }
        if self.gru is not None:
            meta.update(gru_hidden_dim=self.gru.hidden_dim, gru_layers=self.gru.num_layers,
                        horizon=self.gru.horizon)
        return meta

    def save(self, path, extra_meta: dict | None = None) -> None:
        tensors = dict(self.params)
        tensors["scaler.mean"] = self.mean
        tensors["scaler.scale"] = self.scale
        meta = {f"arch.{k}": v for k, v in self.arch_meta().items()}
        meta.update(extra_meta or {})
        save_params(path, tensors, meta)

    @classmethod
    def load(cls, path) -> tuple["EmbeddingModel", dict[str, str]]:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        tensors, meta = load_params(path)
        arch = {k[5:]: v for k, v in meta.items() if k.startswith("arch.")}
        act = arch.get("output_activation", "tanh")
        model = cls.create(
            encoder=arch.get("encoder", "mlp"),
            n_components=int(arch.get("n_components", 3)),
            hidden_dim=int(arch.get("hidden_dim", 512)),
            num_layers=int(arch.get("num_layers", 8)),
            gru_hidden_dim=int(arch.get("gru_hidden_dim", 128)),
            gru_layers=int(arch.get("gru_layers", 2)),
            horizon=int(arch.get("horizon", 12)),
            output_activation=None if act == "None" else act,
        )
        model.mean = tensors.pop("scaler.mean")
        model.scale = tensors.pop("scaler.scale")
        if set(tensors) != set(model.params):
            raise ValueError("checkpoint tensors do not match the recorded architecture")
        model.params = {k: tensors[k] for k in model.params}
        return model, meta


def batch_components(batch: TripletBatch, model: EmbeddingModel, config: LossConfig,
                     params: dict | None = None, tape: Tape | None = None) -> dict[str, Tensor]:
    """Embed anchor/positive/negative in one pass and evaluate every loss term."""
    b = len(batch)
    stacked = np.concatenate([batch.anchor, batch.positive, batch.negative])
    emb = model.forward(stacked, params, tape)
    a = ops.take(emb, np.arange(0, b))
    p = ops.take(emb, np.arange(b, 2 * b))
    n = ops.take(emb, np.arange(2 * b, 3 * b))
    return loss_components(a, p, n, batch.anchor_death, batch.y_ap, config)


def batch_total_loss(batch: TripletBatch, model: EmbeddingModel, config: LossConfig,
                     params: dict | None = None, tape: Tape | None = None) -> Tensor:
    return batch_components(batch, model, config, params, tape)["total"]


@dataclass
class TrainHistory:
    batch_losses: list[list[float]] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def train_losses(self) -> list[float]:
        return [float(np.mean(b)) for b in self.batch_losses]


def fit_loop(params: dict[str, np.ndarray], step_loss: Callable, val_loss: Callable, epochs: int,
             steps_per_epoch: int, learning_rate: float, rng: np.random.Generator,
             callback: Callable | None = None) -> tuple[dict[str, np.ndarray], TrainHistory]:
    """Seeded mini-batch Adam with best-validation checkpointing.

    ``step_loss(tape, params, rng)`` returns a dict of Tensors with a ``total``
    entry; ``val_loss(params)`` returns a float. Returns the parameters from the
    epoch with the lowest validation loss (earliest on ties).
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    state = AdamState.for_params(params, learning_rate=learning_rate)
    history = TrainHistory()
    best = None
    best_val = math.inf
    for epoch in range(epochs):
        losses = []
        for step in range(steps_per_epoch):
            tape = Tape()
            watched = tape.watch(params)
            parts = step_loss(tape, watched, rng)
            total = parts["total"]
            if not np.isfinite(total.item()):
                bad = [k for k, v in parts.items() if k != "total" and not np.all(np.isfinite(v.data))]
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {step}; offending term(s): {bad or ['total']}"
                )
            grads = backward(tape, total)
            adam_step(params, grads, state)
            losses.append(total.item())
        val = float(val_loss(params))
        if not np.isfinite(val):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        history.batch_losses.append(losses)
        history.val_losses.append(val)
        if callback is not None:
            callback(epoch, {k: v.copy() for k, v in params.items()}, val)
        if val < best_val:
            best_val = val
            best = {k: v.copy() for k, v in params.items()}
            history.best_epoch = epoch
    return best, history


@dataclass
class Checkpoint:
    model: EmbeddingModel
    history: TrainHistory
    config: LossConfig

    @property
    def best_epoch(self) -> int:
        return self.history.best_epoch

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {f"loss.{k}": v for k, v in self.config.as_dict().items()}
        meta["best_epoch"] = self.best_epoch
        meta.update(extra_meta or {})
        self.model.save(path, meta)


def _check_outcomes(index: StateIndex, what: str) -> None:
    if index.died.all() or (~index.died).all():
        raise SamplingError(f"{what} cohort must contain both survivors and non-survivors")


def train(model: EmbeddingModel, train_cohort, val_cohort, config: LossConfig,
          rng: np.random.Generator, steps_per_epoch: int | None = None,
          val_triplets: int | None = None, callback: Callable | None = None) -> Checkpoint:
    """Train ``model`` on the composite objective and keep the best-validation weights.

    An epoch is ``ceil(train states / batch size)`` steps unless
    ``steps_per_epoch`` is given. The validation triplets are drawn once, from a
    seed taken from ``rng``, so epochs are scored on identical data.
    """
    train_index, val_index = as_index(train_cohort), as_index(val_cohort)
    _check_outcomes(train_index, "training")
    _check_outcomes(val_index, "validation")
    batch_size = config.resolved_batch_size(model.encoder)
    if steps_per_epoch is None:
        steps_per_epoch = max(1, math.ceil(train_index.n_states / batch_size))
    val_rng = np.random.default_rng(rng.integers(2**63))
    if val_triplets is None:
        val_triplets = min(2048, max(batch_size, 2 * len(val_index)))
    val_batch = sample_triplet_batch(val_index, config, val_rng, val_triplets, model.horizon)

    def step_loss(tape, params, step_rng):
        batch = sample_triplet_batch(train_index, config, step_rng, batch_size, model.horizon)
        return batch_components(batch, model, config, params, tape)

    def val_loss(params):
        return batch_total_loss(val_batch, model, config, params).item()

    best, history = fit_loop(model.params, step_loss, val_loss, config.epochs, steps_per_epoch,
                             config.learning_rate, rng, callback)
    trained = model.copy()
    trained.params = best
    return Checkpoint(trained, history, config)
