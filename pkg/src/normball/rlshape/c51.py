"""Categorical (51-atom) distributional Q-learning on a fixed transition set."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..cohort import N_ACTIONS
from ..embedding.model import TrainingDivergedError
from ..numerics import AdamState, MlpSpec, Tape, adam_step, backward, init_mlp, mlp_forward, ops, softmax
from .mdp import TransitionSet


def support(n_atoms: int = 51, v_min: float = -18.0, v_max: float = 18.0) -> np.ndarray:
    if n_atoms < 2 or not v_min < v_max:
        raise ValueError("need n_atoms >= 2 and v_min < v_max")
    return np.linspace(v_min, v_max, n_atoms)


def c51_project(target_atoms, probs, z: np.ndarray) -> np.ndarray:
    """Project a distribution on arbitrary atoms onto the fixed support ``z``.

    Atoms are clipped to [z[0], z[-1]] and their mass is split linearly between
    the two neighbouring support points. Works on (K,) or batched (B, K) input.
    """
    target_atoms = np.asarray(target_atoms, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    single = target_atoms.ndim == 1
    tz = np.atleast_2d(target_atoms)
    p = np.broadcast_to(np.atleast_2d(probs), tz.shape)
    n = len(z)
    dz = (z[-1] - z[0]) / (n - 1)
    b = (np.clip(tz, z[0], z[-1]) - z[0]) / dz
    lower = np.floor(b).astype(np.int64)
    upper = np.ceil(b).astype(np.int64)
    lower = np.clip(lower, 0, n - 1)
    upper = np.clip(upper, 0, n - 1)
    exact = lower == upper
    rows = np.broadcast_to(np.arange(tz.shape[0])[:, None], tz.shape)
    out = np.zeros((tz.shape[0], n))
    np.add.at(out, (rows, lower), p * np.where(exact, 1.0, upper - b))
    np.add.at(out, (rows, upper), p * np.where(exact, 0.0, b - lower))
    return out[0] if single else out


def bellman_target(r, done, p_next, z: np.ndarray, gamma: float) -> np.ndarray:
    """Project r + gamma * z (just r when done) under ``p_next`` onto ``z``; shape (B, atoms)."""
    r = np.asarray(r, dtype=np.float64)
    live = 1.0 - np.asarray(done, dtype=np.float64)
    tz = r[:, None] + gamma * live[:, None] * z[None, :]
    return c51_project(tz, p_next, z)


@dataclass(frozen=True)
class C51Config:
    n_atoms: int = 51
    v_min: float = -18.0
    v_max: float = 18.0
    gamma: float = 0.999
    batch_size: int = 100
    learning_rate: float = 3e-4
    tau: float = 0.005
    epochs: int = 8
    hidden_dim: int = 256
    hidden_layers: int = 3
    augment: bool = False
    steps_per_epoch: int | None = None

    def __post_init__(self):
        support(self.n_atoms, self.v_min, self.v_max)
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 < self.tau <= 1.0:
            raise ValueError("need gamma in [0, 1] and tau in (0, 1]")
        if self.batch_size < 1 or self.epochs < 1 or self.hidden_layers < 0:
            raise ValueError("batch_size and epochs must be >= 1, hidden_layers >= 0")

    @property
    def z(self) -> np.ndarray:
        return support(self.n_atoms, self.v_min, self.v_max)


@dataclass
class C51History:
    losses: list[float] = field(default_factory=list)
    max_mass_error: float = 0.0  # worst |sum p - 1| seen on any training batch


def expected_values(dists: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.asarray(dists) @ z


def greedy_action(dists, z: np.ndarray) -> np.ndarray | int:
    """argmax_a sum_i p_i z_i; ties go to the lowest action index."""
    q = expected_values(dists, z)
    a = np.argmax(q, axis=-1)
    return int(a) if np.ndim(a) == 0 else a


class C51Agent(BaseEstimator):
    """Distributional Q-network: shared ELU trunk, 9 x n_atoms logits.

    Targets come from a soft-updated copy of the network, evaluated at the
    greedy next action; terminal transitions collapse the target to r.
    """

    def __init__(self, config: C51Config | None = None, random_state=0):
        self.config = config
        self.random_state = random_state

    def _cfg(self) -> C51Config:
        return self.config if self.config is not None else C51Config()

    def _spec(self, input_dim: int) -> MlpSpec:
        cfg = self._cfg()
        return MlpSpec(input_dim, N_ACTIONS * cfg.n_atoms, cfg.hidden_dim, cfg.hidden_layers + 1, None)

    def _logits(self, params, x, tape=None):
        x = (np.asarray(x, dtype=np.float64) - self.mean_) / self.scale_
        return mlp_forward(self.spec_, params, x, tape, prefix="q")

    def _dists(self, params, x) -> np.ndarray:
        logits = self._logits(params, x).data
        return softmax(logits.reshape(len(logits), N_ACTIONS, -1), axis=-1)

    def fit(self, X: TransitionSet, y=None):
        cfg = self._cfg()
        if not isinstance(X, TransitionSet) or len(X) == 0:
            raise TypeError("C51Agent.fit expects a non-empty TransitionSet")
        s, s_next = X.features(cfg.augment)
        rng = np.random.default_rng(self.random_state)
        z = cfg.z
        self.z_ = z
        self.spec_ = self._spec(s.shape[1])
        both = np.vstack([s, s_next])
        self.mean_ = both.mean(axis=0)
        std = both.std(axis=0)
        self.scale_ = np.where(std > 1e-12, std, 1.0)
        params = init_mlp(self.spec_, rng, prefix="q")
        target = {k: v.copy() for k, v in params.items()}
        state = AdamState.for_params(params, learning_rate=cfg.learning_rate)
        history = C51History()
        n = len(X)
        steps = cfg.steps_per_epoch or max(1, math.ceil(n / cfg.batch_size))
        step_no = 0
        for epoch in range(cfg.epochs):
            for _ in range(steps):
                idx = rng.integers(0, n, size=min(cfg.batch_size, n))
                a, r, done = X.a[idx], X.r[idx], X.done[idx]
                next_d = self._dists(target, s_next[idx])
                a_star = greedy_action(next_d, z)
                p_next = next_d[np.arange(len(idx)), a_star]
                m = bellman_target(r, done, p_next, z, cfg.gamma)

                tape = Tape()
                w = tape.watch(params)
                logits = self._logits(w, s[idx], tape)
                flat = ops.reshape(logits, (len(idx) * N_ACTIONS, cfg.n_atoms))
                chosen = ops.take(flat, np.arange(len(idx)) * N_ACTIONS + a)
                logp = ops.log_softmax(chosen, axis=-1)
                loss = ops.div(ops.neg(ops.sum(ops.mul(logp, m))), float(len(idx)))
                value = loss.item()
                mass = np.exp(logp.data).sum(axis=-1)
                history.max_mass_error = max(history.max_mass_error, float(np.abs(mass - 1.0).max()))
                if not np.isfinite(value):
                    raise TrainingDivergedError(
                        f"non-finite c51 loss at epoch {epoch} step {step_no}: "
                        f"reward range [{r.min():g}, {r.max():g}], max |logit| {np.abs(logits.data).max():g}"
                    )
                grads = backward(tape, loss)
                adam_step(params, grads, state)
                for k in params:
                    target[k] = cfg.tau * params[k] + (1.0 - cfg.tau) * target[k]
                history.losses.append(value)
                step_no += 1
        self.params_ = params
        self.target_params_ = target
        self.history_ = history
        return self

    def predict_distributions(self, X) -> np.ndarray:
        """Return distributions, shape (n, 9, n_atoms)."""
        check_is_fitted(self, "params_")
        return self._dists(self.params_, np.atleast_2d(X))

    def q_values(self, X) -> np.ndarray:
        return expected_values(self.predict_distributions(X), self.z_)

    def predict(self, X) -> np.ndarray:
        return greedy_action(self.predict_distributions(X), self.z_)
