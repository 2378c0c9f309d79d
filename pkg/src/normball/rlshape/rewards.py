"""Terminal and embedding-shaped rewards, and the ensemble risk model d(s)."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..cohort import Outcome, split_cohort
from ..embedding import LossConfig, NormedEmbedding


class RewardKind(str, enum.Enum):
    TERMINAL = "terminal"
    R1 = "r1"
    R2 = "r2"


@dataclass(frozen=True)
class RewardSpec:
    """``terminal``: only the terminal reward. ``r1``: coef*(d(s)-d(s')).
    ``r2``: coef*(d(s)-d(s')) - penalty*[d(s')>threshold]*d(s')."""

    kind: RewardKind = RewardKind.TERMINAL
    death_reward: float = -15.0
    release_scale: float = 15.0
    r1_coef: float = 0.375
    r2_coef: float = 3.75
    r2_penalty: float = 0.25
    r2_threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", RewardKind(self.kind))


def terminal_reward(spec: RewardSpec, d_terminal, outcome: Outcome):
    d = np.asarray(d_terminal, dtype=np.float64)
    if Outcome(outcome) is Outcome.DEATH:
        return np.full(d.shape, spec.death_reward)
    return spec.release_scale * (1.0 - d)


def step_reward(spec: RewardSpec, d_s, d_next):
    """Reward of a non-terminal transition (vectorized)."""
    d_s = np.asarray(d_s, dtype=np.float64)
    d_next = np.asarray(d_next, dtype=np.float64)
    if spec.kind is RewardKind.TERMINAL:
        return np.zeros(np.broadcast(d_s, d_next).shape)
    if spec.kind is RewardKind.R1:
        return spec.r1_coef * (d_s - d_next)
    return spec.r2_coef * (d_s - d_next) - spec.r2_penalty * (d_next > spec.r2_threshold) * d_next


def reward(spec: RewardSpec, d_s: float, d_next: float, outcome: Outcome | None = None) -> float:
    """Reward for s -> s'. With ``outcome`` set, s' is the final state of the stay
    and only the terminal reward (using d(s')) is returned."""
    if outcome is not None:
        return float(terminal_reward(spec, d_next, outcome))
    return float(step_reward(spec, d_s, d_next))


def _member_embed(member, states: np.ndarray) -> np.ndarray:
    if hasattr(member, "embed"):
        return np.asarray(member.embed(states))
    return np.asarray(member.transform(states))


class RiskModel:
    """d(s) = mean over member encoders of the squared embedding norm."""

    def __init__(self, members: Sequence):
        if len(members) == 0:
            raise ValueError("RiskModel needs at least one member")
        self.members = list(members)

    def member_risks(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        return np.stack([np.sum(_member_embed(m, states) ** 2, axis=-1) for m in self.members])

    def compute_d(self, states) -> np.ndarray:
        return self.member_risks(states).mean(axis=0)

    def embed(self, states) -> np.ndarray:
        """First member's embedding, used to augment RL states."""
        return _member_embed(self.members[0], np.atleast_2d(np.asarray(states, dtype=np.float64)))

    @property
    def n_components(self) -> int:
        return int(self.embed(np.zeros((1, 41))).shape[-1])


def bootstrap_patients(n_patients: int, rng: np.random.Generator, low: float = 0.6, high: float = 0.85):
    """Draw k ~ U(low, high) and floor(k * n) patient positions without replacement."""
    k = float(rng.uniform(low, high))
    size = max(1, int(np.floor(k * n_patients)))
    return k, np.sort(rng.choice(n_patients, size=size, replace=False))


def _has_both(cohort) -> bool:
    died = [p.died for p in cohort]
    return any(died) and not all(died)


def fit_risk_model(cohort, n_members: int = 10, n_components: int = 10, loss_config: LossConfig | None = None,
                   rng: np.random.Generator | None = None, **estimator_params) -> RiskModel:
    """Train ``n_members`` normed embeddings on bootstrapped patient subsets."""
    rng = np.random.default_rng(0) if rng is None else rng
    members = []
    while len(members) < n_members:
        _, idx = bootstrap_patients(len(cohort), rng)
        subset = [cohort[i] for i in idx]
        seed = int(rng.integers(2**31))
        train_c, val_c = split_cohort(subset, 0.8, np.random.default_rng(seed))
        if not (_has_both(train_c) and _has_both(val_c)):
            continue
        est = NormedEmbedding(n_components=n_components, loss_config=loss_config, random_state=seed,
                              **estimator_params).fit(train_c, val_cohort=val_c)
        members.append(est.model_)
    return RiskModel(members)
