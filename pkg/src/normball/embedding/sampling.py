"""Triplet sampling: a terminal anchor plus near-terminal states from two other stays."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..cohort import PatientTrajectory, worst_organs
from .config import LossConfig


class SamplingError(ValueError):
    pass


class StateIndex:
    """Flat view of a cohort for vectorized gathering of states and histories."""

    def __init__(self, cohort: Sequence[PatientTrajectory]):
        if len(cohort) == 0:
            raise SamplingError("empty cohort")
        self.cohort = list(cohort)
        self.lengths = np.array([p.length for p in cohort], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)[:-1]])
        self.states = np.concatenate([p.states for p in cohort])
        self.died = np.array([p.died for p in cohort], dtype=bool)
        self.organs = worst_organs(self.states)

    def __len__(self) -> int:
        return len(self.cohort)

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    def rows(self, patients, hours) -> np.ndarray:
        return self.offsets[np.asarray(patients)] + np.asarray(hours)

    def gather(self, patients, hours, horizon: int | None = None) -> np.ndarray:
        """States (n, 41), or histories (n, horizon, 41) ending at each hour.

        Hours before admission are filled with the first recorded state.
        """
        patients = np.asarray(patients, dtype=np.int64)
        hours = np.asarray(hours, dtype=np.int64)
        if horizon is None:
            return self.states[self.rows(patients, hours)]
        lags = np.arange(-horizon + 1, 1)
        h = np.maximum(hours[:, None] + lags[None, :], 0)
        return self.states[self.offsets[patients][:, None] + h]

    def all_positions(self) -> tuple[np.ndarray, np.ndarray]:
        patients = np.repeat(np.arange(len(self.cohort)), self.lengths)
        hours = np.arange(self.n_states) - np.repeat(self.offsets, self.lengths)
        return patients, hours


def as_index(cohort_or_index) -> StateIndex:
    return cohort_or_index if isinstance(cohort_or_index, StateIndex) else StateIndex(cohort_or_index)


@dataclass
class TripletBatch:
    """Raw (unscaled) inputs and labels for a batch of triplets.

    ``y_ap`` is 1 when a death anchor and its positive share a worst organ;
    it is 0 and unused for release anchors. Organ labels are -1 for survivors.
    """

    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    anchor_death: np.ndarray
    y_ap: np.ndarray
    anchor_organ: np.ndarray
    positive_organ: np.ndarray
    negative_organ: np.ndarray
    anchor_patient: np.ndarray
    positive_patient: np.ndarray
    negative_patient: np.ndarray
    positive_hour: np.ndarray
    negative_hour: np.ndarray

    def __len__(self) -> int:
        return len(self.anchor_death)


def _pick_other(rng: np.random.Generator, pool: np.ndarray, exclude: np.ndarray) -> np.ndarray:
    """Uniform draw from ``pool`` per row, avoiding ``exclude`` whenever the pool allows."""
    out = pool[rng.integers(0, len(pool), size=len(exclude))]
    if len(pool) == 1:
        return out
    clash = out == exclude
    while np.any(clash):
        out[clash] = pool[rng.integers(0, len(pool), size=int(clash.sum()))]
        clash = out == exclude
    return out


def sample_triplet_batch(cohort, config: LossConfig, rng: np.random.Generator,
                         batch_size: int, horizon: int | None = None) -> TripletBatch:
    """Draw ``batch_size`` triplets.

    Anchors are terminal states of patients drawn with replacement, non-survivors
    weighted by ``config.nonsurvivor_weight``. For each anchor, one non-survivor
    and one survivor state from the last ``near_terminal_t`` hours of two other
    stays become the positive and negative according to the anchor's outcome.
    """
    index = as_index(cohort)
    dead = np.flatnonzero(index.died)
    alive = np.flatnonzero(~index.died)
    if len(dead) == 0 or len(alive) == 0:
        raise SamplingError("triplet sampling needs both survivors and non-survivors")
    weights = np.where(index.died, config.nonsurvivor_weight, 1.0)
    anchors = rng.choice(len(index), size=batch_size, p=weights / weights.sum())
    dead_pick = _pick_other(rng, dead, anchors)
    alive_pick = _pick_other(rng, alive, anchors)

    t = config.near_terminal_t

    def near_terminal_hour(patients):
        lengths = index.lengths[patients]
        window = np.minimum(lengths, t)
        return lengths - 1 - (rng.random(len(patients)) * window).astype(np.int64)

    dead_hour = near_terminal_hour(dead_pick)
    alive_hour = near_terminal_hour(alive_pick)
    anchor_hour = index.lengths[anchors] - 1
    anchor_death = index.died[anchors]

    pos_p = np.where(anchor_death, dead_pick, alive_pick)
    pos_h = np.where(anchor_death, dead_hour, alive_hour)
    neg_p = np.where(anchor_death, alive_pick, dead_pick)
    neg_h = np.where(anchor_death, alive_hour, dead_hour)

    def organ(patients, hours):
        labels = index.organs[index.rows(patients, hours)].astype(np.int64)
        return np.where(index.died[patients], labels, -1)

    a_org = organ(anchors, anchor_hour)
    p_org = organ(pos_p, pos_h)
    n_org = organ(neg_p, neg_h)
    y_ap = (anchor_death & (a_org == p_org)).astype(np.int64)
    return TripletBatch(
        anchor=index.gather(anchors, anchor_hour, horizon),
        positive=index.gather(pos_p, pos_h, horizon),
        negative=index.gather(neg_p, neg_h, horizon),
        anchor_death=anchor_death,
        y_ap=y_ap,
        anchor_organ=a_org,
        positive_organ=p_org,
        negative_organ=n_org,
        anchor_patient=anchors,
        positive_patient=pos_p,
        negative_patient=neg_p,
        positive_hour=pos_h,
        negative_hour=neg_h,
    )
