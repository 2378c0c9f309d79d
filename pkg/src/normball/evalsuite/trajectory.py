"""Statistics of the risk trajectory and of angular organ structure."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..cohort import PatientTrajectory, worst_organs
from .metrics import embed_states

JUMP_EPS = 1e-9


@dataclass(frozen=True)
class JumpStats:
    mean: float
    n_pairs: int
    n_excluded: int  # pairs with d(s_t) <= eps


def jumps_from_risk(d_per_patient: Sequence[np.ndarray], eps: float = JUMP_EPS) -> JumpStats:
    """Mean of |d(s_{t+1}) - d(s_t)| / d(s_t) over consecutive in-stay pairs."""
    ratios = []
    excluded = 0
    for d in d_per_patient:
        d = np.asarray(d, dtype=np.float64)
        prev, nxt = d[:-1], d[1:]
        ok = prev > eps
        excluded += int((~ok).sum())
        ratios.append(np.abs(nxt[ok] - prev[ok]) / prev[ok])
    ratios = np.concatenate(ratios) if ratios else np.empty(0)
    mean = float(ratios.mean()) if ratios.size else float("nan")
    return JumpStats(mean, int(ratios.size), excluded)


def split_by_patient(flat: np.ndarray, cohort: Sequence[PatientTrajectory]) -> list[np.ndarray]:
    return np.split(flat, np.cumsum([p.length for p in cohort])[:-1])


def relative_jumps(model, cohort, eps: float = JUMP_EPS) -> JumpStats:
    d = np.sum(embed_states(model, cohort) ** 2, axis=-1)
    return jumps_from_risk(split_by_patient(d, cohort), eps)


@dataclass
class TimeCurve:
    """Mean d(x) per lag (hours before the terminal event); empty lags are absent."""

    lags: np.ndarray
    means: np.ndarray
    counts: np.ndarray


def curve_from_risk(d_per_patient, cohort, max_hours: int) -> dict[str, TimeCurve]:
    out = {}
    for outcome, wanted in (("death", True), ("release", False)):
        sums = np.zeros(max_hours + 1)
        counts = np.zeros(max_hours + 1, dtype=np.int64)
        for d, p in zip(d_per_patient, cohort):
            if p.died != wanted:
                continue
            lag = p.hours_to_end
            keep = lag <= max_hours
            np.add.at(sums, lag[keep], d[keep])
            np.add.at(counts, lag[keep], 1)
        present = counts > 0
        out[outcome] = TimeCurve(np.flatnonzero(present), sums[present] / counts[present], counts[present])
    return out


def time_to_event_curve(model, cohort, max_hours: int = 72) -> dict[str, TimeCurve]:
    """Averaged d(x) against hours-to-death and hours-to-release."""
    if max_hours < 0:
        raise ValueError("max_hours must be >= 0")
    d = np.sum(embed_states(model, cohort) ** 2, axis=-1)
    return curve_from_risk(split_by_patient(d, cohort), cohort, max_hours)


@dataclass(frozen=True)
class SeparationStats:
    within: float
    between: float
    gap: float
    n_states: int
    n_zero: int


def separation_from_embeddings(emb: np.ndarray, organs: np.ndarray) -> SeparationStats:
    """Mean pairwise cosine within and between worst-organ groups (self-pairs excluded)."""
    emb = np.asarray(emb, dtype=np.float64)
    organs = np.asarray(organs)
    norms = np.linalg.norm(emb, axis=1)
    nonzero = norms > 0
    unit = emb[nonzero] / norms[nonzero, None]
    org = organs[nonzero]
    cos = unit @ unit.T
    same = org[:, None] == org[None, :]
    off_diag = ~np.eye(len(org), dtype=bool)
    within_mask = same & off_diag
    between_mask = ~same
    within = float(cos[within_mask].mean()) if within_mask.any() else float("nan")
    between = float(cos[between_mask].mean()) if between_mask.any() else float("nan")
    return SeparationStats(within, between, within - between, int(nonzero.sum()), int((~nonzero).sum()))


def near_death_states(cohort, t: int = 24) -> tuple[list[PatientTrajectory], np.ndarray]:
    """Non-survivors and a mask over their stacked states marking the last ``t`` hours."""
    dead = [p for p in cohort if p.died]
    mask = np.concatenate([p.hours_to_end < t for p in dead]) if dead else np.zeros(0, bool)
    return dead, mask


def organ_separation(model, cohort, t: int = 24, max_states: int | None = 3000,
                     rng: np.random.Generator | None = None) -> SeparationStats:
    """Angular organ separation of near-death non-survivor states.

    At most ``max_states`` states (uniformly subsampled) enter the pairwise
    cosine matrix.
    """
    dead, mask = near_death_states(cohort, t)
    if not dead:
        raise ValueError("cohort has no non-survivors")
    emb = embed_states(model, dead)[mask]
    organs = worst_organs(np.concatenate([p.states for p in dead])[mask])
    if max_states is not None and len(emb) > max_states:
        rng = np.random.default_rng(0) if rng is None else rng
        pick = np.sort(rng.choice(len(emb), max_states, replace=False))
        emb, organs = emb[pick], organs[pick]
    return separation_from_embeddings(emb, organs)
