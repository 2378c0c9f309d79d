"""AUROC scoring and the within-h-hours-of-death tasks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from ..cohort import COL, PatientTrajectory, sofa4
from ..embedding.sampling import StateIndex

HORIZONS = (12, 24, 48, 72, 120)
BASELINE_SCORES = ("SOFA", "SOFA4")


class DegenerateLabelsError(ValueError):
    """Raised when AUROC is requested for a single-class label vector."""


@dataclass(frozen=True)
class RocResult:
    auroc: float
    n_positive: int
    n_negative: int


def auroc(scores, labels) -> RocResult:
    """Mann-Whitney AUROC: P(score of a positive > score of a negative), ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0/1")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(f"AUROC needs both classes (got {n_pos} positive, {n_neg} negative)")
    ranks = rankdata(scores)  # average ranks, so ties contribute 1/2
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return RocResult(float(u / (n_pos * n_neg)), n_pos, n_neg)


def horizon_labels(cohort: Sequence[PatientTrajectory], horizon: int) -> np.ndarray:
    """1 for non-survivor states fewer than ``horizon`` hours before death, else 0."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return np.concatenate([(p.hours_to_end < horizon) & p.died for p in cohort]).astype(np.int64)


def patient_groups(cohort: Sequence[PatientTrajectory]) -> np.ndarray:
    """Patient position of every state, in cohort order."""
    return np.repeat(np.arange(len(cohort)), [p.length for p in cohort])


def embed_states(model, cohort: Sequence[PatientTrajectory]) -> np.ndarray:
    """Stacked embeddings of every state for a fitted estimator or an EmbeddingModel."""
    if hasattr(model, "transform"):
        return np.asarray(model.transform(list(cohort)))
    return model.embed_index(StateIndex(cohort))


def risk_scores(model, cohort) -> np.ndarray:
    return np.sum(embed_states(model, cohort) ** 2, axis=-1)


def scores_auroc(scores, cohort, horizons: Sequence[int] = HORIZONS) -> dict[int, RocResult]:
    return {h: auroc(scores, horizon_labels(cohort, h)) for h in horizons}


def norm_auroc(model, cohort, horizons: Sequence[int] = HORIZONS) -> dict[int, RocResult]:
    """AUROC of d(x) for each within-h-hours-of-death task."""
    return scores_auroc(risk_scores(model, cohort), cohort, horizons)


def baseline_scores(cohort, score: str = "SOFA") -> np.ndarray:
    states = np.concatenate([p.states for p in cohort])
    if score == "SOFA":
        return states[:, COL["sofa"]]
    if score == "SOFA4":
        return sofa4(states)
    raise ValueError(f"score must be one of {BASELINE_SCORES}")


def baseline_score_auroc(cohort, horizons: Sequence[int] = HORIZONS, score: str = "SOFA") -> dict[int, RocResult]:
    return scores_auroc(baseline_scores(cohort, score), cohort, horizons)


def mean_auroc(results: dict[int, RocResult]) -> float:
    """Unweighted mean over horizons."""
    return float(np.mean([r.auroc for r in results.values()]))
