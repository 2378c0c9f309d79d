"""Offline transition datasets built from cohorts."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..cohort import CSV_HEADER, PatientTrajectory, cohort_rows, load_cohort_csv
from ..numerics import atomic_write_text
from .rewards import RewardSpec, RiskModel, step_reward, terminal_reward

TRANSITION_COLUMNS = ("r", "done", "d_s", "d_s_next")


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class TransitionSet:
    """Column-stacked transitions; row i is (s[i], a[i], r[i], s_next[i], done[i])."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    d_s: np.ndarray
    d_next: np.ndarray
    patient: np.ndarray  # cohort position of the stay
    hour: np.ndarray
    emb_s: np.ndarray | None = field(default=None, repr=False)
    emb_next: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.a)

    def __getitem__(self, i: int) -> Transition:
        return Transition(self.s[i], int(self.a[i]), float(self.r[i]), self.s_next[i], bool(self.done[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def features(self, augment: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Network inputs for s and s'; augmented inputs append the embedding."""
        if not augment:
            return self.s, self.s_next
        if self.emb_s is None:
            raise ValueError("dataset was built without embeddings; pass augment=True to build_mdp")
        return np.hstack([self.s, self.emb_s]), np.hstack([self.s_next, self.emb_next])

    def subset(self, rows) -> "TransitionSet":
        rows = np.asarray(rows)
        pick = lambda x: None if x is None else x[rows]  # noqa: E731
        return TransitionSet(*(pick(getattr(self, f)) for f in self.__dataclass_fields__))

    def returns(self) -> np.ndarray:
        """Undiscounted return per stay, in cohort-position order of the stays present."""
        patients = np.unique(self.patient)
        return np.array([self.r[self.patient == p].sum() for p in patients])


def build_mdp(cohort: Sequence[PatientTrajectory], riskmodel: RiskModel | None, spec: RewardSpec,
              augment: bool = False, d_cache: list[np.ndarray] | None = None) -> TransitionSet:
    """Consecutive-hour transitions of every stay; the last one is terminal.

    d(s) is evaluated once per state (or taken from ``d_cache``, one array per
    stay). A T-hour stay yields T-1 transitions; stays of one hour yield none.
    """
    if d_cache is None:
        if riskmodel is None:
            raise ValueError("need a risk model or a d cache")
        flat = riskmodel.compute_d(np.concatenate([p.states for p in cohort]))
        d_cache = np.split(flat, np.cumsum([p.length for p in cohort])[:-1])
    parts = {k: [] for k in ("s", "a", "r", "s_next", "done", "d_s", "d_next", "patient", "hour")}
    for i, (p, d) in enumerate(zip(cohort, d_cache)):
        if p.length < 2:
            continue
        n = p.length - 1
        r = step_reward(spec, d[:-1], d[1:])
        r[-1] = terminal_reward(spec, d[-1], p.outcome)
        done = np.zeros(n, dtype=bool)
        done[-1] = True
        parts["s"].append(p.states[:-1])
        parts["a"].append(p.action_indices[:-1])
        parts["r"].append(r)
        parts["s_next"].append(p.states[1:])
        parts["done"].append(done)
        parts["d_s"].append(d[:-1])
        parts["d_next"].append(d[1:])
        parts["patient"].append(np.full(n, i))
        parts["hour"].append(np.arange(n))
    if not parts["a"]:
        raise ValueError("no transitions: every stay is a single hour")
    ts = TransitionSet(**{k: np.concatenate(v) for k, v in parts.items()})
    if augment:
        if riskmodel is None:
            raise ValueError("augmentation needs a risk model")
        ts.emb_s = riskmodel.embed(ts.s)
        ts.emb_next = riskmodel.embed(ts.s_next)
    return ts


def save_transitions_csv(ts: TransitionSet, cohort: Sequence[PatientTrajectory], path) -> None:
    """Cohort CSV with r, done, d_s, d_s_next filled on rows that start a transition."""
    lookup = {(int(p), int(h)): i for i, (p, h) in enumerate(zip(ts.patient, ts.hour))}
    positions = [(pos, hour) for pos, p in enumerate(cohort) for hour in range(p.length)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER + TRANSITION_COLUMNS)
    for key, row in zip(positions, cohort_rows(cohort)):
        j = lookup.get(key)
        extra = ["", "", "", ""] if j is None else [
            repr(float(ts.r[j])), str(int(ts.done[j])), repr(float(ts.d_s[j])), repr(float(ts.d_next[j]))]
        writer.writerow(row + extra)
    atomic_write_text(path, buf.getvalue())


def load_transitions_csv(path) -> tuple[list[PatientTrajectory], TransitionSet]:
    """Inverse of :func:`save_transitions_csv` (embeddings are not stored)."""
    cohort = load_cohort_csv(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if any(c not in reader.fieldnames for c in TRANSITION_COLUMNS):
            raise ValueError(f"transition CSV needs columns {TRANSITION_COLUMNS}")
        extra = [row for row in reader if row["patient_id"]]
    d_cache, rewards = [], []
    k = 0
    for p in cohort:
        block = extra[k:k + p.length - 1]
        k += p.length
        d = [float(b["d_s"]) for b in block] + ([float(block[-1]["d_s_next"])] if block else [0.0])
        d_cache.append(np.array(d))
        rewards.extend(float(b["r"]) for b in block)
    ts = build_mdp(cohort, None, RewardSpec(), d_cache=d_cache)
    ts.r = np.array(rewards)
    return cohort, ts
