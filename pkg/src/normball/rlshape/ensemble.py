"""Bootstrapped c51 ensembles and their policy / value summaries."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..cohort import N_ACTIONS, PatientTrajectory
from .c51 import C51Agent, C51Config, greedy_action
from .mdp import build_mdp
from .rewards import RewardSpec, RiskModel, bootstrap_patients

AVERAGING_MODES = ("averaged_actions", "averaged_values")
VALUE_GROUPS = ("survivors", "nonsurvivors", "survivors_last24", "nonsurvivors_last24")


@dataclass
class Ensemble:
    members: list[C51Agent]
    fractions: list[float]
    subsets: list[np.ndarray]  # cohort positions used by each member
    config: C51Config
    riskmodel: RiskModel | None = field(default=None, repr=False)

    def inputs(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if not self.config.augment:
            return states
        return np.hstack([states, self.riskmodel.embed(states)])

    def member_distributions(self, states) -> np.ndarray:
        """Shape (members, n, 9, atoms)."""
        x = self.inputs(states)
        return np.stack([m.predict_distributions(x) for m in self.members])


def _fit_member(args):
    data, config, seed = args
    return C51Agent(config, random_state=seed).fit(data)


def bootstrap_ensemble(cohort: Sequence[PatientTrajectory], riskmodel: RiskModel, spec: RewardSpec,
                       config: C51Config | None = None, n_members: int = 5,
                       rng: np.random.Generator | None = None, jobs: int = 1) -> Ensemble:
    """Train ``n_members`` agents, each on floor(k * P) patients with k ~ U(0.6, 0.85).

    d(s) is computed once for the whole cohort and shared by every member.
    """
    config = C51Config() if config is None else config
    rng = np.random.default_rng(0) if rng is None else rng
    flat = riskmodel.compute_d(np.concatenate([p.states for p in cohort]))
    d_cache = np.split(flat, np.cumsum([p.length for p in cohort])[:-1])
    fractions, subsets, tasks = [], [], []
    for _ in range(n_members):
        k, idx = bootstrap_patients(len(cohort), rng)
        seed = int(rng.integers(2**31))
        data = build_mdp([cohort[i] for i in idx], riskmodel, spec, augment=config.augment,
                         d_cache=[d_cache[i] for i in idx])
        fractions.append(k)
        subsets.append(idx)
        tasks.append((data, config, seed))
    if jobs > 1 and n_members > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            members = list(pool.map(_fit_member, tasks))
    else:
        members = [_fit_member(t) for t in tasks]
    return Ensemble(members, fractions, subsets, config, riskmodel)


def majority_vote(actions: np.ndarray, n_actions: int = N_ACTIONS) -> np.ndarray:
    """Most frequent action per column of (members, n); ties to the lowest index."""
    actions = np.atleast_2d(actions)
    counts = np.zeros((actions.shape[1], n_actions), dtype=np.int64)
    for row in actions:
        counts[np.arange(actions.shape[1]), row] += 1
    return np.argmax(counts, axis=1)


def ensemble_actions(ensemble: Ensemble, states) -> dict[str, np.ndarray]:
    dists = ensemble.member_distributions(states)
    z = ensemble.config.z
    per_member = greedy_action(dists, z)
    return {
        "averaged_actions": majority_vote(np.atleast_2d(per_member)),
        "averaged_values": greedy_action(dists.mean(axis=0), z),
    }


def action_percentages(actions, n_actions: int = N_ACTIONS) -> np.ndarray:
    counts = np.bincount(np.asarray(actions, dtype=np.int64), minlength=n_actions)
    return 100.0 * counts / counts.sum()


def minmax_scale(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


@dataclass
class PolicyReport:
    percentages: dict[str, np.ndarray]  # mode or "clinician" -> (9,) percentages
    value_quartiles: dict[str, np.ndarray]  # group -> (min, q1, median, q3, max) of scaled values
    scaled_values: np.ndarray
    groups: dict[str, np.ndarray]  # group -> boolean mask over states

    def no_treatment(self, mode: str) -> float:
        return float(self.percentages[mode][0])


def state_groups(cohort: Sequence[PatientTrajectory], window: int = 24) -> dict[str, np.ndarray]:
    died = np.concatenate([np.full(p.length, p.died) for p in cohort])
    near = np.concatenate([p.hours_to_end < window for p in cohort])
    return {
        "survivors": ~died,
        "nonsurvivors": died,
        "survivors_last24": ~died & near,
        "nonsurvivors_last24": died & near,
    }


def policy_report(ensemble: Ensemble, cohort: Sequence[PatientTrajectory]) -> PolicyReport:
    """Recommended-action percentages under both averaging modes, the clinicians'
    logged percentages, and min-max-scaled optimal values per outcome group."""
    states = np.concatenate([p.states for p in cohort])
    dists = ensemble.member_distributions(states)
    z = ensemble.config.z
    per_member = np.atleast_2d(greedy_action(dists, z))
    mean_dists = dists.mean(axis=0)
    percentages = {
        "averaged_actions": action_percentages(majority_vote(per_member)),
        "averaged_values": action_percentages(greedy_action(mean_dists, z)),
        "clinician": action_percentages(np.concatenate([p.action_indices for p in cohort])),
    }
    scaled = minmax_scale((mean_dists @ z).max(axis=1))
    groups = state_groups(cohort)
    quartiles = {
        g: np.quantile(scaled[mask], [0.0, 0.25, 0.5, 0.75, 1.0]) if mask.any() else np.full(5, np.nan)
        for g, mask in groups.items()
    }
    return PolicyReport(percentages, quartiles, scaled, groups)
