"""Patient trajectories, a synthetic sepsis-like cohort generator, and CSV I/O.

Every state is a 41-dim float64 vector: 27 observed columns (demographics,
vitals, 24-hr organ scores, labs) followed by 14 auxiliary channels. Hours
are 0-based row indices within a stay; the final row carries the outcome.
"""
from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEMOGRAPHICS = ("age", "gender", "weight")
VITALS = ("hr", "sbp", "dbp", "map", "temp", "spo2", "rr")
SCORES = ("sofa", "liver", "renal", "cns", "cardio")
LABS = (
    "anion_gap", "bicarbonate", "creatinine", "chloride", "glucose", "hematocrit",
    "hemoglobin", "platelet", "potassium", "sodium", "bun", "wbc",
)
AUX = tuple(f"aux_{i}" for i in range(14))
STATE_COLUMNS = DEMOGRAPHICS + VITALS + SCORES + LABS + AUX
STATE_DIM = len(STATE_COLUMNS)  # 41
OBSERVED_DIM = STATE_DIM - len(AUX)  # 27
COL = {name: i for i, name in enumerate(STATE_COLUMNS)}
CSV_HEADER = ("patient_id", "hour") + STATE_COLUMNS + ("vaso", "fluids", "outcome")
N_ACTIONS = 9


class Outcome(enum.Enum):
    DEATH = "DEATH"
    RELEASE = "RELEASE"


class OrganLabel(enum.IntEnum):
    """Ordered by tie-break priority: lower value wins ties."""

    CARDIO = 0
    CNS = 1
    LIVER = 2
    RENAL = 3


# state columns holding each organ subscore, in OrganLabel order
ORGAN_COLUMNS = (COL["cardio"], COL["cns"], COL["liver"], COL["renal"])


def action_index(vaso, fluids):
    """Flatten (vaso, fluids) bins to 0..8; 0 means no treatment."""
    return 3 * np.asarray(vaso) + np.asarray(fluids)


def action_pair(index):
    index = np.asarray(index)
    return index // 3, index % 3


def worst_organ(scores: Sequence[float]) -> OrganLabel:
    """Organ with the highest subscore, given (cardio, cns, liver, renal).

    Ties go to the earliest organ in that order.
    """
    if len(scores) != 4:
        raise ValueError(f"expected 4 organ subscores, got {len(scores)}")
    return OrganLabel(int(np.argmax(np.asarray(scores, dtype=float))))


def worst_organs(states: np.ndarray) -> np.ndarray:
    """Vectorized :func:`worst_organ` over rows of full state vectors."""
    return np.argmax(np.asarray(states)[..., list(ORGAN_COLUMNS)], axis=-1)


def sofa4(states: np.ndarray) -> np.ndarray:
    return np.asarray(states)[..., list(ORGAN_COLUMNS)].sum(axis=-1)


@dataclass(frozen=True, eq=False)
class PatientTrajectory:
    patient_id: str
    states: np.ndarray  # (T, 41)
    actions: np.ndarray  # (T, 2) int: vaso, fluids
    outcome: Outcome

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        actions = np.asarray(self.actions, dtype=np.int64)
        if states.ndim != 2 or states.shape[1] != STATE_DIM or states.shape[0] < 1:
            raise ValueError(f"states must be (T>=1, {STATE_DIM}), got {states.shape}")
        if actions.shape != (states.shape[0], 2):
            raise ValueError(f"actions must be ({states.shape[0]}, 2), got {actions.shape}")
        if actions.min() < 0 or actions.max() > 2:
            raise ValueError("action bins must lie in {0, 1, 2}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "outcome", Outcome(self.outcome))

    @property
    def length(self) -> int:
        return self.states.shape[0]

    @property
    def died(self) -> bool:
        return self.outcome is Outcome.DEATH

    @property
    def action_indices(self) -> np.ndarray:
        return action_index(self.actions[:, 0], self.actions[:, 1])

    @property
    def hours_to_end(self) -> np.ndarray:
        return np.arange(self.length - 1, -1, -1)

    def equals(self, other: "PatientTrajectory") -> bool:
        return (
            self.patient_id == other.patient_id
            and self.outcome is other.outcome
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
        )


Cohort = list  # list[PatientTrajectory]


def cohorts_equal(a: Sequence[PatientTrajectory], b: Sequence[PatientTrajectory]) -> bool:
    return len(a) == len(b) and all(x.equals(y) for x, y in zip(a, b))


def near_terminal_hours(length: int, t: int) -> np.ndarray:
    """Row indices whose time-to-end is below ``t``."""
    if t < 1:
        raise ValueError("window t must be >= 1")
    return np.arange(max(0, length - t), length)


def near_terminal_states(traj: PatientTrajectory, t: int) -> np.ndarray:
    return traj.states[near_terminal_hours(traj.length, t)]


def split_cohort(cohort: Sequence[PatientTrajectory], train_fraction: float, rng: np.random.Generator):
    """Patient-level random split into (train, test)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(cohort)
    n_train = int(round(train_fraction * n))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    order = rng.permutation(n)
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    return [cohort[i] for i in train_idx], [cohort[i] for i in test_idx]


# ---------------------------------------------------------------- generator

@dataclass(frozen=True)
class CohortConfig:
    num_patients: int = 1000
    survivor_fraction: float = 0.9
    min_length: int = 24
    max_length: int = 72
    noise_scale: float = 1.0
    organ_weights: tuple[float, float, float, float] = (0.4, 0.2, 0.15, 0.25)
    treatment_effect: float = 0.15
    baseline_scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_patients < 1:
            raise ValueError("num_patients must be >= 1")
        if not 0.0 < self.survivor_fraction < 1.0:
            raise ValueError("survivor_fraction must lie in (0, 1)")
        if self.min_length < 13 or self.max_length < self.min_length:
            raise ValueError("need 13 <= min_length <= max_length")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        w = np.asarray(self.organ_weights, dtype=float)
        if w.shape != (4,) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("organ_weights must be 4 non-negative numbers with positive sum")
        if not 0.0 <= self.treatment_effect < 0.4:
            raise ValueError("treatment_effect must lie in [0, 0.4)")
        if self.baseline_scale < 0:
            raise ValueError("baseline_scale must be >= 0")


@dataclass
class LatentPath:
    """Generator internals kept for checks; never written to disk."""

    risk: np.ndarray
    mode: OrganLabel
    loads: np.ndarray = field(repr=False)


def _quantize(load: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(load * 5.0), 0, 4)


def _simulate_patient(pid: int, died: bool, cfg: CohortConfig, rng: np.random.Generator,
                      lab_projection: np.ndarray):
    s = cfg.noise_scale
    T = int(rng.integers(cfg.min_length, cfg.max_length + 1))
    weights = np.asarray(cfg.organ_weights, dtype=float)
    mode = int(rng.choice(4, p=weights / weights.sum()))
    affinity = rng.uniform(0.15, 0.55, size=4)
    affinity[mode] = 1.0
    rate = rng.uniform(2.0, 4.0) / T
    # survivors deteriorate for a while before recovering
    turn = int(rng.uniform(0.0, 0.4) * T) if not died else T

    age = float(np.clip(rng.normal(65, 14), 18, 95))
    gender = float(rng.integers(0, 2))
    weight = float(np.clip(rng.normal(80, 16), 40, 160))
    # chronic baselines (vascular, kidney, marrow, metabolic): shift observations only
    vas, ckd, marrow, meta = cfg.baseline_scale * rng.standard_normal(4)
    weight = float(np.clip(weight + 12 * meta, 40, 160))

    risk = np.empty(T)
    loads = np.empty((T, 4))
    states = np.empty((T, STATE_DIM))
    actions = np.zeros((T, 2), dtype=np.int64)
    cardio_ema = np.zeros(4)
    lab_ema = np.zeros(10)
    rho = rng.uniform(0.15, 0.5)
    prev_vaso = prev_fluids = 0

    for t in range(T):
        if t > 0:
            relief = 1.0 - cfg.treatment_effect * (prev_vaso + 0.7 * prev_fluids) / 2.0
            step = rate * rng.exponential(1.0)
            if died or t <= turn:
                rho = rho + (1.0 - rho) * step * relief
            else:
                rho = rho - rho * step * (2.0 - relief) + 0.01 * s * rng.standard_normal()
            rho = float(np.clip(rho, 0.0, 1.0))
        risk[t] = rho
        load = np.clip(rho * affinity + 0.05 * s * rng.standard_normal(4), 0.0, 1.2)
        loads[t] = load
        cardio, cns, liver, renal = load
        sub = _quantize(load)
        extra = np.clip(np.floor(rho * rng.uniform(0.0, 4.0, size=2) + 0.3 * s * rng.standard_normal(2)), 0, 4)
        sofa = sub.sum() + extra.sum()

        e = s * rng.standard_normal(22)
        mapv = 82 - 25 * cardio - 5 * rho + 8 * vas + 5 * e[0] + 6 * prev_vaso + 3 * prev_fluids
        hr = 85 + 35 * rho + 15 * cardio - 6 * vas + 4 * meta + 6 * e[1] - 3 * prev_fluids
        sbp = mapv + 35 + 10 * vas + 5 * e[2]
        dbp = mapv - 15 + 3 * e[3]
        temp = 37 + 1.2 * rho + 0.3 * meta + 0.4 * e[4]
        spo2 = min(100.0, 97 - 6 * rho - 3 * cns - meta + e[5])
        rr = 16 + 10 * rho + 4 * cns + 3 * meta + 2 * e[6]
        labs = np.array([
            12 + 6 * rho + 1.5 * ckd + 2 * e[7],
            24 - 6 * rho - 3 * renal - 2.5 * ckd + 1.5 * e[8],
            max(0.3, 0.9 + 3 * renal + 1.0 * ckd + 0.2 * e[9]),
            104 + 2 * ckd + 2 * e[10],
            120 + 40 * rho + 35 * meta + 20 * e[11],
            33 - 4 * rho - 4 * marrow + 2 * e[12],
            11 - 1.5 * rho - 1.5 * marrow + 0.7 * e[13],
            max(5.0, 220 - 120 * liver - 40 * rho + 50 * marrow + 25 * e[14]),
            4 + 0.8 * renal + 0.4 * ckd + 0.3 * e[15],
            139 + 1.5 * meta + 2 * e[16],
            18 + 40 * renal + 15 * ckd + 5 * e[17],
            10 + 8 * rho + 3 * marrow + 3 * e[18],
        ])
        vit = np.array([hr, sbp, dbp, mapv, temp, spo2, rr])
        cardio_in = np.array([(hr - 100) / 20, (mapv - 70) / 10, (sbp - 110) / 15, sub[0] - 1.5])
        cardio_ema = cardio_in if t == 0 else 0.7 * cardio_ema + 0.3 * cardio_in
        lab_z = (labs - _LAB_CENTER) / _LAB_SCALE
        lab_ema = lab_projection @ lab_z if t == 0 else 0.9 * lab_ema + 0.1 * (lab_projection @ lab_z)

        states[t, :3] = (age, gender, weight)
        states[t, 3:10] = vit
        states[t, 10:15] = (sofa, sub[2], sub[3], sub[1], sub[0])  # sofa, liver, renal, cns, cardio
        states[t, 15:27] = labs
        states[t, 27:31] = cardio_ema
        states[t, 31:41] = lab_ema

        vaso_score = sub[0] + 1.5 * rho + 0.7 * rng.standard_normal()
        fluid_score = 3.0 * rho + 0.5 * (mapv < 65) + 0.8 * rng.standard_normal()
        prev_vaso = int(np.digitize(vaso_score, (2.0, 3.5)))
        prev_fluids = int(np.digitize(fluid_score, (1.0, 2.0)))
        actions[t] = (prev_vaso, prev_fluids)

    traj = PatientTrajectory(f"P{pid:06d}", states, actions, Outcome.DEATH if died else Outcome.RELEASE)
    return traj, LatentPath(risk, OrganLabel(mode), loads)


_LAB_CENTER = np.array([14, 22, 1.8, 104, 135, 31, 10.2, 180, 4.3, 139, 35, 14])
_LAB_SCALE = np.array([3, 3, 1.2, 2, 25, 2.5, 1, 60, 0.5, 2, 20, 4])


def generate_cohort(config: CohortConfig, return_latent: bool = False):
    """Draw a seeded synthetic cohort.

    Each stay follows a latent risk in [0, 1]: non-survivors ratchet up toward
    1, survivors rise briefly then decay toward 0. One dominant organ per
    patient (drawn from ``organ_weights``) takes the full risk load, so the
    worst-organ label is informative near death. Four chronic patient-level
    baselines (``baseline_scale`` standard deviations) shift vitals and labs
    without touching risk or outcome. Logged treatments follow a
    noisy threshold rule on risk and cardiovascular score, and they slow the
    next hour's deterioration by up to ``treatment_effect``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    lab_projection = rng.standard_normal((10, len(LABS))) / np.sqrt(len(LABS))
    died = rng.random(config.num_patients) >= config.survivor_fraction
    cohort, latent = [], []
    for pid in range(config.num_patients):
        traj, path = _simulate_patient(pid, bool(died[pid]), config, rng, lab_projection)
        cohort.append(traj)
        latent.append(path)
    return (cohort, latent) if return_latent else cohort


# ---------------------------------------------------------------- CSV

class CohortFormatError(ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


class EmptyCohortError(CohortFormatError):
    pass


_INT_COLUMNS = frozenset(SCORES)


def _fmt(col: str, value: float) -> str:
    if col in _INT_COLUMNS:
        return str(int(value))
    return repr(float(value))


def cohort_rows(cohort: Iterable[PatientTrajectory]):
    """CSV field lists (without header), one per patient-hour."""
    for traj in cohort:
        for hour in range(traj.length):
            outcome = traj.outcome.value if hour == traj.length - 1 else ""
            yield (
                [traj.patient_id, str(hour)]
                + [_fmt(c, v) for c, v in zip(STATE_COLUMNS, traj.states[hour])]
                + [str(int(traj.actions[hour, 0])), str(int(traj.actions[hour, 1])), outcome]
            )


def save_cohort_csv(cohort: Iterable[PatientTrajectory], path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(cohort_rows(cohort))


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise CohortFormatError(f"not a number: {text!r}", row, col) from None
    if not np.isfinite(value):
        raise CohortFormatError(f"non-finite value {text!r}", row, col)
    return value


def load_cohort_csv(path: str | os.PathLike) -> list[PatientTrajectory]:
    """Parse a cohort CSV. Rows are numbered from 1 (header) in error messages."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyCohortError("empty cohort file")
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise CohortFormatError(f"missing columns {missing}", 1, missing[0])
        pos = {c: header.index(c) for c in CSV_HEADER}
        cohort: list[PatientTrajectory] = []
        current: dict | None = None

        def close(rec, row):
            if rec["outcome"] is None:
                raise CohortFormatError(f"stay {rec['pid']!r} has no terminal outcome", row, "outcome")
            cohort.append(PatientTrajectory(rec["pid"], np.array(rec["states"]), np.array(rec["actions"]), rec["outcome"]))

        row_no = 1
        for row_no, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != len(header):
                raise CohortFormatError(f"expected {len(header)} fields, got {len(fields)}", row_no)
            pid = fields[pos["patient_id"]]
            if not pid:
                raise CohortFormatError("blank patient_id", row_no, "patient_id")
            try:
                hour = int(fields[pos["hour"]])
            except ValueError:
                raise CohortFormatError("hour is not an integer", row_no, "hour") from None
            if current is not None and pid != current["pid"]:
                if any(t.patient_id == pid for t in cohort):
                    raise CohortFormatError(f"patient {pid!r} rows are not contiguous", row_no, "patient_id")
                close(current, row_no)
                current = None
            if current is None:
                current = {"pid": pid, "states": [], "actions": [], "outcome": None}
            elif current["outcome"] is not None:
                raise CohortFormatError("row after the terminal outcome", row_no, "outcome")
            if hour != len(current["states"]):
                raise CohortFormatError(f"hour {hour} out of sequence (expected {len(current['states'])})", row_no, "hour")
            state = []
            for col in STATE_COLUMNS:
                value = _parse_float(fields[pos[col]], row_no, col)
                if col in _INT_COLUMNS:
                    if value != int(value):
                        raise CohortFormatError("score must be an integer", row_no, col)
                    upper = 24 if col == "sofa" else 4
                    if not 0 <= value <= upper:
                        raise CohortFormatError(f"score {value:g} outside 0..{upper}", row_no, col)
                state.append(value)
            organ_max = max(state[c] for c in ORGAN_COLUMNS)
            if state[COL["sofa"]] < organ_max:
                raise CohortFormatError("sofa below the largest organ subscore", row_no, "sofa")
            act = []
            for col in ("vaso", "fluids"):
                try:
                    a = int(fields[pos[col]])
                except ValueError:
                    raise CohortFormatError("action bin is not an integer", row_no, col) from None
                if a not in (0, 1, 2):
                    raise CohortFormatError(f"action bin {a} outside 0..2", row_no, col)
                act.append(a)
            current["states"].append(state)
            current["actions"].append(act)
            outcome = fields[pos["outcome"]].strip()
            if outcome:
                try:
                    current["outcome"] = Outcome(outcome)
                except ValueError:
                    raise CohortFormatError(f"unknown outcome {outcome!r}", row_no, "outcome") from None
        if current is not None:
            close(current, row_no)
    if not cohort:
        raise EmptyCohortError("cohort file holds no patient rows")
    return cohort
