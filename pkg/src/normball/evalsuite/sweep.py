"""Hyperparameter ablations over beta and the intermediate-loss terms."""
from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..cohort import split_cohort
from ..embedding import LossConfig, NormedEmbedding, config_hash
from .metrics import HORIZONS, DegenerateLabelsError, embed_states, horizon_labels, mean_auroc, patient_groups, scores_auroc
from .probe import logistic_probe, probe_splits
from .report import read_csv, write_csv
from .trajectory import jumps_from_risk, organ_separation, split_by_patient

BETAS = (0.0, 0.25, 0.5, 0.75, 1.0)
INTERMEDIATE_VARIANTS = (("lambda3=0", {"lambda3": 0.0}), ("alpha=0", {"alpha": 0.0}), ("lambda4=0", {"lambda4": 0.0}))

SWEEP_COLUMNS = (
    "name", "beta", "lambda3", "alpha", "lambda4", "norm_auroc_mean",
    *(f"norm_auroc_{h}" for h in HORIZONS), "probe_auroc_mean", "probe_excluded", "jump_mean",
    "sep_within", "sep_between", "sep_gap", "best_epoch", "cohort_seed", "seed", "config_hash",
)


@dataclass(frozen=True)
class GridPoint:
    name: str
    overrides: tuple[tuple[str, float], ...]

    def config(self, base: LossConfig) -> LossConfig:
        return base.replace(**dict(self.overrides))


def default_grid(base_beta: float = 0.75) -> list[GridPoint]:
    """Five beta values plus three intermediate-term ablations at ``base_beta``."""
    grid = [GridPoint(f"beta={b:g}", (("beta", b),)) for b in BETAS]
    for name, change in INTERMEDIATE_VARIANTS:
        grid.append(GridPoint(name, (("beta", base_beta),) + tuple(change.items())))
    return grid


def parse_grid(text: str) -> list[GridPoint]:
    """``"beta=0,1;lambda3=0,0.2"`` -> cartesian product of the listed values."""
    axes = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        key, sep, values = part.partition("=")
        if not sep or not values:
            raise ValueError(f"grid axis must look like key=v1,v2: {part!r}")
        axes.append([(key.strip(), float(v)) for v in values.split(",")])
    if not axes:
        raise ValueError("empty grid")
    points = []
    for combo in itertools.product(*axes):
        points.append(GridPoint(",".join(f"{k}={v:g}" for k, v in combo), tuple(combo)))
    return points


def evaluate_embedding(model, cohort, horizons: Sequence[int] = HORIZONS, n_probe_splits: int = 100,
                       rng: np.random.Generator | None = None, separation_t: int = 24, jobs: int = 1) -> dict:
    """Norm AUROC, probe AUROC (mean over horizons), mean jump and organ separation."""
    rng = np.random.default_rng(0) if rng is None else rng
    emb = embed_states(model, cohort)
    d = np.sum(emb**2, axis=-1)
    norm = scores_auroc(d, cohort, horizons)
    groups = patient_groups(cohort)
    probe_means, excluded = [], 0
    if n_probe_splits > 0:
        for h in horizons:
            labels = horizon_labels(cohort, h)
            try:
                splits = probe_splits(groups, labels, n_probe_splits, 0.8, rng)
            except DegenerateLabelsError:
                # too few positives to split; the whole horizon is excluded
                probe_means.append(float("nan"))
                excluded += n_probe_splits
                continue
            res = logistic_probe(emb, labels, groups, splits=splits, jobs=jobs)
            probe_means.append(res.mean)
            excluded += res.excluded
    jumps = jumps_from_risk(split_by_patient(d, cohort))
    sep = organ_separation(model, cohort, separation_t, rng=rng)
    row = {"norm_auroc_mean": mean_auroc(norm)}
    row.update({f"norm_auroc_{h}": r.auroc for h, r in norm.items()})
    row.update(
        probe_auroc_mean=float(np.nanmean(probe_means)) if np.isfinite(probe_means).any() else float("nan"),
        probe_excluded=excluded, jump_mean=jumps.mean,
        sep_within=sep.within, sep_between=sep.between, sep_gap=sep.gap,
    )
    return row


def _row_path(out_dir: Path, point: GridPoint, seed: int, digest: str) -> Path:
    safe = point.name.replace("=", "").replace(",", "_")
    return out_dir / "rows" / f"{safe}_s{seed}_{digest}.csv"


def _run_point(args) -> dict:
    point, base, estimator_params, train_c, test_c, seed, cohort_seed, n_probe_splits, horizons, digest = args
    cfg = point.config(base)
    est = NormedEmbedding(loss_config=cfg, random_state=seed, **estimator_params).fit(train_c)
    row = {"name": point.name, "beta": cfg.beta, "lambda3": cfg.lambda3, "alpha": cfg.alpha,
           "lambda4": cfg.lambda4, "best_epoch": est.best_epoch_,
           "cohort_seed": cohort_seed, "seed": seed, "config_hash": digest}
    row.update(evaluate_embedding(est, test_c, horizons, n_probe_splits, np.random.default_rng(seed)))
    return row


def ablation_sweep(cohort, grid: Sequence[GridPoint] | None = None, base_config: LossConfig | None = None,
                   estimator_params: dict | None = None, out_dir=None, seed: int = 0,
                   cohort_seed: int | None = None, test_fraction: float = 0.2, n_probe_splits: int = 100,
                   horizons: Sequence[int] = HORIZONS, jobs: int = 1) -> list[dict]:
    """Train and evaluate one embedding per grid point on a shared patient split.

    With ``out_dir`` set, each finished point is written to its own row file
    and reused on re-runs, so an interrupted sweep resumes where it stopped.
    Rows come back (and ``sweep.csv`` is written) in grid order.
    """
    grid = default_grid() if grid is None else list(grid)
    base = LossConfig() if base_config is None else base_config
    estimator_params = dict(estimator_params or {})
    train_c, test_c = split_cohort(cohort, 1.0 - test_fraction, np.random.default_rng(seed))
    out = Path(out_dir) if out_dir is not None else None
    rows: list[dict | None] = []
    pending = []
    for i, point in enumerate(grid):
        cfg = point.config(base)
        digest = config_hash(cfg.as_dict(), estimator_params,
                             {"seed": seed, "cohort_seed": cohort_seed, "test_fraction": test_fraction,
                              "n_probe_splits": n_probe_splits, "horizons": tuple(horizons)})
        path = _row_path(out, point, seed, digest) if out is not None else None
        if path is not None and path.exists():
            rows.append(read_csv(path)[0])
            continue
        rows.append(None)
        pending.append((i, path, (point, base, estimator_params, train_c, test_c, seed, cohort_seed,
                                  n_probe_splits, tuple(horizons), digest)))

    def store(i, path, row):
        rows[i] = row
        if path is not None:
            write_csv(path, SWEEP_COLUMNS, [row])
            rows[i] = read_csv(path)[0]

    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [(i, path, pool.submit(_run_point, args)) for i, path, args in pending]
            for i, path, fut in futures:
                store(i, path, fut.result())
    else:
        for i, path, args in pending:
            store(i, path, _run_point(args))
    if out is not None:
        write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return rows
