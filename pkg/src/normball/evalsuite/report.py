"""CSV tables and SVG figures for evaluation results.

Every CSV row carries ``seed`` and ``config_hash`` columns; floats are written
with ``repr`` so re-runs produce byte-identical files.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..cohort import OrganLabel
from ..numerics import atomic_write_text
from .metrics import RocResult
from .probe import ProbeResult
from .trajectory import JumpStats, SeparationStats, TimeCurve


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def csv_text(header: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(row.get(h)) for h in header])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[dict]) -> Path:
    path = Path(path)
    atomic_write_text(path, csv_text(header, rows))
    return path


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@dataclass
class EvalReport:
    """Results of one evaluation run; any field may be left empty."""

    seed: int
    config_hash: str
    auroc: dict[str, dict[int, RocResult]] = field(default_factory=dict)
    probe: dict[str, ProbeResult] = field(default_factory=dict)
    jumps: JumpStats | None = None
    curves: dict[str, TimeCurve] | None = None
    separation: SeparationStats | None = None
    risk: np.ndarray | None = None  # d(x) per state
    died: np.ndarray | None = None  # outcome per state
    projection: np.ndarray | None = None  # near-death embeddings (m, n)
    projection_organs: np.ndarray | None = None


def norm_histogram(risk: np.ndarray, died: np.ndarray, bins: int = 20) -> list[dict]:
    """Counts of d(x) per bin, split by outcome; bins cover [0, max(1, max d)]."""
    risk = np.asarray(risk, dtype=np.float64)
    died = np.asarray(died, dtype=bool)
    edges = np.linspace(0.0, max(1.0, float(risk.max(initial=0.0))), bins + 1)
    death, _ = np.histogram(risk[died], edges)
    release, _ = np.histogram(risk[~died], edges)
    return [
        {"bin_lo": edges[i], "bin_hi": edges[i + 1], "death": int(death[i]), "release": int(release[i])}
        for i in range(bins)
    ]


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "normball"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    return plt, fig, ax


def _save_svg(plt, fig, path: Path) -> Path:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())
    return path


def histogram_svg(rows: list[dict], path) -> Path:
    plt, fig, ax = _figure()
    lo = np.array([r["bin_lo"] for r in rows])
    width = np.array([r["bin_hi"] for r in rows]) - lo
    ax.bar(lo, [r["release"] for r in rows], width, align="edge", alpha=0.6, label="release")
    ax.bar(lo, [r["death"] for r in rows], width, align="edge", alpha=0.6, label="death")
    ax.set_xlabel("squared norm d(x)")
    ax.set_ylabel("states")
    ax.legend()
    return _save_svg(plt, fig, Path(path))


def projection_svg(emb: np.ndarray, organs: np.ndarray, path) -> Path:
    plt, fig, ax = _figure()
    emb = np.asarray(emb)
    for label in OrganLabel:
        sel = organs == label
        if sel.any():
            ax.scatter(emb[sel, 0], emb[sel, 1 if emb.shape[1] > 1 else 0], s=4, label=label.name.lower())
    ax.set_xlabel("axis 0")
    ax.set_ylabel("axis 1")
    ax.set_aspect("equal")
    ax.legend(markerscale=3)
    return _save_svg(plt, fig, Path(path))


def curves_svg(curves: dict[str, TimeCurve], path) -> Path:
    plt, fig, ax = _figure()
    for name, curve in curves.items():
        ax.plot(curve.lags, curve.means, label=f"hours to {name}")
    ax.invert_xaxis()
    ax.set_xlabel("hours to terminal event")
    ax.set_ylabel("mean d(x)")
    ax.legend()
    return _save_svg(plt, fig, Path(path))


def export_report(report: EvalReport, out_dir) -> list[Path]:
    """Write the populated parts of ``report`` under ``out_dir``; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = {"seed": report.seed, "config_hash": report.config_hash}
    written = []
    if report.auroc:
        rows = [
            {"score": name, "horizon": h, "auroc": r.auroc, "n_positive": r.n_positive,
             "n_negative": r.n_negative, **tag}
            for name, table in report.auroc.items() for h, r in table.items()
        ]
        written.append(write_csv(out / "auroc.csv", ["score", "horizon", "auroc", "n_positive", "n_negative",
                                                     "seed", "config_hash"], rows))
    if report.probe:
        rows = [{"features": k, "mean_auroc": v.mean, "std_auroc": v.std, "n_splits": v.n_splits,
                 "excluded": v.excluded, **tag} for k, v in report.probe.items()]
        written.append(write_csv(out / "probe.csv", ["features", "mean_auroc", "std_auroc", "n_splits",
                                                     "excluded", "seed", "config_hash"], rows))
    if report.jumps is not None:
        j = report.jumps
        written.append(write_csv(out / "jumps.csv", ["mean_jump", "n_pairs", "n_excluded", "seed", "config_hash"],
                                 [{"mean_jump": j.mean, "n_pairs": j.n_pairs, "n_excluded": j.n_excluded, **tag}]))
    if report.separation is not None:
        s = report.separation
        written.append(write_csv(out / "separation.csv",
                                 ["within", "between", "gap", "n_states", "n_zero", "seed", "config_hash"],
                                 [{"within": s.within, "between": s.between, "gap": s.gap,
                                   "n_states": s.n_states, "n_zero": s.n_zero, **tag}]))
    if report.curves is not None:
        rows = [{"outcome": name, "lag": int(l), "mean_d": m, "count": int(c), **tag}
                for name, cur in report.curves.items() for l, m, c in zip(cur.lags, cur.means, cur.counts)]
        written.append(write_csv(out / "curves.csv", ["outcome", "lag", "mean_d", "count", "seed", "config_hash"],
                                 rows))
        written.append(curves_svg(report.curves, out / "curves.svg"))
    if report.risk is not None and report.died is not None:
        rows = [{**r, **tag} for r in norm_histogram(report.risk, report.died)]
        written.append(write_csv(out / "norm_hist.csv", ["bin_lo", "bin_hi", "death", "release", "seed",
                                                         "config_hash"], rows))
        written.append(histogram_svg(rows, out / "norm_hist.svg"))
    if report.projection is not None and report.projection_organs is not None:
        written.append(projection_svg(report.projection, report.projection_organs, out / "projection.svg"))
    return written
