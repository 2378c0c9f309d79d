from .metrics import (
    BASELINE_SCORES,
    HORIZONS,
    DegenerateLabelsError,
    RocResult,
    auroc,
    baseline_score_auroc,
    baseline_scores,
    embed_states,
    horizon_labels,
    mean_auroc,
    norm_auroc,
    patient_groups,
    risk_scores,
    scores_auroc,
)
from .probe import LogisticProbe, ProbeResult, logistic_probe, probe_splits
from .report import EvalReport, csv_text, export_report, norm_histogram, read_csv, write_csv
from .sweep import GridPoint, ablation_sweep, default_grid, evaluate_embedding, parse_grid
from .trajectory import (
    JumpStats,
    SeparationStats,
    TimeCurve,
    curve_from_risk,
    jumps_from_risk,
    organ_separation,
    relative_jumps,
    separation_from_embeddings,
    time_to_event_curve,
)

__all__ = [
    "BASELINE_SCORES",
    "DegenerateLabelsError",
    "EvalReport",
    "GridPoint",
    "HORIZONS",
    "JumpStats",
    "LogisticProbe",
    "ProbeResult",
    "RocResult",
    "SeparationStats",
    "TimeCurve",
    "ablation_sweep",
    "auroc",
    "baseline_score_auroc",
    "baseline_scores",
    "csv_text",
    "curve_from_risk",
    "default_grid",
    "embed_states",
    "evaluate_embedding",
    "export_report",
    "horizon_labels",
    "jumps_from_risk",
    "logistic_probe",
    "mean_auroc",
    "norm_auroc",
    "norm_histogram",
    "organ_separation",
    "parse_grid",
    "patient_groups",
    "probe_splits",
    "read_csv",
    "relative_jumps",
    "risk_scores",
    "scores_auroc",
    "separation_from_embeddings",
    "time_to_event_curve",
    "write_csv",
]
