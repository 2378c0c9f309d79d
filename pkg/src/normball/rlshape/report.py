"""CSV and SVG output for policy reports."""
from __future__ import annotations

from pathlib import Path

from ..cohort import N_ACTIONS, action_pair
from ..evalsuite.report import _figure, _save_svg, write_csv
from .ensemble import VALUE_GROUPS, PolicyReport

QUARTILE_NAMES = ("min", "q1", "median", "q3", "max")


def export_policy_report(report: PolicyReport, out_dir, seed: int, config_hash: str, reward: str = "") -> list[Path]:
    out = Path(out_dir)
    tag = {"reward": reward, "seed": seed, "config_hash": config_hash}
    rows = []
    for mode, pct in report.percentages.items():
        for a in range(N_ACTIONS):
            vaso, fluids = action_pair(a)
            rows.append({"mode": mode, "action": a, "vaso": vaso, "fluids": fluids, "percent": pct[a], **tag})
    written = [write_csv(out / "actions.csv", ["mode", "action", "vaso", "fluids", "percent", "reward", "seed",
                                               "config_hash"], rows)]
    written.append(write_csv(out / "no_treatment.csv", ["mode", "percent", "reward", "seed", "config_hash"],
                             [{"mode": m, "percent": p[0], **tag} for m, p in report.percentages.items()]))
    value_rows = [{"group": g, **dict(zip(QUARTILE_NAMES, report.value_quartiles[g])),
                   "n_states": int(report.groups[g].sum()), **tag} for g in VALUE_GROUPS]
    written.append(write_csv(out / "values.csv", ["group", *QUARTILE_NAMES, "n_states", "reward", "seed",
                                                  "config_hash"], value_rows))
    plt, fig, ax = _figure()
    stats = [{"label": g.replace("_", "\n"), "whislo": q[0], "q1": q[1], "med": q[2], "q3": q[3], "whishi": q[4]}
             for g in VALUE_GROUPS for q in [report.value_quartiles[g]]]
    ax.bxp(stats, showfliers=False)
    ax.set_ylabel("scaled optimal value")
    written.append(_save_svg(plt, fig, out / "values.svg"))
    return written
