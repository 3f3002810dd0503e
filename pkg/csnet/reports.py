"""
Writers for evaluation, comparison and ablation outputs.

Every report is written twice: machine-readable (JSON + CSV) next to a
human-readable table. The ablation grid additionally goes into one Excel
workbook with a sheet per view.
"""

from pathlib import Path

import pandas as pd

from .aeml import COMPARISON_FIELDS
from .logger import logger


def _safe(name):
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def write_eval_report(report, out_dir, stem=None):
    """``<stem>.json`` with the full report and ``<stem>_episodes.csv`` raw dump."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = _safe(stem or f"eval_{report.provenance or 'model'}_{report.split}")
    json_path = out_dir / f"{stem}.json"
    csv_path = out_dir / f"{stem}_episodes.csv"
    json_path.write_text(report.to_json(), encoding="utf-8")
    report.to_frame().to_csv(csv_path, index=False)
    logger.info(f"Saved: {json_path}, {csv_path}")
    return json_path, csv_path


def format_report_table(reports):
    """Aligned text table of one or more EvalReports."""
    if not isinstance(reports, (list, tuple)):
        reports = [reports]
    df = pd.DataFrame([r.summary_row() for r in reports])
    df["accuracy"] = [f"{r.mean * 100:.2f}% ± {r.ci95 * 100:.2f}%" for r in reports]
    return df.drop(columns=["mean", "ci95"]).to_string(index=False)


def write_comparison(report, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"compare_t{report.t}_{report.mode}"
    json_path = out_dir / f"{stem}.json"
    csv_path = out_dir / f"{stem}.csv"
    json_path.write_text(report.to_json(), encoding="utf-8")
    pd.DataFrame([report.to_dict()], columns=COMPARISON_FIELDS).to_csv(csv_path, index=False)
    logger.info(f"Saved: {json_path}, {csv_path}")
    return json_path, csv_path


def summarize_log(log):
    """Loss and validation milestones of a training run as a small table."""
    df = log.to_frame()
    losses = df["loss"].dropna()
    validated = df.dropna(subset=["val_acc"])
    rows = {
        "episodes": int(df["episode"].max()) if len(df) else 0,
        "first_loss": float(losses.iloc[0]) if len(losses) else float("nan"),
        "last_loss": float(losses.iloc[-1]) if len(losses) else float("nan"),
        "checkpoints": len(validated),
        "best_val_acc": float(validated["val_acc"].max()) if len(validated) else float("nan"),
        "best_checkpoint": (
            validated.sort_values(["val_acc", "episode"]).iloc[-1]["checkpoint_id"]
            if len(validated)
            else None
        ),
    }
    return pd.Series(rows)


def write_ablation_workbook(grid, out_dir, stem="ablation"):
    """Ablation grid as ``<stem>.xlsx`` (one sheet per view) plus CSV files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = grid.to_frame()
    deltas = grid.deltas()
    sheets = {"reports": reports, "deltas": deltas}
    for shot in sorted(reports["shot"].unique()):
        sheets[f"shot_{shot}"] = reports[reports["shot"] == shot]
    sheets["episodes"] = pd.DataFrame(
        {
            f"K{c.shot}_{'se' if c.class_support else 'nose'}_{'aeml' if c.aeml else 'single'}":
                c.report.accuracies
            for c in grid.cells
        }
    )

    xlsx_path = out_dir / f"{stem}.xlsx"
    with pd.ExcelWriter(xlsx_path, engine="xlsxwriter") as writer:
        for name, frame in sheets.items():
            frame.to_excel(writer, sheet_name=name, index=False)
    reports.to_csv(out_dir / f"{stem}_reports.csv", index=False)
    deltas.to_csv(out_dir / f"{stem}_deltas.csv", index=False)
    logger.info(f"Created ablation workbook {xlsx_path} ({len(sheets)} sheets)")
    return xlsx_path


def read_ablation_workbook(path):
    """All sheets of an ablation workbook as DataFrames."""
    return pd.read_excel(path, sheet_name=None, engine="openpyxl")
