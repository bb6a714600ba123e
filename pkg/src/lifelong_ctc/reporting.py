"""CSV persistence for run reports and cross-run summaries.

Per run directory:
  curve.csv         step,stage,task,wer,method,policy,budget,seed
  final_matrix.csv  task,after_stage,wer,method,policy,budget,seed
  summary.csv       method,policy,budget,seed,averaged_wer,relative_reduction,
                    oscillation,infeasible_skipped,trajectory_digest
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import numpy as np

from .training import RunReport

CURVE_FIELDS = ["step", "stage", "task", "wer", "method", "policy", "budget", "seed"]
MATRIX_FIELDS = ["task", "after_stage", "wer", "method", "policy", "budget", "seed"]
SUMMARY_FIELDS = [
    "method",
    "policy",
    "budget",
    "seed",
    "averaged_wer",
    "relative_reduction",
    "oscillation",
    "infeasible_skipped",
    "trajectory_digest",
]


def _tag(report: RunReport) -> dict:
    return {
        "method": report.method,
        "policy": report.policy or "",
        "budget": repr(report.budget_frac),
        "seed": report.seed,
    }


def write_report(out_dir, report: RunReport, prefix: str = "") -> None:
    os.makedirs(out_dir, exist_ok=True)
    tag = _tag(report)

    with open(os.path.join(out_dir, f"{prefix}curve.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        w.writeheader()
        for p in report.curve:
            w.writerow({"step": p.step, "stage": p.stage, "task": p.task, "wer": repr(p.wer), **tag})

    with open(os.path.join(out_dir, f"{prefix}final_matrix.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MATRIX_FIELDS)
        w.writeheader()
        for row, task_id in enumerate(report.task_ids):
            for stage in range(report.final_matrix.shape[1]):
                w.writerow(
                    {
                        "task": task_id,
                        "after_stage": stage,
                        "wer": repr(float(report.final_matrix[row, stage])),
                        **tag,
                    }
                )

    with open(os.path.join(out_dir, f"{prefix}summary.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        w.writerow(summary_row(report))


def summary_row(report: RunReport) -> dict:
    rr = report.relative_reduction_vs_baseline
    return {
        **_tag(report),
        "averaged_wer": repr(report.averaged_wer),
        "relative_reduction": "" if rr is None else repr(rr),
        "oscillation": repr(report.oscillation),
        "infeasible_skipped": report.infeasible_skipped,
        "trajectory_digest": report.trajectory_digest,
    }


def write_summaries(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for r in reports:
            w.writerow(summary_row(r))


def read_summary_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def merge_summaries(paths) -> list[dict]:
    """Pool summary rows from several runs and add per-group seed medians.

    Rows group by (method, policy, budget); each group contributes one
    aggregate row with the median averaged WER across seeds.
    """
    rows = []
    for p in paths:
        rows.extend(read_summary_rows(p))
    groups = defaultdict(list)
    for r in rows:
        groups[(r["method"], r["policy"], r["budget"])].append(float(r["averaged_wer"]))
    merged = list(rows)
    for (method, policy, budget), wers in sorted(groups.items()):
        merged.append(
            {
                "method": method,
                "policy": policy,
                "budget": budget,
                "seed": f"median-of-{len(wers)}",
                "averaged_wer": repr(float(np.median(wers))),
                "relative_reduction": "",
                "oscillation": "",
                "infeasible_skipped": "",
                "trajectory_digest": "",
            }
        )
    return merged


def write_rows(path, rows, fieldnames=SUMMARY_FIELDS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            w.writerow(r)
