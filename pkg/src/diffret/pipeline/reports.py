"""CSV and JSON-lines exports of evaluation reports, traces and loss curves."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .metrics import EvalReport

REPORT_COLUMNS = ["label", "direction", "R@1", "R@5", "R@10", "Rsum", "MdR", "MnR", "fusion_weight", "auroc"]


def report_row(rep: EvalReport, extra: dict | None = None) -> dict:
    return {**(extra or {}), "label": rep.label, "direction": rep.direction, "R@1": rep.r1, "R@5": rep.r5,
            "R@10": rep.r10, "Rsum": rep.rsum, "MdR": rep.mdr, "MnR": rep.mnr,
            "fusion_weight": rep.fusion_weight, "auroc": rep.auroc}


def write_reports_csv(reports, path, extra=None) -> None:
    """One row per report. ``extra`` is a list of dicts with leading columns."""
    reports = list(reports)
    extra = extra or [{} for _ in reports]
    keys = list(extra[0]) if extra else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys + REPORT_COLUMNS)
        w.writeheader()
        for rep, ex in zip(reports, extra):
            w.writerow(report_row(rep, ex))


def write_reports_jsonl(reports, path, extra=None) -> None:
    """Full reports, per-query ranks and histograms included, one JSON object per line."""
    reports = list(reports)
    extra = extra or [{} for _ in reports]
    with open(path, "w", encoding="utf-8") as fh:
        for rep, ex in zip(reports, extra):
            fh.write(json.dumps({**ex, **rep.to_dict()}, sort_keys=True) + "\n")


def read_reports_jsonl(path) -> list[EvalReport]:
    fields = set(EvalReport.__dataclass_fields__)
    with open(path, encoding="utf-8") as fh:
        return [EvalReport(**{k: v for k, v in json.loads(line).items() if k in fields})
                for line in fh if line.strip()]


def write_histograms_csv(reports, path) -> None:
    """Positive/negative score histograms: one row per (report, bin)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "direction", "bin", "lo", "hi", "positive", "negative"])
        for rep in reports:
            edges = rep.hist_edges
            for b, (p, n) in enumerate(zip(rep.pos_hist, rep.neg_hist)):
                w.writerow([rep.label, rep.direction, b, edges[b], edges[b + 1], p, n])


def write_trace_csv(rows, gt: int, path, candidate_ids=None) -> None:
    """Long format: step, candidate, probability, is_ground_truth.

    Step 0 is the readout of the initial noise.
    """
    rows = np.asarray(rows)
    ids = candidate_ids or [str(j) for j in range(rows.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "candidate", "probability", "is_ground_truth"])
        for s, row in enumerate(rows):
            for j, p in enumerate(row):
                w.writerow([s, ids[j], repr(float(p)), int(j == gt)])


def write_trace_jsonl(rows, gt: int, path, candidate_ids=None) -> None:
    rows = np.asarray(rows)
    with open(path, "w", encoding="utf-8") as fh:
        for s, row in enumerate(rows):
            rec = {"step": s, "ground_truth": int(gt), "probabilities": [float(p) for p in row]}
            if candidate_ids is not None:
                rec["ground_truth_id"] = candidate_ids[gt]
            fh.write(json.dumps(rec) + "\n")


def write_loss_curve_csv(curve, path) -> None:
    keys = ["epoch", "dis", "gen", "loss"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, restval="")
        w.writeheader()
        for row in curve:
            w.writerow({k: row.get(k, "") for k in keys})


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
