"""CSV and JSON writers for results, summaries, theory curves and coefficients.

Floats are written with ``repr`` so a value read back is bitwise the value
written; missing values are empty cells (CSV) or ``null`` (JSON).
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RESULT_COLUMNS = ("scenario_id", "rep", "estimator", "lambda", "a2_empirical")
SUMMARY_COLUMNS = ("scenario_id", "estimator", "mean", "sd", "mc_se", "a2_theory", "gap", "formula_id")
THEORY_COLUMNS = (
    "scenario_id", "formula_id", "lambda", "omega", "h2", "a2", "R1", "R2", "R3",
    "Q1", "Q2", "Q3", "Q4", "Q5", "Q6", "Q7",
)
COEF_COLUMNS = ("index", "value", "space")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if math.isnan(v) else v
    if isinstance(v, np.integer):
        return int(v)
    return v


def result_rows(summary) -> list[dict]:
    sid = summary.scenario.scenario_id
    rows = []
    for r in summary.results:
        for e in summary.scenario.estimators:
            rows.append({
                "scenario_id": sid, "rep": r.rep_index, "estimator": e.name,
                "lambda": r.lam[e.name], "a2_empirical": r.a2[e.name],
            })
    return rows


def summary_rows(summary) -> list[dict]:
    sid = summary.scenario.scenario_id
    return [
        {
            "scenario_id": sid, "estimator": e.name, "mean": e.mean, "sd": e.sd, "mc_se": e.mc_se,
            "a2_theory": e.a2_theory, "gap": e.gap, "formula_id": e.formula_id,
        }
        for e in summary.estimators
    ]


def theory_row(scenario_id: str, pred) -> dict:
    row = dict.fromkeys(THEORY_COLUMNS)
    row.update(scenario_id=scenario_id, formula_id=pred.formula_id, a2=pred.a2,
               omega=pred.omega, h2=pred.h2)
    row["lambda"] = pred.lam
    for k in THEORY_COLUMNS[6:]:
        v = pred.intermediates.get(k)
        if isinstance(v, (int, float, np.floating)):
            row[k] = float(v)
    return row


def theory_rows(summary) -> list[dict]:
    sid = summary.scenario.scenario_id
    return [theory_row(sid, e.theory) for e in summary.estimators if e.theory is not None]


def coefficient_rows(fit) -> list[dict]:
    return [{"index": i, "value": float(v), "space": fit.space} for i, v in enumerate(fit.coefficients)]


def write_rows(path: str | Path, rows: Iterable[dict], columns: Sequence[str], fmt: str = "csv") -> Path:
    path = Path(path)
    rows = list(rows)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_cell(r.get(c)) for c in columns])
    elif fmt == "json":
        data = [{c: _jsonable(r.get(c)) for c in columns} for r in rows]
        path.write_text(json.dumps(data, indent=1, allow_nan=False) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_cohort(path: str | Path, cohort) -> Path:
    """Standardized design as a header-free CSV (one row per individual)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in cohort.design:
            w.writerow([repr(float(x)) for x in row])
    return path
