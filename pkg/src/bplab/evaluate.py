"""Evaluation suite: aggregate metrics, prediction-error CDF, five-way branch
categorization, and report rendering.

The closeness metric credits the predictor whose absolute error is strictly
smaller on each branch and splits ties evenly, so the two closeness values
always sum to exactly one.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass

import numpy as np

CE_EPS = 1e-7

# Probability interval per category; boundaries chosen symmetric around 0.5
# with the unbiased band closed on both sides.
DEFAULT_THRESHOLDS = (0.1, 0.45, 0.55, 0.9)


class EmptyInput(Exception):
    pass


class LengthMismatch(Exception):
    pass


class BranchCategory(enum.Enum):
    SNT = "strongly_not_taken"
    WNT = "weakly_not_taken"
    UB = "unbiased"
    WT = "weakly_taken"
    ST = "strongly_taken"


CATEGORY_ORDER = (
    BranchCategory.SNT,
    BranchCategory.WNT,
    BranchCategory.UB,
    BranchCategory.WT,
    BranchCategory.ST,
)


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mae: float
    mean_cross_entropy: float
    closeness: float
    n: int


@dataclass(frozen=True)
class ErrorCdf:
    """buckets[k] = percentage of branches whose prediction error is <= k."""

    buckets: tuple[float, ...]

    def __post_init__(self):
        if len(self.buckets) != 101:
            raise ValueError("error CDF needs 101 buckets (0..100)")


def _check_vectors(*vectors) -> tuple[np.ndarray, ...]:
    arrays = [np.asarray(v, dtype=np.float64) for v in vectors]
    n = arrays[0].shape[0]
    if n == 0:
        raise EmptyInput("metrics need at least one example")
    for a in arrays[1:]:
        if a.shape[0] != n:
            raise LengthMismatch(f"vector lengths differ: {n} vs {a.shape[0]}")
    return tuple(arrays)


def _cross_entropy(preds: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(preds, CE_EPS, 1.0 - CE_EPS)
    return float(-(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)).mean())


def compute_metrics(
    predictions, heuristic_preds, labels
) -> tuple[MetricsReport, MetricsReport]:
    """Aggregate metrics for the model and the heuristic baseline.

    The heuristic closeness is derived as the exact complement of the model
    closeness (wins, losses, and split ties partition the branches).
    """
    ml, heur, y = _check_vectors(predictions, heuristic_preds, labels)
    n = len(y)
    err_ml = np.abs(ml - y)
    err_heur = np.abs(heur - y)
    wins_ml = int((err_ml < err_heur).sum())
    ties = int((err_ml == err_heur).sum())
    closeness_ml = (wins_ml + 0.5 * ties) / n
    closeness_heur = 1.0 - closeness_ml

    def report(preds, err, closeness):
        return MetricsReport(
            rmse=float(np.sqrt((err ** 2).mean())),
            mae=float(err.mean()),
            mean_cross_entropy=_cross_entropy(preds, y),
            closeness=closeness,
            n=n,
        )

    return report(ml, err_ml, closeness_ml), report(heur, err_heur, closeness_heur)


def error_cdf(predictions, labels) -> ErrorCdf:
    """Cumulative share of branches at or below each integer error percent."""
    preds, y = _check_vectors(predictions, labels)
    err_pct = 100.0 * np.abs(preds - y)
    n = len(y)
    # A whisker of slack keeps exact boundary errors in their bucket.
    buckets = tuple(
        float(100.0 * (err_pct <= k + 1e-9).sum() / n) for k in range(101)
    )
    return ErrorCdf(buckets)


def categorize(p: float, thresholds=DEFAULT_THRESHOLDS) -> BranchCategory:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    snt, low, high, st = thresholds
    if p < snt:
        return BranchCategory.SNT
    if p < low:
        return BranchCategory.WNT
    if p <= high:
        return BranchCategory.UB
    if p <= st:
        return BranchCategory.WT
    return BranchCategory.ST


def category_breakdown(heuristic_preds, labels, thresholds=DEFAULT_THRESHOLDS) -> np.ndarray:
    """5x5 table: rows are heuristic categories, columns label categories,
    each nonempty row normalized to percentages."""
    heur, y = _check_vectors(heuristic_preds, labels)
    table = np.zeros((5, 5))
    row_index = {c: i for i, c in enumerate(CATEGORY_ORDER)}
    for hp, label in zip(heur, y):
        r = row_index[categorize(float(hp), thresholds)]
        c = row_index[categorize(float(label), thresholds)]
        table[r, c] += 1
    sums = table.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        pct = np.where(sums > 0, 100.0 * table / sums, 0.0)
    return pct


def _metrics_table(ml: MetricsReport, heur: MetricsReport) -> list[str]:
    rows = [
        ("RMSE", heur.rmse, ml.rmse),
        ("MAE", heur.mae, ml.mae),
        ("Cross Entropy", heur.mean_cross_entropy, ml.mean_cross_entropy),
        ("Closeness", heur.closeness, ml.closeness),
    ]
    lines = ["| Metric | Heuristics | ML |", "| --- | --- | --- |"]
    lines.extend(f"| {name} | {h:.4f} | {m:.4f} |" for name, h, m in rows)
    return lines


def render_report(
    reports: tuple[MetricsReport, MetricsReport],
    cdfs: tuple[ErrorCdf, ErrorCdf],
    breakdown: np.ndarray,
    out_dir,
) -> None:
    """Write report.md and cdf.csv (columns error,ml_pct,heur_pct)."""
    ml, heur = reports
    ml_cdf, heur_cdf = cdfs
    os.makedirs(out_dir, exist_ok=True)

    lines = ["# Branch probability evaluation", ""]
    lines.append(f"Examples evaluated: {ml.n}")
    lines.append("")
    lines.append("## Aggregate metrics")
    lines.append("")
    lines.extend(_metrics_table(ml, heur))
    lines.append("")
    lines.append("## Heuristic category breakdown (% per row)")
    lines.append("")
    names = [c.name for c in CATEGORY_ORDER]
    lines.append("| Heuristic \\ Label | " + " | ".join(names) + " |")
    lines.append("| --- | " + " | ".join("---" for _ in names) + " |")
    for i, name in enumerate(names):
        cells = " | ".join(f"{breakdown[i, j]:.4f}" for j in range(5))
        lines.append(f"| {name} | {cells} |")
    lines.append("")
    with open(os.path.join(out_dir, "report.md"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))

    with open(os.path.join(out_dir, "cdf.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("error,ml_pct,heur_pct\n")
        for k in range(101):
            fh.write(f"{k},{ml_cdf.buckets[k]:.4f},{heur_cdf.buckets[k]:.4f}\n")
