"""Tolerance-aware place recognition metrics.

A prediction is a ranked candidate list per query; a candidate counts as
correct when it falls within the dataset tolerance of the true reference
index (frame units) or of the true position (distance units). Accuracy is
recall@1; the precision-recall curve sweeps a confidence threshold over the
top-1 scores, so every metric here depends only on rankings and score
order, never on score magnitudes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class PredictionRecord:
    """Ranked predictions of one query frame.

    `ranking` holds distinct place indices in descending score order (a
    prefix of the full ranking is fine); `ranked_scores` aligns with it.
    """

    query_index: int
    ranking: np.ndarray
    ranked_scores: np.ndarray
    truth: int
    n_places: int

    def __post_init__(self) -> None:
        ranking = np.asarray(self.ranking, dtype=np.int64)
        scores = np.asarray(self.ranked_scores, dtype=float)
        if ranking.ndim != 1 or ranking.shape != scores.shape or ranking.size == 0:
            raise ValueError("ranking and ranked_scores must be matching 1-D arrays")
        if np.any(ranking < 0) or np.any(ranking >= self.n_places):
            raise ValueError(f"ranking entries must lie in [0, {self.n_places})")
        if len(np.unique(ranking)) != ranking.size:
            raise ValueError("ranking must not repeat candidates")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        if not 0 <= self.truth < self.n_places:
            raise ValueError(f"truth index {self.truth} outside [0, {self.n_places})")
        object.__setattr__(self, "ranking", ranking)
        object.__setattr__(self, "ranked_scores", scores)

    @property
    def top1(self) -> int:
        return int(self.ranking[0])

    @property
    def confidence(self) -> float:
        return float(self.ranked_scores[0])


def record_from_scores(
    query_index: int,
    scores: np.ndarray,
    truth: int,
    keep: int | None = None,
) -> PredictionRecord:
    """Build a record from a full score vector, keeping the top `keep` entries."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1:
        raise ValueError("scores must be a flat vector")
    order = np.argsort(-scores, kind="stable")
    if keep is not None:
        order = order[:keep]
    return PredictionRecord(
        query_index=query_index,
        ranking=order,
        ranked_scores=scores[order],
        truth=truth,
        n_places=scores.shape[0],
    )


def is_match(
    predicted: int,
    truth: int,
    tolerance: float,
    units: str = "frames",
    positions: np.ndarray | None = None,
) -> bool:
    """Whether a predicted place is within tolerance of the true one.

    Frame units compare indices directly; distance units compare the
    per-frame positions of the two indices (boundary inclusive in both).
    """
    if tolerance < 0:
        raise ValueError(f"tolerance must be >= 0, got {tolerance}")
    if units == "frames":
        return abs(int(predicted) - int(truth)) <= tolerance
    if units == "meters":
        if positions is None:
            raise ValueError("meters tolerance requires per-frame positions")
        positions = np.asarray(positions, dtype=float)
        delta = positions[int(predicted)] - positions[int(truth)]
        return float(np.linalg.norm(delta)) <= tolerance
    raise ValueError(f"unknown tolerance units {units!r}")


def _match_depth(
    record: PredictionRecord,
    n: int,
    tolerance: float,
    units: str,
    positions: np.ndarray | None,
) -> bool:
    return any(
        is_match(int(p), record.truth, tolerance, units, positions)
        for p in record.ranking[:n]
    )


def accuracy(
    records: list[PredictionRecord],
    tolerance: float,
    units: str = "frames",
    positions: np.ndarray | None = None,
) -> float:
    return recall_at_n(records, 1, tolerance, units, positions)


def recall_at_n(
    records: list[PredictionRecord],
    n: int,
    tolerance: float,
    units: str = "frames",
    positions: np.ndarray | None = None,
) -> float:
    """Fraction of queries whose top-n candidates include a valid match."""
    if not records:
        raise ValueError("records must be nonempty")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    places = records[0].n_places
    if n > places:
        raise ValueError(f"n={n} exceeds the {places} available places")
    hits = sum(_match_depth(r, n, tolerance, units, positions) for r in records)
    return hits / len(records)


def pr_auc(
    records: list[PredictionRecord],
    tolerance: float,
    units: str = "frames",
    positions: np.ndarray | None = None,
) -> float:
    """Area under the precision-recall curve of thresholded top-1 predictions.

    Sweeping a confidence threshold downward, each point accepts the
    queries whose top-1 score clears it: precision is the fraction of
    accepted that are correct, recall the fraction of all queries that are
    accepted and correct. Trapezoidal integration; the recall-0 anchor uses
    precision 1 only when the most confident accepted group is all correct.
    """
    if not records:
        raise ValueError("records must be nonempty")
    confidences = np.array([r.confidence for r in records])
    correct = np.array(
        [
            is_match(r.top1, r.truth, tolerance, units, positions)
            for r in records
        ],
        dtype=float,
    )
    order = np.argsort(-confidences, kind="stable")
    confidences = confidences[order]
    correct = correct[order]
    total = len(records)
    # Group tied confidences: a threshold accepts whole groups at once.
    boundary = np.nonzero(np.diff(confidences))[0]
    group_ends = np.append(boundary, total - 1)
    cum_correct = np.cumsum(correct)
    accepted = group_ends + 1.0
    tp = cum_correct[group_ends]
    precision = tp / accepted
    recall = tp / total
    recall = np.concatenate([[0.0], recall])
    precision = np.concatenate([[1.0 if correct[0] else precision[0]], precision])
    return float(np.trapezoid(precision, recall))


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics plus the per-query records they came from."""

    accuracy: float
    recall: dict[int, float]
    pr_auc: float
    records: list[PredictionRecord]
    tolerance: float
    tolerance_units: str

    def to_dict(self, ranking_limit: int | None = None) -> dict:
        rows = []
        for r in self.records:
            ranking = r.ranking if ranking_limit is None else r.ranking[:ranking_limit]
            scores = (
                r.ranked_scores
                if ranking_limit is None
                else r.ranked_scores[:ranking_limit]
            )
            rows.append(
                {
                    "query_index": int(r.query_index),
                    "ranking": [int(v) for v in ranking],
                    "ranked_scores": [float(v) for v in scores],
                    "truth": int(r.truth),
                    "n_places": int(r.n_places),
                }
            )
        return {
            "accuracy": self.accuracy,
            "recall": {str(n): v for n, v in sorted(self.recall.items())},
            "pr_auc": self.pr_auc,
            "tolerance": self.tolerance,
            "tolerance_units": self.tolerance_units,
            "records": rows,
        }

    def summary_row(self) -> dict:
        row = {"accuracy": self.accuracy, "pr_auc": self.pr_auc}
        for n, v in sorted(self.recall.items()):
            row[f"recall@{n}"] = v
        return row


def evaluate(
    records: list[PredictionRecord],
    recall_ns: list[int],
    tolerance: float,
    units: str = "frames",
    positions: np.ndarray | None = None,
) -> EvalReport:
    recall = {
        int(n): recall_at_n(records, int(n), tolerance, units, positions)
        for n in recall_ns
    }
    return EvalReport(
        accuracy=accuracy(records, tolerance, units, positions),
        recall=recall,
        pr_auc=pr_auc(records, tolerance, units, positions),
        records=records,
        tolerance=tolerance,
        tolerance_units=units,
    )


def save_report(path: str | Path, report: EvalReport, ranking_limit: int | None = None) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(ranking_limit), indent=2, sort_keys=True)
    )


def load_report_records(path: str | Path) -> tuple[list[PredictionRecord], dict]:
    """Records plus the metric settings stored in a report file."""
    data = json.loads(Path(path).read_text())
    records = [
        PredictionRecord(
            query_index=row["query_index"],
            ranking=np.asarray(row["ranking"], dtype=np.int64),
            ranked_scores=np.asarray(row["ranked_scores"], dtype=float),
            truth=row["truth"],
            n_places=row["n_places"],
        )
        for row in data["records"]
    ]
    meta = {
        "tolerance": data["tolerance"],
        "tolerance_units": data["tolerance_units"],
        "recall_ns": [int(n) for n in data["recall"]],
    }
    return records, meta


def write_summary_csv(path: str | Path, rows: list[dict]) -> None:
    """Flat comma-separated summary, one row per trial plus aggregate rows."""
    if not rows:
        raise ValueError("no rows to write")
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    k: (f"{v:.12g}" if isinstance(v, float) else v)
                    for k, v in row.items()
                }
            )
