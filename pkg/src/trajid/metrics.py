"""Evaluation metrics and report containers for the identification task.

Everything here is pure bookkeeping over integer predictions: confusion
counts, per-target breakdowns, trial-level majority votes, and the
aggregation of per-fold reports into one run summary.  Rendering of the
percentual confusion matrix uses exact integer arithmetic so that
half-up rounding never depends on floating-point representation.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def _as_class_ids(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise DataError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise DataError(f"{name} must be integers, got dtype {arr.dtype}")
    return arr.astype(np.int64, copy=False)


def majority_vote(predictions) -> int:
    """Most frequent class id among a trial's window predictions.

    Ties break toward the lowest class id.
    """
    preds = _as_class_ids(predictions, "predictions")
    if preds.size == 0:
        raise DataError("majority_vote needs at least one window prediction")
    if preds.min() < 0:
        raise DataError(f"negative class id {preds.min()}")
    return int(np.bincount(preds).argmax())


def confusion_matrix(preds, labels, n_classes: int) -> np.ndarray:
    """counts[i][j] = number of windows with true label i predicted as j."""
    preds = _as_class_ids(preds, "preds")
    labels = _as_class_ids(labels, "labels")
    if preds.shape != labels.shape:
        raise DataError(f"length mismatch: {preds.size} preds vs {labels.size} labels")
    if n_classes < 1:
        raise DataError(f"n_classes must be >= 1, got {n_classes}")
    for name, arr in (("pred", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise DataError(f"{name} class id out of range [0, {n_classes - 1}]")
    flat = np.bincount(labels * n_classes + preds, minlength=n_classes * n_classes)
    return flat.reshape(n_classes, n_classes)


def render_percent(matrix) -> np.ndarray:
    """Row-normalize counts to integer percentages, rounding half up.

    (200*c + s) // (2*s) is exactly round-half-up(100*c/s) in integer
    arithmetic.  Rows summing to zero render as all zeros.
    """
    counts = np.asarray(matrix)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
        raise DataError(f"confusion matrix must be square, got shape {counts.shape}")
    if counts.size and not np.issubdtype(counts.dtype, np.integer):
        raise DataError(f"confusion counts must be integers, got dtype {counts.dtype}")
    if counts.size and counts.min() < 0:
        raise DataError("confusion counts must be non-negative")
    out = np.zeros_like(counts, dtype=np.int64)
    sums = counts.sum(axis=1)
    for i, s in enumerate(sums):
        if s > 0:
            out[i] = (200 * counts[i].astype(np.int64) + s) // (2 * s)
    return out


def per_target_accuracy(target_ids, correct, n_targets: int) -> list:
    """Window accuracy restricted to each movement target.

    Targets with no test windows yield None (absent), never 0.
    """
    targets = _as_class_ids(target_ids, "target_ids")
    hits = np.asarray(correct)
    if hits.shape != targets.shape:
        raise DataError(f"length mismatch: {targets.size} targets vs {hits.size} outcomes")
    if hits.size and hits.dtype != np.bool_ and not np.issubdtype(hits.dtype, np.integer):
        raise DataError(f"correct must be boolean, got dtype {hits.dtype}")
    if targets.size and (targets.min() < 0 or targets.max() >= n_targets):
        raise DataError(f"target id out of range [0, {n_targets - 1}]")
    totals = np.bincount(targets, minlength=n_targets)
    good = np.bincount(targets, weights=hits.astype(np.float64), minlength=n_targets)
    return [float(good[t]) / int(totals[t]) if totals[t] else None
            for t in range(n_targets)]


def lower_median(values) -> float:
    """Median taking the lower of the two middle values for even counts."""
    vals = sorted(float(v) for v in values)
    if not vals:
        raise DataError("median of an empty sequence")
    return vals[(len(vals) - 1) // 2]


@dataclass
class FoldReport:
    """Everything measured for a single cross-validation fold.

    ``best_epoch`` is 1-based; ``per_target[t]`` is None when target t
    had no test windows in this fold.  Curves have one entry per epoch.
    """

    fold_id: int
    best_epoch: int
    window_accuracy: float
    trial_accuracy: float
    per_target: list
    confusion: list  # P x P counts, label-major
    train_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    n_test_windows: int = 0
    n_test_trials: int = 0

    def __post_init__(self):
        for name in ("window_accuracy", "trial_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"{name} must be in [0, 1], got {v}")
        for t, v in enumerate(self.per_target):
            if v is not None and not 0.0 <= v <= 1.0:
                raise DataError(f"per_target[{t}] must be in [0, 1] or None, got {v}")
        total = int(np.sum(self.confusion))
        if total != self.n_test_windows:
            raise DataError(
                f"confusion counts sum to {total}, expected {self.n_test_windows} test windows"
            )
        if len(self.train_loss) != len(self.val_accuracy):
            raise DataError("train and validation curves must cover the same epochs")

    def to_dict(self) -> dict:
        return {
            "fold_id": self.fold_id,
            "best_epoch": self.best_epoch,
            "window_accuracy": self.window_accuracy,
            "trial_accuracy": self.trial_accuracy,
            "per_target": self.per_target,
            "confusion": [[int(c) for c in row] for row in self.confusion],
            "train_loss": [float(v) for v in self.train_loss],
            "val_accuracy": [float(v) for v in self.val_accuracy],
            "n_test_windows": self.n_test_windows,
            "n_test_trials": self.n_test_trials,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FoldReport":
        return cls(**data)


@dataclass
class RunSummary:
    """Aggregate of all fold reports for one cross-validation run."""

    n_folds: int
    window_accuracy: dict  # mean/median/min/max/values
    trial_accuracy: dict
    per_target: list  # per target: {"values": [...], "median": float | None}
    confusion: list  # summed counts
    confusion_percent: list

    def to_dict(self) -> dict:
        return {
            "n_folds": self.n_folds,
            "window_accuracy": self.window_accuracy,
            "trial_accuracy": self.trial_accuracy,
            "per_target": self.per_target,
            "confusion": [[int(c) for c in row] for row in self.confusion],
            "confusion_percent": [[int(c) for c in row] for row in self.confusion_percent],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunSummary":
        return cls(**data)


def _spread(values) -> dict:
    vals = [float(v) for v in values]
    return {
        "mean": sum(vals) / len(vals),
        "median": lower_median(vals),
        "min": min(vals),
        "max": max(vals),
        "values": vals,
    }


def aggregate(reports) -> RunSummary:
    """Fold reports -> run summary with spreads and the summed confusion."""
    reports = list(reports)
    if not reports:
        raise DataError("aggregate needs at least one fold report")
    n_targets = len(reports[0].per_target)
    n_classes = len(reports[0].confusion)
    for r in reports:
        if len(r.per_target) != n_targets or len(r.confusion) != n_classes:
            raise DataError(f"fold {r.fold_id} disagrees on target/class counts")
    summed = np.zeros((n_classes, n_classes), dtype=np.int64)
    for r in reports:
        summed += np.asarray(r.confusion, dtype=np.int64)
    per_target = []
    for t in range(n_targets):
        values = [r.per_target[t] for r in reports if r.per_target[t] is not None]
        per_target.append({
            "values": values,
            "median": lower_median(values) if values else None,
        })
    return RunSummary(
        n_folds=len(reports),
        window_accuracy=_spread(r.window_accuracy for r in reports),
        trial_accuracy=_spread(r.trial_accuracy for r in reports),
        per_target=per_target,
        confusion=summed.tolist(),
        confusion_percent=render_percent(summed).tolist(),
    )
