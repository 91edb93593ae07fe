"""Top-k accuracy, macro F1, macro one-vs-rest AUC and the modality x window report."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .alignment import N_VISEMES
from .errors import ValidationError

__all__ = [
    "topk_accuracy",
    "confusion_matrix",
    "per_class_prf",
    "macro_f1",
    "class_auc",
    "macro_ovr_auc",
    "MetricsReport",
    "compute_metrics",
    "render_report",
    "MODALITY_LABELS",
]

MODALITY_LABELS = {"EEG_EMG": "EEG+EMG", "EEG_ONLY": "EEG"}


def _labels(labels, n_classes=N_VISEMES) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValidationError(f"labels must lie in 0..{n_classes - 1}")
    return y


def topk_accuracy(logits, labels, k: int) -> float:
    """Percentage of trials whose label is among the k highest scores
    (ties resolved toward the lower class id)."""
    scores = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = _labels(labels, scores.shape[1])
    if len(y) != len(scores):
        raise ValidationError(f"{len(scores)} score rows for {len(y)} labels")
    if not 1 <= k <= scores.shape[1]:
        raise ValidationError(f"k must be in 1..{scores.shape[1]}")
    if not len(y):
        return float("nan")
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float(100.0 * np.mean(np.any(top == y[:, None], axis=1)))


def confusion_matrix(predictions, labels, n_classes: int = N_VISEMES) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    y = _labels(labels, n_classes)
    p = _labels(predictions, n_classes)
    if len(y) != len(p):
        raise ValidationError("predictions and labels differ in length")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def per_class_prf(predictions, labels, n_classes: int = N_VISEMES):
    cm = confusion_matrix(predictions, labels, n_classes)
    tp = np.diag(cm).astype(np.float64)
    pred_n = cm.sum(axis=0).astype(np.float64)
    true_n = cm.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_n, out=np.zeros_like(tp), where=pred_n > 0)
    recall = np.divide(tp, true_n, out=np.zeros_like(tp), where=true_n > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1, true_n.astype(np.int64), pred_n.astype(np.int64)


def macro_f1(predictions, labels, n_classes: int = N_VISEMES, average_over: str = "present") -> float:
    """Unweighted mean of per-class F1 in [0, 1].

    ``average_over="present"`` averages over classes seen in the labels or
    the predictions; ``"all"`` averages over every class, counting absent
    ones as 0 (with a warning).
    """
    _, _, f1, support, predicted = per_class_prf(predictions, labels, n_classes)
    seen = (support > 0) | (predicted > 0)
    if average_over == "present":
        return float(f1[seen].mean()) if seen.any() else float("nan")
    if average_over != "all":
        raise ValidationError(f"average_over must be 'present' or 'all', got {average_over!r}")
    if not seen.all():
        warnings.warn(f"classes {np.flatnonzero(~seen).tolist()} have no trials; counted as F1 = 0",
                      stacklevel=2)
    return float(f1.mean())


def class_auc(scores, positive) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(equal)."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = len(s) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_ovr_auc(logits, labels) -> float:
    """Macro one-vs-rest AUC (percent) over classes that have both positives and negatives."""
    scores = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = _labels(labels, scores.shape[1])
    if len(y) != len(scores):
        raise ValidationError(f"{len(scores)} score rows for {len(y)} labels")
    aucs = [class_auc(scores[:, c], y == c) for c in range(scores.shape[1])]
    aucs = [a for a in aucs if not np.isnan(a)]
    return float(100.0 * np.mean(aucs)) if aucs else float("nan")


@dataclass
class MetricsReport:
    modality: str
    window_ms: int
    n_trials: int
    top1_pct: float
    top3_pct: float
    f1_macro: float  # 0..1
    auc_pct: float
    precision: list = field(default_factory=list)
    recall: list = field(default_factory=list)
    f1: list = field(default_factory=list)
    confusion: list = field(default_factory=list)

    def f1_value(self, mode: str = "pct") -> float:
        return self.f1_macro * 100.0 if mode == "pct" else self.f1_macro

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def compute_metrics(logits, labels, modality: str, window_ms: int) -> MetricsReport:
    scores = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = _labels(labels, scores.shape[1])
    pred = np.argsort(-scores, axis=1, kind="stable")[:, 0] if len(y) else np.zeros(0, np.int64)
    precision, recall, f1, _, _ = per_class_prf(pred, y, scores.shape[1])
    return MetricsReport(
        modality=modality, window_ms=int(window_ms), n_trials=int(len(y)),
        top1_pct=topk_accuracy(scores, y, 1), top3_pct=topk_accuracy(scores, y, 3),
        f1_macro=macro_f1(pred, y, scores.shape[1]), auc_pct=macro_ovr_auc(scores, y),
        precision=precision.tolist(), recall=recall.tolist(), f1=f1.tolist(),
        confusion=confusion_matrix(pred, y, scores.shape[1]).tolist(),
    )


_COLUMNS = ("Top-1 Acc. (%)", "Top-3 Acc. (%)", "F1-score", "AUC (%)")


def _rows(reports, mode):
    order = {"EEG_EMG": 0, "EEG_ONLY": 1}
    reports = sorted(reports, key=lambda r: (order.get(r.modality, 9), r.modality, r.window_ms))
    for r in reports:
        yield (MODALITY_LABELS.get(r.modality, r.modality), f"{r.window_ms} ms",
               r.top1_pct, r.top3_pct, r.f1_value(mode), r.auc_pct, r)


def render_report(reports, mode: str = "pct") -> tuple[str, str, str]:
    """(text table, JSON, CSV) with one row per (modality, window)."""
    rows = list(_rows(reports, mode))
    head = f"{'':9}{'':8}" + "".join(f"{c:>16}" for c in _COLUMNS)
    lines = [head, "-" * len(head)]
    last = None
    for mod, win, *vals, _ in rows:
        lines.append(f"{mod if mod != last else '':9}{win:8}" + "".join(f"{v:16.2f}" for v in vals))
        last = mod
    text = "\n".join(lines) + "\n"

    payload = {
        "f1_mode": mode,
        "rows": [
            {"modality": r.modality, "window_ms": r.window_ms, "n_trials": r.n_trials,
             "top1_pct": r.top1_pct, "top3_pct": r.top3_pct, "f1": r.f1_value(mode), "auc_pct": r.auc_pct}
            for *_, r in rows
        ],
        "details": [r.to_dict() for *_, r in rows],
    }
    js = json.dumps(payload, indent=1, sort_keys=True) + "\n"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["modality", "window_ms", "top1_pct", "top3_pct", "f1", "auc_pct", "n_trials"])
    for *_, r in rows:
        w.writerow([r.modality, r.window_ms, repr(r.top1_pct), repr(r.top3_pct), repr(r.f1_value(mode)),
                    repr(r.auc_pct), r.n_trials])
    return text, js, buf.getvalue()
