"""Token-level micro P/R/F1, frame-level accuracy, and decision-threshold
tuning on a fixed 0.005 grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

THRESHOLD_GRID = [round(i * 0.005, 3) for i in range(201)]


@dataclass
class Prf:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def _prf_from_counts(tp: int, fp: int, fn: int) -> Prf:
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return Prf(precision=p, recall=r, f1=f1, tp=tp, fp=fp, fn=fn)


def token_prf(pred_seqs, gold_seqs, negative_label="O") -> Prf:
    """Micro-averaged token P/R/F1 where the negative label does not count as
    a positive. Pass negative_label=None to count every token (accuracy-style
    ablation).
    """
    if len(pred_seqs) != len(gold_seqs):
        raise ShapeError("token_prf: different numbers of sequences")
    tp = fp = fn = 0
    for pred, gold in zip(pred_seqs, gold_seqs):
        pred = list(pred)
        gold = list(gold)
        if len(pred) != len(gold):
            raise ShapeError("token_prf: sequence length mismatch")
        for p, g in zip(pred, gold):
            if p == g:
                if negative_label is None or g != negative_label:
                    tp += 1
            else:
                if negative_label is None or p != negative_label:
                    fp += 1
                if negative_label is None or g != negative_label:
                    fn += 1
    return _prf_from_counts(tp, fp, fn)


def set_prf(pred_sets, gold_sets) -> Prf:
    """Micro-averaged P/R/F1 over label instances in aligned label sets."""
    if len(pred_sets) != len(gold_sets):
        raise ShapeError("set_prf: different numbers of frames")
    tp = fp = fn = 0
    for pred, gold in zip(pred_sets, gold_sets):
        pred = set(pred)
        gold = set(gold)
        tp += len(pred & gold)
        fp += len(pred - gold)
        fn += len(gold - pred)
    return _prf_from_counts(tp, fp, fn)


def frame_accuracy(preds, golds, kind: str = "set") -> float:
    """Fraction of frames that match gold exactly (whole sequence or whole set)."""
    if kind not in ("set", "sequence"):
        raise ValueError(f"frame_accuracy: kind must be 'set' or 'sequence', got {kind!r}")
    if len(preds) != len(golds):
        raise ShapeError("frame_accuracy: different numbers of frames")
    if not preds:
        return 0.0
    correct = 0
    for p, g in zip(preds, golds):
        if kind == "set":
            if set(p) == set(g):
                correct += 1
        else:
            if list(p) == list(g):
                correct += 1
    return correct / len(preds)


def tune_threshold(prob_vectors, gold_sets, objective: str = "frame-accuracy") -> float:
    """Grid-search the decision threshold maximizing frame accuracy on dev.

    Ties break to the LOWEST threshold so tuning is deterministic.
    """
    if objective != "frame-accuracy":
        raise ValueError(f"tune_threshold: unsupported objective {objective!r}")
    probs = [np.asarray(p, dtype=float) for p in prob_vectors]
    if len(probs) == 0 or len(probs) != len(gold_sets):
        raise ValueError("tune_threshold: need equally many non-empty probs and gold sets")
    mat = np.vstack(probs)  # (F, K)
    gold = np.zeros_like(mat)
    for i, labels in enumerate(gold_sets):
        for k in labels:
            gold[i, int(k)] = 1.0
    best_t = THRESHOLD_GRID[0]
    best_acc = -1.0
    for t in THRESHOLD_GRID:
        acc = float(np.mean(np.all((mat >= t) == (gold > 0), axis=1)))
        if acc > best_acc:
            best_acc = acc
            best_t = t
    return best_t


@dataclass
class TaskMetrics:
    precision: float
    recall: float
    f1: float
    frame_accuracy: float
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @classmethod
    def from_prf(cls, prf: Prf, frame_acc: float) -> "TaskMetrics":
        return cls(
            precision=prf.precision,
            recall=prf.recall,
            f1=prf.f1,
            frame_accuracy=frame_acc,
            tp=prf.tp,
            fp=prf.fp,
            fn=prf.fn,
        )


@dataclass
class EvalReport:
    """Per-task scores plus the thresholds they were computed with."""

    tasks: dict[str, TaskMetrics]
    thresholds: dict[str, float] = field(default_factory=dict)
    nlu_frame_accuracy: float | None = None

    def to_record(self) -> dict:
        record: dict = {}
        for name, tm in self.tasks.items():
            record[name] = {
                "F1": tm.f1,
                "P": tm.precision,
                "R": tm.recall,
                "FrmAcc": tm.frame_accuracy,
                "TP": tm.tp,
                "FP": tm.fp,
                "FN": tm.fn,
            }
        if self.nlu_frame_accuracy is not None:
            record["nlu_combined"] = {"FrmAcc": self.nlu_frame_accuracy}
        if self.thresholds:
            record["thresholds"] = dict(self.thresholds)
        return record
