"""Precision/recall curves, step-integrated average precision and mean AP."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class UndefinedAPError(ValueError):
    """A class has no positive items, so its AP is undefined."""


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray  # one point per ranked item; the origin (0, 1) is implicit
    precision: np.ndarray
    positives: int


def pr_curve(scores, labels) -> PRCurve:
    """Rank by descending score (ties keep original order) and trace P/R."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d and of equal length")
    positives = int(labels.sum())
    if positives == 0:
        raise UndefinedAPError("no positive items")
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(labels[order])
    ranks = np.arange(1, len(scores) + 1)
    return PRCurve(tp / positives, tp / ranks, positives)


def average_precision(curve: PRCurve) -> float:
    """Rectangle rule over recall: ``sum_k (R_k - R_{k-1}) * P_k`` with ``R_0 = 0``."""
    steps = np.diff(curve.recall, prepend=0.0)
    return float(np.sum(steps * curve.precision))


def ap_oracle(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Brute-force AP for cross-checking :func:`average_precision`.

    Every item serves as a threshold; the items retrieved at that threshold
    are those whose (score, -index) key is at least the threshold's, which is
    the same tie rule as the ranked path.  Each threshold yields one exact
    (recall, precision) point and the staircase is rectangle-integrated.
    Quadratic on purpose and shares no code with the vectorized path.
    """
    n = len(scores)
    total_pos = sum(1 for y in labels if y)
    if total_pos == 0:
        raise UndefinedAPError("no positive items")
    points = []
    for t in range(n):
        retrieved = hits = 0
        for j in range(n):
            if scores[j] > scores[t] or (scores[j] == scores[t] and j <= t):
                retrieved += 1
                hits += 1 if labels[j] else 0
        points.append((retrieved, hits / total_pos, hits / retrieved))
    points.sort()
    area = 0.0
    prev_recall = 0.0
    for _, recall, precision in points:
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


@dataclass(frozen=True)
class EvalReport:
    class_names: Tuple[str, ...]
    ap: Tuple[Optional[float], ...]  # None where the class had no positives
    mean_ap: float
    item_count: int

    def to_text(self) -> str:
        lines = []
        for name, ap in zip(self.class_names, self.ap):
            lines.append(f"{name}\t{'undefined' if ap is None else format(ap, '.6f')}")
        lines.append(f"mAP\t{self.mean_ap:.6f}")
        return "\n".join(lines) + "\n"

    def to_machine_text(self) -> str:
        header = ",".join(("metric",) + self.class_names + ("mAP",))
        vals = ["" if ap is None else repr(ap) for ap in self.ap] + [repr(self.mean_ap)]
        return header + "\n" + ",".join(["ap"] + vals) + "\n"

    @classmethod
    def from_machine_text(cls, text: str, item_count: int = 0) -> "EvalReport":
        header, row = text.rstrip("\n").split("\n")
        names = header.split(",")[1:-1]
        vals = row.split(",")[1:]
        ap = tuple(None if v == "" else float(v) for v in vals[:-1])
        return cls(tuple(names), ap, float(vals[-1]), item_count)


def mean_ap(scores: np.ndarray, labels: Sequence[int], class_names: Optional[Sequence[str]] = None) -> EvalReport:
    """One-vs-rest AP for every column of ``scores`` and their mean.

    Classes without positives are reported as undefined and left out of the
    mean, with a warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = scores.shape
    if labels.shape != (n,):
        raise ValueError(f"{n} score rows but {labels.shape} labels")
    if class_names is None:
        class_names = [str(k) for k in range(c)]
    aps: List[Optional[float]] = []
    for k in range(c):
        try:
            aps.append(average_precision(pr_curve(scores[:, k], labels == k)))
        except UndefinedAPError:
            logger.warning("class %s has no positives; excluded from mAP", class_names[k])
            aps.append(None)
    defined = [a for a in aps if a is not None]
    if not defined:
        raise UndefinedAPError("no class has any positive item")
    return EvalReport(tuple(class_names), tuple(aps), float(np.mean(defined)), n)
