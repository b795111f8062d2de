"""Evaluation metrics: box IOU, mask Dice, accuracy, ROC AUC and mean IOU
over box sets.

Boxes use inclusive integer coordinates, so a box covering a single pixel
has area 1.
"""
import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True, order=True)
class BBox:
    """Time-frequency rectangle in bin coordinates, all bounds inclusive.

    ``t0..t1`` are frame (column) indices, ``f0..f1`` are bin (row) indices.
    """
    t0: int
    t1: int
    f0: int
    f1: int

    def __post_init__(self):
        if min(self.t0, self.t1, self.f0, self.f1) < 0:
            raise ValueError(f"negative box index: {self}")
        if self.t0 > self.t1 or self.f0 > self.f1:
            raise ValueError(f"inverted box: {self}")

    @property
    def width(self):
        return self.t1 - self.t0 + 1

    @property
    def height(self):
        return self.f1 - self.f0 + 1

    @property
    def area(self):
        return self.width * self.height

    def contains(self, t, f):
        return self.t0 <= t <= self.t1 and self.f0 <= f <= self.f1

    def to_dict(self):
        return {"t0": self.t0, "t1": self.t1, "f0": self.f0, "f1": self.f1}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["t0"]), int(d["t1"]), int(d["f0"]), int(d["f1"]))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes (pixel areas)."""
    iw = min(a.t1, b.t1) - max(a.t0, b.t0) + 1
    ih = min(a.f1, b.f1) - max(a.f0, b.f0) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def mask_dice(a, b) -> float:
    """Dice coefficient 2|A&B| / (|A|+|B|) of two boolean masks.

    Two empty masks agree perfectly, so that case returns 1.0.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def accuracy(labels, predictions) -> float:
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions differ in length")
    if labels.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(labels == predictions))


def roc_auc(labels, scores) -> float:
    """ROC AUC through the Mann-Whitney rank statistic.

    Tied scores get half credit, which is what average ranks produce.
    """
    labels = np.asarray(labels).astype(int)
    scores = np.asarray(scores, dtype=float)
    if labels.shape != scores.shape:
        raise ValueError("labels and scores differ in length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC needs both classes present")
    ranks = rankdata(scores)  # average ranks for ties
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def iou_matrix(predicted, reference):
    out = np.zeros((len(predicted), len(reference)))
    for i, p in enumerate(predicted):
        for j, r in enumerate(reference):
            out[i, j] = iou(p, r)
    return out


def greedy_match(m):
    """Greedy one-to-one matching on a score matrix, best pair first.

    Returns ``(row, col, score)`` triples; ties resolve to the lowest
    indices and zero-score pairs are never matched.
    """
    m = np.array(m, dtype=float, copy=True)
    pairs = []
    while m.size and m.max() > 0:
        i, j = np.unravel_index(np.argmax(m), m.shape)
        pairs.append((int(i), int(j), float(m[i, j])))
        m[i, :] = -1.0
        m[:, j] = -1.0
    return pairs


def match_boxes(predicted, reference):
    return greedy_match(iou_matrix(predicted, reference))


def mean_iou_from_matrix(m):
    m = np.asarray(m, dtype=float)
    n = max(m.shape) if m.ndim == 2 else 0
    if n == 0:
        return 1.0
    return sum(v for _, _, v in greedy_match(m)) / n


def mean_iou(predicted, reference) -> float:
    """Mean IOU over greedily matched boxes; unmatched boxes count as 0."""
    if not predicted and not reference:
        return 1.0
    return mean_iou_from_matrix(iou_matrix(predicted, reference))


@dataclass
class EvalReport:
    accuracy: float | None = None
    auc: float | None = None
    mean_iou: float | None = None
    mean_dice: float | None = None
    per_item: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        keys = sorted({k for item in self.per_item for k in item})
        if "id" in keys:
            keys.remove("id")
            keys.insert(0, "id")
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for item in self.per_item:
            writer.writerow(item)
        return buf.getvalue()
