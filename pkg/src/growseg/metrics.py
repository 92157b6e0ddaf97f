"""Segmentation accuracy metrics and post-processing.

Provides overlap scores (Dice, Jaccard), the mean symmetric surface
distance built on an exact Euclidean distance transform, connected
component labeling with largest-object filtering, and grid search over
the admission threshold of a parameterized segmenter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dataset import Triple
from .imgio import as_mask


class TuningError(RuntimeError):
    """Every candidate threshold produced an undefined metric value."""


@dataclass(frozen=True)
class MetricReport:
    dice: float
    jaccard: float
    mssd: float | None  # None when exactly one mask is empty


@dataclass(frozen=True)
class ComponentLabeling:
    labels: np.ndarray  # int32 (H, W); 0 = background
    sizes: np.ndarray  # sizes[k] = pixel count of component k, sizes[0] = 0

    @property
    def n_components(self) -> int:
        return len(self.sizes) - 1


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def dice(a: np.ndarray, b: np.ndarray) -> float:
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return 1.0
    inter = int(np.count_nonzero(a & b))
    return 2.0 * inter / (na + nb)


def jaccard(a: np.ndarray, b: np.ndarray) -> float:
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(a & b))
    return inter / union


# ---------------------------------------------------------------------------
# exact Euclidean distance transform (two-pass, integer squared distances)

def _column_distances(mask: np.ndarray) -> np.ndarray:
    """Per pixel: distance to the nearest foreground pixel in its own column.

    Columns with no foreground get the sentinel H + W, whose square exceeds
    any true squared distance (H-1)^2 + (W-1)^2, so those parabolas never
    win in the row pass.
    """
    h, w = mask.shape
    sentinel = h + w
    dist = np.empty((h, w), dtype=np.int64)
    run = np.full(w, sentinel, dtype=np.int64)
    for i in range(h):
        run = np.where(mask[i] > 0, 0, np.minimum(run + 1, sentinel))
        dist[i] = run
    run = np.full(w, sentinel, dtype=np.int64)
    for i in range(h - 1, -1, -1):
        run = np.where(mask[i] > 0, 0, np.minimum(run + 1, sentinel))
        np.minimum(dist[i], run, out=dist[i])
    return dist


def _dt1d_sq(f: list[int], n: int) -> list[int]:
    """Exact 1-d squared distance transform: d[q] = min_p (q-p)^2 + f[p].

    Lower envelope of parabolas; the minima themselves stay integral so the
    result is exact.
    """
    d = [0] * n
    v = [0] * n  # parabola sites
    z = [0.0] * (n + 1)  # envelope breakpoints
    k = 0
    z[0] = -float("inf")
    z[1] = float("inf")
    for q in range(1, n):
        fq = f[q] + q * q
        s = (fq - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = (fq - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = float("inf")
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def squared_distance_field(mask: np.ndarray) -> np.ndarray:
    """Exact integer squared Euclidean distance to the nearest foreground pixel."""
    mask = as_mask(mask)
    if mask.sum() == 0:
        raise ValueError("distance field of an empty mask is undefined")
    h, w = mask.shape
    col = _column_distances(mask)
    colsq = col * col
    out = np.empty((h, w), dtype=np.int64)
    for i in range(h):
        out[i] = _dt1d_sq(colsq[i].tolist(), w)
    return out


def distance_field(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance (pixels) to the nearest foreground pixel."""
    return np.sqrt(squared_distance_field(mask).astype(np.float64))


def mssd(a: np.ndarray, b: np.ndarray) -> float | None:
    """Mean symmetric surface distance between two masks.

    Sums, over every foreground pixel of each mask, the Euclidean distance
    to the nearest foreground pixel of the other mask, normalized by the
    total foreground count. Two empty masks score 0.0; exactly one empty
    mask has no defined distances and returns None.
    """
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 0.0
    if na == 0 or nb == 0:
        return None
    total = distance_field(b)[a > 0].sum() + distance_field(a)[b > 0].sum()
    return float(total / (na + nb))


# ---------------------------------------------------------------------------
# connected components (run-based two-pass with union-find)

def _row_runs(row: np.ndarray) -> np.ndarray:
    """Half-open [start, end) column intervals of consecutive foreground."""
    edges = np.flatnonzero(np.diff(np.concatenate(([0], row, [0]))))
    return edges.reshape(-1, 2)


def label_components(mask: np.ndarray, connectivity: int = 8) -> ComponentLabeling:
    """Label connected foreground components; ids follow row-major scan order."""
    mask = as_mask(mask)
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent: list[int] = []

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    reach = 1 if connectivity == 8 else 0
    prev: list[tuple[int, int, int]] = []  # (start, end, run id) in previous row
    run_rows: list[tuple[int, int, int]] = []  # (row, start, end) per run id
    for i in range(h):
        cur: list[tuple[int, int, int]] = []
        j = 0  # runs are sorted by start, so matching is a linear merge
        for s, e in _row_runs(mask[i]):
            s, e = int(s), int(e)
            rid = len(parent)
            parent.append(rid)
            run_rows.append((i, s, e))
            while j < len(prev) and prev[j][1] + reach <= s:
                j += 1
            jj = j
            while jj < len(prev) and prev[jj][0] < e + reach:
                ra, rb = find(rid), find(prev[jj][2])
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
                jj += 1
            cur.append((s, e, rid))
        prev = cur

    remap: dict[int, int] = {}
    for rid, (i, s, e) in enumerate(run_rows):
        root = find(rid)
        if root not in remap:
            remap[root] = len(remap) + 1
        labels[i, s:e] = remap[root]
    sizes = np.bincount(labels.ravel(), minlength=len(remap) + 1)[: len(remap) + 1]
    sizes[0] = 0
    return ComponentLabeling(labels=labels, sizes=sizes)


def largest_component(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Keep only the largest component; ties go to the earliest scan-order id."""
    labeling = label_components(mask, connectivity)
    if labeling.n_components == 0:
        return np.zeros_like(as_mask(mask))
    best = int(np.argmax(labeling.sizes[1:])) + 1
    return (labeling.labels == best).astype(np.uint8)


# ---------------------------------------------------------------------------
# evaluation and threshold tuning

def evaluate(
    pred: np.ndarray,
    gt: np.ndarray,
    roi: np.ndarray,
    keep_largest: bool = False,
) -> MetricReport:
    """Score a prediction against ground truth inside the region of interest."""
    pred, gt, roi = as_mask(pred), as_mask(gt), as_mask(roi)
    _check_same_shape(pred, gt)
    _check_same_shape(pred, roi)
    pred = pred & roi
    gt = gt & roi
    if keep_largest:
        pred = largest_component(pred)
    return MetricReport(dice=dice(pred, gt), jaccard=jaccard(pred, gt), mssd=mssd(pred, gt))


METRIC_NAMES = ("dice", "jaccard", "mssd")


def _single_metric(
    pred: np.ndarray, gt: np.ndarray, roi: np.ndarray, metric: str, keep_largest: bool
) -> float:
    pred = as_mask(pred) & as_mask(roi)
    gt = as_mask(gt) & as_mask(roi)
    if keep_largest:
        pred = largest_component(pred)
    if metric == "dice":
        return dice(pred, gt)
    if metric == "jaccard":
        return jaccard(pred, gt)
    value = mssd(pred, gt)
    return float("inf") if value is None else value


def tune_threshold(
    segment_fn: Callable[[Triple, float], np.ndarray],
    validation: Sequence[Triple],
    metric: str,
    grid: Sequence[float],
    keep_largest: bool = False,
) -> tuple[float, float]:
    """Pick the grid threshold with the best mean metric over validation images.

    Dice and Jaccard are maximized, surface distance is minimized with
    undefined values treated as worst possible; ties keep the smallest
    threshold.
    """
    if metric not in METRIC_NAMES:
        raise ValueError(f"unknown metric {metric!r}")
    if len(grid) == 0 or len(validation) == 0:
        raise ValueError("tune_threshold needs a nonempty grid and validation set")
    minimize = metric == "mssd"
    best: tuple[float, float] | None = None
    for threshold in grid:
        values = []
        for triple in validation:
            pred = segment_fn(triple, float(threshold))
            values.append(_single_metric(pred, triple.gt, triple.roi, metric, keep_largest))
        score = float(np.mean(values))
        better = best is None or (score < best[1] if minimize else score > best[1])
        if better:
            best = (float(threshold), score)
    assert best is not None
    if minimize and not np.isfinite(best[1]):
        raise TuningError("metric undefined at every grid threshold")
    return best


def default_threshold_grid() -> np.ndarray:
    """Thresholds 0.05 to 0.95 in steps of 0.05."""
    return np.round(np.arange(1, 20) * 0.05, 2)
