"""Clustering-distance and classifier-evaluation metrics.

Variation of information is computed in natural log from the pixel
contingency table: VI = H(X|Y) + H(Y|X). Pixels whose ground-truth id is 0
(unlabeled extracellular space) are excluded by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabels, EmptyOverlap, GeometryMismatch
from .imageops import adjacency_pairs


@dataclass(frozen=True)
class MetricValue:
    vi: float
    h_x_given_y: float
    h_y_given_x: float


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float


def _joint_counts(x: np.ndarray, y: np.ndarray,
                  ignore_zero_y: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if x.shape != y.shape:
        raise GeometryMismatch(f"label maps differ in shape: {x.shape} vs {y.shape}")
    xf = np.asarray(x).ravel().astype(np.int64)
    yf = np.asarray(y).ravel().astype(np.int64)
    if ignore_zero_y:
        keep = yf != 0
        xf, yf = xf[keep], yf[keep]
    if xf.size == 0:
        raise EmptyOverlap("all pixels excluded from the metric")
    stride = yf.max() + 1
    codes = xf * stride + yf
    uniq, counts = np.unique(codes, return_counts=True)
    return uniq // stride, uniq % stride, counts


def vi(x: np.ndarray, y: np.ndarray, ignore_zero_y: bool = True) -> MetricValue:
    """Variation of information between two label maps, in nats."""
    xi, yi, n = _joint_counts(x, y, ignore_zero_y)
    total = n.sum()
    p = n / total

    # marginals by summing joint counts per id
    _, x_inv = np.unique(xi, return_inverse=True)
    _, y_inv = np.unique(yi, return_inverse=True)
    px = np.bincount(x_inv, weights=p)
    py = np.bincount(y_inv, weights=p)

    h_x_given_y = float(-(p * (np.log(p) - np.log(py[y_inv]))).sum())
    h_y_given_x = float(-(p * (np.log(p) - np.log(px[x_inv]))).sum())
    # clamp the tiny negative residue of float cancellation
    h_x_given_y = max(h_x_given_y, 0.0)
    h_y_given_x = max(h_y_given_x, 0.0)
    return MetricValue(vi=h_x_given_y + h_y_given_x,
                       h_x_given_y=h_x_given_y, h_y_given_x=h_y_given_x)


def max_overlap_map(auto: np.ndarray, gt: np.ndarray) -> dict[int, tuple[int, float]]:
    """For every nonzero auto id: (gt id of maximum pixel overlap, fraction).

    gt id 0 is ignored when choosing the target; the fraction is the overlap
    count divided by the segment's full pixel area. Segments overlapping only
    gt 0 map to (0, 0.0).
    """
    if auto.shape != gt.shape:
        raise GeometryMismatch(f"label maps differ in shape: {auto.shape} vs {gt.shape}")
    af = np.asarray(auto).ravel().astype(np.int64)
    gf = np.asarray(gt).ravel().astype(np.int64)
    areas = dict(zip(*np.unique(af, return_counts=True)))
    keep = (af != 0) & (gf != 0)
    out: dict[int, tuple[int, float]] = {
        int(a): (0, 0.0) for a in areas if a != 0}
    if keep.any():
        stride = gf.max() + 1
        codes = af[keep] * stride + gf[keep]
        uniq, counts = np.unique(codes, return_counts=True)
        a_ids = uniq // stride
        g_ids = uniq % stride
        # iterate cells in (a, count) order so the largest overlap wins and
        # ties resolve to the smaller gt id deterministically
        order = np.lexsort((g_ids, -counts, a_ids))
        seen: set[int] = set()
        for k in order:
            a = int(a_ids[k])
            if a in seen:
                continue
            seen.add(a)
            out[a] = (int(g_ids[k]), float(counts[k]) / float(areas[a]))
    return out


def best_possible_vi(auto: np.ndarray, gt: np.ndarray) -> MetricValue:
    """VI after relabeling every auto segment to its maximum-overlap gt id.

    This is the floor reachable by merging segments (split fixes) alone.
    """
    mapping = max_overlap_map(auto, gt)
    relabeled = np.zeros_like(np.asarray(auto), dtype=np.int64)
    a = np.asarray(auto).astype(np.int64)
    for auto_id, (gt_id, _) in mapping.items():
        relabeled[a == auto_id] = gt_id
    return vi(relabeled, gt, ignore_zero_y=True)


def error_census(auto: np.ndarray, gt: np.ndarray,
                 secondary_floor: float = 0.25) -> tuple[int, int]:
    """Count (split_errors, merge_errors) against ground truth.

    Split errors: adjacent auto pairs whose maximum-overlap gt ids coincide.
    Merge errors: auto segments covering >= 2 nonzero gt ids, each with at
    least `secondary_floor` of the segment's pixels (the floor keeps 1-pixel
    bleeds out of the count).
    """
    mapping = max_overlap_map(auto, gt)
    splits = 0
    for a, b in adjacency_pairs(auto):
        ga, _ = mapping[a]
        gb, _ = mapping[b]
        if ga != 0 and ga == gb:
            splits += 1

    af = np.asarray(auto).ravel().astype(np.int64)
    gf = np.asarray(gt).ravel().astype(np.int64)
    areas = dict(zip(*np.unique(af, return_counts=True)))
    keep = (af != 0) & (gf != 0)
    merges = 0
    if keep.any():
        stride = gf.max() + 1
        codes = af[keep] * stride + gf[keep]
        uniq, counts = np.unique(codes, return_counts=True)
        a_ids = (uniq // stride).astype(np.int64)
        for a in np.unique(a_ids):
            frac = counts[a_ids == a] / float(areas[int(a)])
            if (frac >= secondary_floor).sum() >= 2:
                merges += 1
    return splits, merges


def roc(scores, labels) -> RocCurve:
    """Threshold-sweep ROC with trapezoid AUC."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise GeometryMismatch("scores and labels differ in length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(labels[order] == 1)
    fp = np.cumsum(labels[order] == 0)
    # collapse runs of equal scores so the curve has one point per threshold
    last = np.r_[s[1:] != s[:-1], True]
    thresholds = s[last]
    tpr = tp[last] / n_pos
    fpr = fp[last] / n_neg
    tpr = np.r_[0.0, tpr]
    fpr = np.r_[0.0, fpr]
    thresholds = np.r_[np.inf, thresholds]
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(thresholds=thresholds, tpr=tpr, fpr=fpr, auc=auc)


def prf1(scores, labels, threshold: float) -> tuple[float, float, float]:
    """Precision, recall, F1 with positives predicted at score > threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pred = scores > threshold
    tp = int((pred & (labels == 1)).sum())
    fp = int((pred & (labels == 0)).sum())
    fn = int((~pred & (labels == 1)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1
