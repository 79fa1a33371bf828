"""Mask metrics.

The IoU here is the scoring rule for the whole project, so it is kept
deliberately dumb: binarize, count, divide.  Two empty masks agree
perfectly and score 1.0 rather than 0/0.
"""

import numpy as np


class GridMismatchError(ValueError):
    """Raised when two masks do not live on the same grid."""


def binarize(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Boolean occupancy from a probability or binary mask (cells > threshold)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return np.asarray(mask) > threshold


def iou(pred, gt, threshold: float = 0.5) -> float:
    """Intersection over union of two occupancy masks.

    Either argument may be binary or probabilities; both are binarized at
    the same threshold.  Masks of different shapes are an error, not a 0.
    """
    p = np.asarray(pred)
    g = np.asarray(gt)
    if p.shape != g.shape:
        raise GridMismatchError(
            f"mask shapes differ: {p.shape} vs {g.shape}"
        )
    pb = binarize(p, threshold)
    gb = binarize(g, threshold)
    union = np.logical_or(pb, gb).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(pb, gb).sum()
    return float(inter) / float(union)


def mean_iou(pairs, threshold: float = 0.5) -> float:
    """Mean IoU over an iterable of (pred, gt) pairs."""
    vals = [iou(p, g, threshold) for p, g in pairs]
    if not vals:
        raise ValueError("mean_iou needs at least one pair")
    return float(np.mean(vals))


def mask_centroid(mask, threshold: float = 0.5):
    """Centroid of occupied cells as (col, row) floats; None when empty."""
    b = binarize(mask, threshold)
    rows, cols = np.nonzero(b)
    if rows.size == 0:
        return None
    return float(cols.mean()), float(rows.mean())
