"""Dice overlap and average symmetric surface distance for binary masks."""

import math

import numpy as np
from scipy.ndimage import distance_transform_edt

from pathfl.errors import ShapeError, ValidationError


def _binary(mask, what):
    mask = np.asarray(mask)
    if not np.all((mask == 0) | (mask == 1)):
        raise ValidationError(f"{what} must be binary (0/1)")
    return mask.astype(bool)


def _pair(pred, label):
    pred, label = _binary(pred, "pred"), _binary(label, "label")
    if pred.shape != label.shape:
        raise ShapeError(f"pred {pred.shape} and label {label.shape} differ")
    return pred, label


def dice(pred, label):
    """2|A n B| / (|A| + |B|); 1.0 when both masks are empty."""
    a, b = _pair(pred, label)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def boundary(mask):
    """Pixels of ``mask`` with at least one 4-neighbour outside it (image border is outside)."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ShapeError(f"boundary needs a 2-D mask, got {m.shape}")
    p = np.pad(m, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~interior


def _squeeze2d(a):
    a = np.asarray(a)
    while a.ndim > 2 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ShapeError(f"expected a single 2-D mask, got shape {a.shape}")
    return a


def assd(pred, label):
    """Average symmetric surface distance in pixels.

    Both empty -> 0; exactly one empty -> the image diagonal.
    """
    a, b = _pair(pred, label)
    a, b = _squeeze2d(a), _squeeze2d(b)
    h, w = a.shape
    ea, eb = not a.any(), not b.any()
    if ea and eb:
        return 0.0
    if ea or eb:
        return math.hypot(h, w)
    ba, bb = boundary(a), boundary(b)
    # distance from every pixel to the nearest boundary pixel of the other mask
    to_b = distance_transform_edt(~bb)
    to_a = distance_transform_edt(~ba)
    # exactly rounded sum: independent of pixel visiting order
    total = math.fsum(np.concatenate([to_b[ba], to_a[bb]]))
    return total / (int(ba.sum()) + int(bb.sum()))


def per_image_metrics(preds, labels):
    """``(dice list, assd list)`` over a batch of (n, 1, h, w) masks."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ShapeError(f"pred {preds.shape} and label {labels.shape} differ")
    return ([dice(p, l) for p, l in zip(preds, labels)],
            [assd(p, l) for p, l in zip(preds, labels)])
