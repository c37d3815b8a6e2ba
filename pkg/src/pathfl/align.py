"""Feature-level alignment of bottleneck activations toward global statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from pathfl.errors import ValidationError

FEATURE_EPS = 1e-5


@dataclass(frozen=True)
class FeatureStats:
    mean: float
    std: float
    round: int = 0

    def __post_init__(self):
        if self.std < 0:
            raise ValidationError("feature std must be non-negative")

    def dumps(self):
        return json.dumps({"v": 1, "round": self.round, "mean": self.mean, "std": self.std})

    @classmethod
    def loads(cls, text):
        obj = json.loads(text)
        return cls(float(obj["mean"]), float(obj["std"]), int(obj["round"]))


def compute_feature_stats(z):
    """Scalar mean and population std over all elements of ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise ValidationError("cannot compute statistics of an empty feature map")
    return float(z.mean()), float(z.std())


def aggregate_feature_stats(per_client, round=0):
    """Global statistics: the mean of client means and the mean of client stds."""
    if not per_client:
        raise ValidationError("need statistics from at least one client")
    means = [m for m, _ in per_client]
    stds = [s for _, s in per_client]
    return FeatureStats(float(np.mean(means)), float(np.mean(stds)), round)


def alignment_coefficients(z, target, eps=FEATURE_EPS):
    """``(scale, center, shift)`` with aligned map ``scale * (z - center) + shift``.

    The batch's own statistics are treated as constants, so the map is affine
    in ``z`` and its gradient is just ``scale``.
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    mu, sigma = compute_feature_stats(z)
    return target.std / (sigma + eps), mu, target.mean


def align_features(z, target, eps=FEATURE_EPS):
    z = np.asarray(z, dtype=np.float64)
    scale, center, shift = alignment_coefficients(z, target, eps)
    return scale * (z - center) + shift
