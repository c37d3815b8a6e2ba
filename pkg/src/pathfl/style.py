"""Image-level collaborative style enhancement.

Clients publish per-channel intensity statistics of their training batches.
The server gathers them into a :class:`StylePool`; in the next round each
client re-styles its batches toward a foreign client's statistics (AdaIN)
and trains on a half/half mix of original and re-styled pixels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from pathfl.errors import NoForeignStyle, ShapeError, ValidationError

STYLE_EPS = 1e-5

# rotation quarter-turns x flip, 12 elements; duplicates are intentional
TRANSFORMS = tuple((k, flip) for k in range(4) for flip in ("none", "h", "v"))


@dataclass(frozen=True)
class StyleStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if mean.shape != std.shape or mean.ndim != 1:
            raise ShapeError(f"mean {mean.shape} and std {std.shape} must be equal-length vectors")
        if np.any(std < 0):
            raise ValidationError("std must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def channels(self):
        return self.mean.shape[0]

    def to_json(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["mean"], dtype=np.float64), np.array(obj["std"], dtype=np.float64))


@dataclass
class StylePool:
    round: int
    entries: dict[str, StyleStats] = field(default_factory=dict)

    def add(self, client_id, stats):
        client_id = str(client_id)
        if client_id in self.entries:
            raise ValidationError(f"client {client_id!r} already published a style this round")
        if self.entries:
            c = next(iter(self.entries.values())).channels
            if stats.channels != c:
                raise ShapeError(f"style has {stats.channels} channels, pool holds {c}")
        self.entries[client_id] = stats

    def dumps(self):
        return json.dumps({"v": 1, "round": self.round,
                           "styles": {k: s.to_json() for k, s in sorted(self.entries.items())}})

    @classmethod
    def loads(cls, text):
        obj = json.loads(text)
        if obj.get("v") != 1:
            raise ValidationError(f"unsupported style pool version {obj.get('v')!r}")
        pool = cls(int(obj["round"]))
        for cid, st in obj["styles"].items():
            pool.add(cid, StyleStats.from_json(st))
        return pool


def compute_image_stats(batch, per_channel=True):
    """Mean and population std over every pixel of the batch.

    With ``per_channel=False`` the statistics pool all channels into one
    value (returned as length-1 vectors, broadcast by :func:`adain_transfer`).
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4:
        raise ShapeError(f"batch must be (n, c, h, w), got {batch.shape}")
    if batch.size == 0:
        raise ValidationError("cannot compute statistics of an empty batch")
    axes = (0, 2, 3) if per_channel else None
    mean = np.atleast_1d(batch.mean(axis=axes))
    std = np.atleast_1d(batch.std(axis=axes))
    return StyleStats(mean, std)


def mean_stats(stats_list):
    """Elementwise arithmetic mean of several StyleStats."""
    if not stats_list:
        raise ValidationError("no statistics to average")
    return StyleStats(np.mean([s.mean for s in stats_list], axis=0),
                      np.mean([s.std for s in stats_list], axis=0))


def sample_style(pool, self_id, rng):
    """Pick one foreign client's style uniformly at random."""
    foreign = sorted(k for k in pool.entries if k != str(self_id))
    if not foreign:
        raise NoForeignStyle(f"pool for round {pool.round} has no style from a client other than {self_id!r}")
    return pool.entries[foreign[int(rng.integers(len(foreign)))]]


def adain_transfer(batch, source, target, eps=STYLE_EPS, clamp=True):
    """Re-normalise ``batch`` from ``source`` statistics to ``target`` statistics."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    batch = np.asarray(batch, dtype=np.float64)
    c = batch.shape[1]
    for st in (source, target):
        if st.channels not in (1, c):
            raise ShapeError(f"style has {st.channels} channels, batch has {c}")
    sm, ss = source.mean[None, :, None, None], source.std[None, :, None, None]
    tm, ts = target.mean[None, :, None, None], target.std[None, :, None, None]
    out = (batch - sm) / (ss + eps) * ts + tm
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def half_plane(h, w):
    """Mask with the first floor(h*w/2) pixels in column-major order set to one."""
    flat = np.zeros(h * w, dtype=np.uint8)
    flat[: (h * w) // 2] = 1
    return flat.reshape(w, h).T.copy()


def apply_transform(mask, transform):
    k, flip = transform
    out = np.rot90(mask, k)
    if flip == "h":
        out = out[:, ::-1]
    elif flip == "v":
        out = out[::-1, :]
    return np.ascontiguousarray(out)


def make_random_mask(h, w, rng):
    """Random half-plane binary mask of shape (h, w).

    A base half-plane is built in the pre-rotation frame so that after the
    randomly chosen rotation/flip the result is exactly (h, w).
    """
    if h < 1 or w < 1:
        raise ValidationError(f"mask dims must be >= 1, got {h}x{w}")
    transform = TRANSFORMS[int(rng.integers(len(TRANSFORMS)))]
    base = half_plane(h, w) if transform[0] % 2 == 0 else half_plane(w, h)
    return apply_transform(base, transform)


def hybridize(original, styled, mask):
    """``mask * original + (1 - mask) * styled``, broadcast over batch and channels."""
    original = np.asarray(original, dtype=np.float64)
    styled = np.asarray(styled, dtype=np.float64)
    mask = np.asarray(mask)
    if original.shape != styled.shape:
        raise ShapeError(f"original {original.shape} and styled {styled.shape} differ")
    if original.ndim != 4 or mask.shape != original.shape[2:]:
        raise ShapeError(f"mask {mask.shape} does not match spatial dims {original.shape[2:]}")
    m = mask.astype(np.float64)[None, None]
    return m * original + (1.0 - m) * styled
