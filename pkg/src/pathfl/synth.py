"""Synthetic heterogeneous "pathology-like" client datasets and PPM/PGM I/O."""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from pathfl.errors import FormatError, ValidationError


@dataclass(frozen=True)
class ClientProfile:
    """Appearance of one client's images.

    Background pixels are drawn i.i.d. from N(style_mean, style_std) per
    channel; blob pixels are additionally shifted by ``fg_offset``.
    """

    style_mean: tuple[float, ...]
    style_std: tuple[float, ...]
    blob_count: tuple[int, int] = (2, 5)
    blob_radius: tuple[float, float] = (3.0, 7.0)
    fg_offset: tuple[float, ...] = (-0.3, -0.3, -0.3)
    noise_std: float = 0.0
    name: str = ""

    def __post_init__(self):
        for key in ("style_mean", "style_std", "fg_offset"):
            object.__setattr__(self, key, tuple(float(v) for v in getattr(self, key)))
        object.__setattr__(self, "blob_count", tuple(int(v) for v in self.blob_count))
        object.__setattr__(self, "blob_radius", tuple(float(v) for v in self.blob_radius))
        if not (len(self.style_mean) == len(self.style_std) == len(self.fg_offset)):
            raise ValidationError("style_mean, style_std and fg_offset need one value per channel")
        if any(s < 0 for s in self.style_std) or self.noise_std < 0:
            raise ValidationError("standard deviations must be >= 0")
        lo, hi = self.blob_count
        if lo < 0 or lo > hi:
            raise ValidationError(f"blob_count must satisfy 0 <= min <= max, got {self.blob_count}")
        rlo, rhi = self.blob_radius
        if rlo < 1 or rlo > rhi:
            raise ValidationError(f"blob_radius must satisfy 1 <= min <= max, got {self.blob_radius}")

    @property
    def channels(self):
        return len(self.style_mean)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class SamplePair:
    image: np.ndarray  # (c, h, w) in [0, 1]
    mask: np.ndarray  # (1, h, w) in {0, 1}


def ellipse_mask(h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def generate_client_dataset(profile, n, h, w, rng):
    if n < 1:
        raise ValidationError("need at least one sample")
    if h < 16 or w < 16:
        raise ValidationError(f"images must be at least 16x16, got {h}x{w}")
    mean = np.array(profile.style_mean)[:, None, None]
    std = np.array(profile.style_std)[:, None, None]
    offset = np.array(profile.fg_offset)[:, None, None]
    c = profile.channels
    rmax = profile.blob_radius[1]
    samples = []
    for _ in range(n):
        image = mean + std * rng.standard_normal((c, h, w))
        mask = np.zeros((h, w), dtype=bool)
        k = int(rng.integers(profile.blob_count[0], profile.blob_count[1] + 1))
        for _ in range(k):
            ry, rx = rng.uniform(*profile.blob_radius, size=2)
            # centres keep the largest possible blob inside the image when it fits
            cy = rng.uniform(min(rmax, h / 2), max(h - rmax, h / 2))
            cx = rng.uniform(min(rmax, w / 2), max(w - rmax, w / 2))
            mask |= ellipse_mask(h, w, cy, cx, ry, rx)
        image = image + offset * mask[None]
        if profile.noise_std > 0:
            image = image + profile.noise_std * rng.standard_normal((c, h, w))
        samples.append(SamplePair(np.clip(image, 0.0, 1.0), mask[None].astype(np.float64)))
    return samples


def stack_pairs(samples):
    """List of SamplePair -> ``(images (n,c,h,w), masks (n,1,h,w))``."""
    return (np.stack([s.image for s in samples]), np.stack([s.mask for s in samples]))


def split_dataset(samples, ratio, rng):
    """Random split with ``ceil(ratio * n)`` training samples."""
    if not 0 < ratio < 1:
        raise ValidationError(f"ratio must lie in (0, 1), got {ratio}")
    n = len(samples)
    if n < 2:
        raise ValidationError("need at least two samples to split")
    n_train = math.ceil(ratio * n - 1e-9)
    order = rng.permutation(n)
    return [samples[i] for i in order[:n_train]], [samples[i] for i in order[n_train:]]


# -- netpbm ---------------------------------------------------------------

def _quantize(values):
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_image(path, image):
    """Write a (3, h, w) image in [0, 1] as binary PPM (P6)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValidationError(f"images must be (3, h, w), got {image.shape}")
    _, h, w = image.shape
    data = _quantize(image).transpose(1, 2, 0)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def write_mask(path, mask):
    """Write a (1, h, w) or (h, w) 0/1 mask as binary PGM (P5) with bytes 0/255."""
    mask = np.asarray(mask)
    if mask.ndim == 3:
        if mask.shape[0] != 1:
            raise ValidationError(f"masks must be single-channel, got {mask.shape}")
        mask = mask[0]
    if not np.all((mask == 0) | (mask == 1)):
        raise ValidationError("mask values must be 0 or 1")
    h, w = mask.shape
    data = np.where(mask > 0, 255, 0).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_netpbm(path, magic):
    raw = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: truncated header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} file, found {fields[0][:2]!r}")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header") from exc
    if maxval != 255 or w <= 0 or h <= 0:
        raise FormatError(f"{path}: only 8-bit images with positive size are supported")
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after header")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    payload = raw[pos:pos + need]
    if len(payload) != need:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {need}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, channels)


def read_image(path):
    """Read a PPM written by :func:`write_image` as a (3, h, w) float array."""
    return _read_netpbm(path, b"P6").transpose(2, 0, 1).astype(np.float64) / 255.0


def read_mask(path):
    return (_read_netpbm(path, b"P5").transpose(2, 0, 1) > 127).astype(np.float64)


# -- on-disk layout ------------------------------------------------------

def save_client(root, client_id, profile, train, test):
    """Write ``root/<client_id>/{train,test}/img_####.ppm, msk_####.pgm`` and ``profile.json``."""
    base = Path(root) / str(client_id)
    for split, samples in (("train", train), ("test", test)):
        d = base / split
        d.mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(samples):
            write_image(d / f"img_{i:04d}.ppm", s.image)
            write_mask(d / f"msk_{i:04d}.pgm", s.mask)
    (base / "profile.json").write_text(json.dumps(profile.to_json(), indent=1))


def load_split(directory):
    directory = Path(directory)
    images = sorted(directory.glob("img_*.ppm"))
    if not images:
        return []
    out = []
    for img_path in images:
        msk_path = directory / img_path.name.replace("img_", "msk_").replace(".ppm", ".pgm")
        out.append(SamplePair(read_image(img_path), read_mask(msk_path)))
    return out


def load_clients(root):
    """``{client_id: (train samples, test samples)}`` for every client directory under ``root``."""
    root = Path(root)
    clients = {}
    for d in sorted(p for p in root.iterdir() if (p / "profile.json").exists()):
        clients[d.name] = (load_split(d / "train"), load_split(d / "test"))
    if not clients:
        raise FormatError(f"{root}: no client directories with profile.json")
    return clients
