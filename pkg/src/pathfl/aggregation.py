"""Server-side aggregation: layer-stratified similarity weighting, FedAvg, FedProx.

Similarity aggregation measures, for every layer group, how alike two
clients' activations are on synthetic Gaussian probes drawn from each
client's own dataset statistics, and mixes that layer's weights accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pathfl.errors import ShapeError, ValidationError
from pathfl.segnet import layer_of
from pathfl.style import StyleStats, compute_image_stats

DatasetStats = StyleStats

COS_EPS = 1e-12
UNIFORM_FLOOR = 1e-12


class LayeredWeights:
    """Model parameters grouped into ordered named layers.

    Wraps an ordered ``{param name: array}`` dict; a parameter's layer is the
    part of its name before the first dot.
    """

    def __init__(self, params):
        self.params = dict(params)
        if not self.params:
            raise ValidationError("a model needs at least one layer")
        self.layers: dict[str, list[str]] = {}
        for name in self.params:
            self.layers.setdefault(layer_of(name), []).append(name)

    @property
    def layer_names(self):
        return list(self.layers)

    def __len__(self):
        return len(self.layers)

    def layer(self, name):
        return {k: self.params[k] for k in self.layers[name]}

    def signature(self):
        return [(k, np.shape(v)) for k, v in self.params.items()]

    def copy(self):
        return LayeredWeights({k: np.array(v, dtype=np.float64) for k, v in self.params.items()})


def _check_structure(clients):
    if not clients:
        raise ValidationError("no client models to aggregate")
    clients = [c if isinstance(c, LayeredWeights) else LayeredWeights(c) for c in clients]
    sig = clients[0].signature()
    for i, c in enumerate(clients[1:], 1):
        if c.signature() != sig:
            raise ShapeError(f"client {i} model structure differs from client 0")
    return clients


def _mix(arrays, coefs):
    """Convex mix written as ``a_0 + sum_k c_k (a_k - a_0)``: identical inputs stay exact."""
    base = arrays[0]
    out = np.array(base, dtype=np.float64, copy=True)
    for a, c in zip(arrays[1:], coefs[1:]):
        out += c * (a - base)
    return out


def compute_dataset_stats(images):
    """Per-channel mean/std over every pixel of a client's training images."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValidationError("dataset must be a non-empty (n, c, h, w) array")
    return compute_image_stats(images)


def gen_probe(stats, shape, rng):
    """I.i.d. per-channel normal samples N(mean, std) clipped to [0, 1]."""
    n, c, h, w = shape
    if stats.channels not in (1, c):
        raise ShapeError(f"stats have {stats.channels} channels, probe needs {c}")
    noise = rng.standard_normal((n, c, h, w))
    probe = stats.mean[None, :, None, None] + stats.std[None, :, None, None] * noise
    return np.clip(probe, 0.0, 1.0)


def cosine_similarity(a, b, eps=COS_EPS):
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare vectors of length {a.size} and {b.size}")
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b) + eps))


def raw_similarities(features):
    """``features[m][l]`` is client m's flattened layer-l output; returns (L, M, M) cosines."""
    m_count = len(features)
    l_count = len(features[0])
    raw = np.zeros((l_count, m_count, m_count))
    for l in range(l_count):
        for m in range(m_count):
            raw[l, m, m] = cosine_similarity(features[m][l], features[m][l])
            for j in range(m + 1, m_count):
                raw[l, m, j] = raw[l, j, m] = cosine_similarity(features[m][l], features[j][l])
    return raw


@dataclass
class SimilarityTensor:
    raw: np.ndarray
    normalized: np.ndarray

    @property
    def shape(self):
        return self.normalized.shape


def normalize_similarities(raw, mode="layer"):
    """Scale clamped cosines so each layer's off-diagonal scores sum to M.

    ``mode="global"`` divides by one constant shared by all layers instead
    (scores then sum to M only on average over layers).
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[1] != raw.shape[2]:
        raise ShapeError(f"similarities must be (L, M, M), got {raw.shape}")
    l_count, m_count, _ = raw.shape
    if m_count < 2:
        raise ValidationError("similarity aggregation needs at least two clients")
    off = ~np.eye(m_count, dtype=bool)
    clamped = np.where(off[None], np.maximum(raw, 0.0), 0.0)
    uniform = np.where(off, 1.0 / (m_count - 1), 0.0)
    norm = np.empty_like(clamped)
    if mode == "layer":
        for l in range(l_count):
            total = clamped[l].sum()
            norm[l] = uniform if total <= UNIFORM_FLOOR else m_count * clamped[l] / total
    elif mode == "global":
        total = clamped.sum()
        if total <= UNIFORM_FLOOR:
            norm[:] = uniform
        else:
            norm[:] = l_count * m_count * clamped / total
    else:
        raise ValidationError(f"unknown normalization mode {mode!r}")
    return SimilarityTensor(raw, norm)


def ssa_coefficients(s):
    """(L, M) per-layer mixing coefficient of each client.

    Client k's layer-l weight enters once as itself and once through every
    other client's similarity to it, all over 2M.
    """
    s = np.asarray(s, dtype=np.float64)
    m_count = s.shape[1]
    off = ~np.eye(m_count, dtype=bool)
    received = np.where(off[None], s, 0.0).sum(axis=1)  # sum over m != k of s[l, m, k]
    return (1.0 + received) / (2.0 * m_count)


def aggregate_ssa(clients, similarity):
    """Layer-wise similarity-weighted aggregation of client models."""
    clients = _check_structure(clients)
    s = similarity.normalized if isinstance(similarity, SimilarityTensor) else np.asarray(similarity)
    layer_names = clients[0].layer_names
    if s.shape != (len(layer_names), len(clients), len(clients)):
        raise ShapeError(f"similarity shape {s.shape} does not match "
                         f"(L={len(layer_names)}, M={len(clients)})")
    coefs = ssa_coefficients(s)
    out = {}
    for l, layer in enumerate(layer_names):
        for name in clients[0].layers[layer]:
            out[name] = _mix([c.params[name] for c in clients], coefs[l])
    return LayeredWeights(out)


def aggregate_fedavg(clients, sample_counts):
    """Sample-count-weighted mean of every parameter tensor."""
    clients = _check_structure(clients)
    counts = np.asarray(sample_counts, dtype=np.float64)
    if counts.shape != (len(clients),) or np.any(counts <= 0):
        raise ValidationError("need one positive sample count per client")
    coefs = counts / counts.sum()
    return LayeredWeights({name: _mix([c.params[name] for c in clients], coefs)
                           for name in clients[0].params})


def fedprox_penalty(w_local, w_global, mu):
    """``mu/2 * sum ||w_local - w_global||^2`` over all parameters."""
    if mu < 0:
        raise ValidationError("proximal coefficient must be >= 0")
    local = w_local.params if isinstance(w_local, LayeredWeights) else w_local
    glob = w_global.params if isinstance(w_global, LayeredWeights) else w_global
    if list(local) != list(glob):
        raise ShapeError("local and global models have different parameters")
    total = 0.0
    for name, a in local.items():
        if np.shape(a) != np.shape(glob[name]):
            raise ShapeError(f"{name}: {np.shape(a)} vs {np.shape(glob[name])}")
        d = np.asarray(a) - np.asarray(glob[name])
        total += float(np.sum(d * d))
    return 0.5 * mu * total
