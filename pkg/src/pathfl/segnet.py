"""Small U-Net style segmentation network built on :mod:`pathfl.autodiff`.

Architecture for ``depth=d``, ``base_channels=b`` (channels ``b_i = b * 2**(i-1)``):

=============  =====================================================================
group          layers
=============  =====================================================================
``enc{i}``     conv3x3(prev -> b_i), relu, conv3x3(b_i -> b_i), relu; maxpool2 follows
``bottleneck`` conv3x3(b_d -> 2 b_d), relu, conv3x3(2 b_d -> 2 b_d), relu  [alignment point]
``dec{i}``     conv1x1(2 b_i -> b_i) ("reduce"), upsample2, concat with ``enc{i}``,
               conv3x3(2 b_i -> b_i), relu, conv3x3(b_i -> b_i), relu
``head``       conv1x1(b -> classes)
=============  =====================================================================

Decoder groups run from ``dec{d}`` down to ``dec1``.  Every parameter name
starts with its group, e.g. ``enc1.conv1.weight``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from pathfl.align import FEATURE_EPS, alignment_coefficients, compute_feature_stats
from pathfl.autodiff import Graph
from pathfl.errors import ShapeError, ValidationError
from pathfl.optim import AdamState, adam_step
from pathfl.style import (
    STYLE_EPS,
    StyleStats,
    adain_transfer,
    compute_image_stats,
    hybridize,
    make_random_mask,
    mean_stats,
    sample_style,
)


@dataclass(frozen=True)
class SegNetConfig:
    in_channels: int = 3
    base_channels: int = 8
    depth: int = 2
    classes: int = 2

    def __post_init__(self):
        for name in ("in_channels", "base_channels", "depth", "classes"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")

    @property
    def layer_names(self):
        d = self.depth
        return ([f"enc{i}" for i in range(1, d + 1)] + ["bottleneck"]
                + [f"dec{i}" for i in range(d, 0, -1)] + ["head"])

    def check_input(self, shape):
        if len(shape) != 4 or shape[1] != self.in_channels:
            raise ShapeError(f"input must be (n, {self.in_channels}, h, w), got {tuple(shape)}")
        step = 2 ** self.depth
        if shape[2] % step or shape[3] % step or shape[2] == 0 or shape[3] == 0:
            raise ShapeError(f"input h, w must be positive multiples of {step}, got {shape[2]}x{shape[3]}")

    def param_shapes(self):
        """Ordered ``{name: shape}`` for every parameter."""
        b, d = self.base_channels, self.depth
        shapes = {}

        def conv(name, cin, cout, k=3):
            shapes[f"{name}.weight"] = (cout, cin, k, k)
            shapes[f"{name}.bias"] = (cout,)

        prev = self.in_channels
        for i in range(1, d + 1):
            ch = b * 2 ** (i - 1)
            conv(f"enc{i}.conv1", prev, ch)
            conv(f"enc{i}.conv2", ch, ch)
            prev = ch
        conv("bottleneck.conv1", prev, 2 * prev)
        conv("bottleneck.conv2", 2 * prev, 2 * prev)
        for i in range(d, 0, -1):
            ch = b * 2 ** (i - 1)
            conv(f"dec{i}.reduce", 2 * ch, ch, k=1)
            conv(f"dec{i}.conv1", 2 * ch, ch)
            conv(f"dec{i}.conv2", ch, ch)
        conv("head.conv", b, self.classes, k=1)
        return shapes

    def param_count(self):
        return sum(math.prod(s) for s in self.param_shapes().values())


def layer_of(param_name):
    return param_name.split(".", 1)[0]


class SegNet:
    """Stateless network definition; parameters live in plain dicts."""

    def __init__(self, config=None):
        self.config = config or SegNetConfig()

    def init_params(self, rng):
        """He-normal weights (std sqrt(2 / fan_in)), zero biases."""
        params = {}
        for name, shape in self.config.param_shapes().items():
            if name.endswith(".bias"):
                params[name] = np.zeros(shape)
            else:
                fan_in = shape[1] * shape[2] * shape[3]
                params[name] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        return params

    def check_params(self, params):
        shapes = self.config.param_shapes()
        if list(params) != list(shapes):
            raise ShapeError("parameter names/order do not match the architecture")
        for name, shape in shapes.items():
            if np.shape(params[name]) != shape:
                raise ShapeError(f"{name} has shape {np.shape(params[name])}, expected {shape}")

    # -- forward ----------------------------------------------------------
    def build(self, g, p, x, afa=None, afa_eps=FEATURE_EPS, stop_at=None):
        """Record a forward pass on graph ``g``.

        ``p`` maps parameter names to graph nodes; ``x`` is the input node.
        Returns ``(output node, bottleneck node before alignment, group outputs)``;
        with ``stop_at`` set, the pass ends after that layer group.
        """
        outputs = {}

        def block(name, h):
            h = g.relu(g.conv3x3(h, p[f"{name}.conv1.weight"], p[f"{name}.conv1.bias"]))
            return g.relu(g.conv3x3(h, p[f"{name}.conv2.weight"], p[f"{name}.conv2.bias"]))

        def done(name, h):
            outputs[name] = h
            return name == stop_at

        d = self.config.depth
        skips = []
        h = x
        for i in range(1, d + 1):
            if i > 1:
                h = g.maxpool2(h)
            h = block(f"enc{i}", h)
            skips.append(h)
            if done(f"enc{i}", h):
                return h, None, outputs
        h = block("bottleneck", g.maxpool2(h))
        bottleneck = h
        if afa is not None:
            scale, center, shift = alignment_coefficients(h.value, afa, afa_eps)
            h = g.affine(h, scale, shift, center)
        if done("bottleneck", h):
            return h, bottleneck, outputs
        for i in range(d, 0, -1):
            name = f"dec{i}"
            h = g.conv1x1(h, p[f"{name}.reduce.weight"], p[f"{name}.reduce.bias"])
            h = g.concat(g.upsample2(h), skips[i - 1])
            h = block(name, h)
            if done(name, h):
                return h, bottleneck, outputs
        h = g.conv1x1(h, p["head.conv.weight"], p["head.conv.bias"])
        done("head", h)
        return h, bottleneck, outputs

    def forward(self, params, batch, afa=None, afa_eps=FEATURE_EPS):
        """Return ``(logits, bottleneck features)`` as arrays; no gradients are kept."""
        batch = np.asarray(batch, dtype=np.float64)
        self.config.check_input(batch.shape)
        g = Graph()
        p = {k: g.constant(v) for k, v in params.items()}
        logits, z, _ = self.build(g, p, g.constant(batch), afa, afa_eps)
        return logits.value, z.value

    def layer_features(self, params, probe, layer):
        """Flattened output of layer group ``layer`` (1-based index or name)."""
        names = self.config.layer_names
        if isinstance(layer, (int, np.integer)):
            if not 1 <= layer <= len(names):
                raise ValidationError(f"layer index {layer} outside [1, {len(names)}]")
            layer = names[layer - 1]
        elif layer not in names:
            raise ValidationError(f"unknown layer group {layer!r}")
        return self.all_layer_features(params, probe, stop_at=layer)[layer]

    def all_layer_features(self, params, probe, stop_at=None):
        """``{group: flattened activation}`` for every group (one forward pass)."""
        probe = np.asarray(probe, dtype=np.float64)
        self.config.check_input(probe.shape)
        g = Graph()
        p = {k: g.constant(v) for k, v in params.items()}
        _, _, outputs = self.build(g, p, g.constant(probe), stop_at=stop_at)
        return {name: node.value.ravel() for name, node in outputs.items()}

    def predict(self, params, batch):
        """Per-pixel argmax as a (n, 1, h, w) 0/1 array; exact ties go to class 0."""
        logits, _ = self.forward(params, batch)
        return (logits[:, 1:2] > logits[:, 0:1]).astype(np.float64)

    def loss_and_grads(self, params, images, labels, afa=None, prox=None, afa_eps=FEATURE_EPS):
        """Cross-entropy (+ optional proximal term) and its parameter gradients.

        ``prox`` is ``(mu, global_params)``.  Returns ``(loss, grads, bottleneck)``.
        """
        g = Graph()
        p = {k: g.param(k, v) for k, v in params.items()}
        logits, z, _ = self.build(g, p, g.constant(images), afa, afa_eps)
        loss = g.cross_entropy(logits, labels)
        if prox is not None and prox[0] > 0:
            mu, anchor = prox
            for name, node in p.items():
                loss = g.add(loss, g.sqdist(node, anchor[name], coef=mu / 2.0))
        grads = g.backward(loss)
        return float(loss.value), grads, z.value


@dataclass
class TrainHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    batch_size: int = 4
    style_eps: float = STYLE_EPS
    feature_eps: float = FEATURE_EPS
    prox_mu: float = 0.0
    cse: bool = False
    style_per_channel: bool = True


@dataclass
class ClientState:
    id: str
    params: dict
    images: np.ndarray
    masks: np.ndarray
    optimizer: AdamState = field(default_factory=AdamState)
    dataset_stats: StyleStats | None = None
    last_style: StyleStats | None = None
    test_images: np.ndarray | None = None
    test_masks: np.ndarray | None = None

    @property
    def sample_count(self):
        return len(self.images)


@dataclass
class LocalResult:
    style: StyleStats | None
    feature_stats: tuple[float, float] | None
    epoch_losses: list[float]
    batches: int


def train_local(model, state, pool, afa, epochs, hyper, rng, global_params=None):
    """Run ``epochs`` local epochs on ``state`` in place.

    Each batch is optionally re-styled toward a foreign style from ``pool``
    (when ``hyper.cse`` and the pool has one) and mixed with the original
    through a random half mask, then trained with the bottleneck aligned to
    ``afa`` (if given).  Returns the round's averaged per-batch image style,
    the averaged bottleneck (mean, std) and per-epoch mean losses.
    """
    if epochs < 0:
        raise ValidationError("epochs must be >= 0")
    n = state.sample_count
    if n == 0:
        raise ValidationError(f"client {state.id!r} has an empty training set")
    prox = (hyper.prox_mu, global_params) if hyper.prox_mu > 0 else None
    if prox is not None and global_params is None:
        raise ValidationError("proximal term needs the global parameters")
    use_cse = hyper.cse and pool is not None and any(k != state.id for k in pool.entries)
    h, w = state.images.shape[2:]
    styles, feats, losses = [], [], []
    for _ in range(epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            x = state.images[idx]
            y = state.masks[idx]
            own = compute_image_stats(x, hyper.style_per_channel)
            styles.append(own)
            if use_cse:
                target = sample_style(pool, state.id, rng)
                styled = adain_transfer(x, own, target, hyper.style_eps)
                x = hybridize(x, styled, make_random_mask(h, w, rng))
            loss, grads, z = model.loss_and_grads(state.params, x, y, afa, prox, hyper.feature_eps)
            feats.append(compute_feature_stats(z))
            adam_step(state.params, grads, state.optimizer, hyper.lr, hyper.beta1, hyper.beta2,
                      hyper.adam_eps)
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
    style = mean_stats(styles) if styles else None
    if style is not None:
        state.last_style = style
    feature = (float(np.mean([m for m, _ in feats])), float(np.mean([s for _, s in feats]))) \
        if feats else None
    return LocalResult(style, feature, losses, len(styles))
