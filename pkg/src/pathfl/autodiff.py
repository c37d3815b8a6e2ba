"""Reverse-mode differentiation over a fixed vocabulary of dense layers.

Tensors are plain ``float64`` numpy arrays laid out ``(n, c, h, w)``.  A
:class:`Graph` records every operation applied to its nodes in execution
order, which is already a topological order, so :meth:`Graph.backward` just
walks the tape in reverse.

    g = Graph()
    w = g.param("conv.weight", weight)
    b = g.param("conv.bias", bias)
    y = g.relu(g.conv3x3(g.constant(images), w, b))
    loss = g.cross_entropy(g.conv1x1(y, w2, b2), labels)
    grads = g.backward(loss)      # {"conv.weight": ..., ...}
"""

from __future__ import annotations

import numpy as np

from pathfl import kernels
from pathfl.errors import GraphStateError, NumericError, ShapeError, ValidationError

LAYER_KINDS = ("conv3x3", "relu", "maxpool2", "upsample2_nearest", "concat_channels", "conv1x1")


def as_tensor4(x, what="tensor"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"{what} must be rank 4 (n, c, h, w), got shape {arr.shape}")
    return arr


class Node:
    __slots__ = ("value", "parents", "backward_fn", "requires_grad", "name", "index")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name
        self.index = -1

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} shape={self.shape}>"


class Graph:
    """A tape of primitive operations plus the named parameters it reads."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self.grads: dict[str, np.ndarray] | None = None

    # -- leaves -----------------------------------------------------------
    def param(self, name, value):
        if name in self.params:
            raise ValidationError(f"parameter {name!r} registered twice")
        node = self._push(Node(np.asarray(value, dtype=np.float64), requires_grad=True, name=name))
        self.params[name] = node
        return node

    def constant(self, value):
        return self._push(Node(np.asarray(value, dtype=np.float64)))

    def _push(self, node):
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def _op(self, value, parents, backward_fn):
        needs = any(p.requires_grad for p in parents)
        return self._push(Node(value, tuple(parents), backward_fn if needs else None, needs))

    def _own(self, node):
        if not isinstance(node, Node) or node.index < 0 or node.index >= len(self.nodes) \
                or self.nodes[node.index] is not node:
            raise GraphStateError("node does not belong to this graph")
        return node

    # -- layers -----------------------------------------------------------
    def conv3x3(self, x, weight, bias):
        x, weight, bias = self._own(x), self._own(weight), self._own(bias)
        n, c, h, w = _dims(x)
        if weight.value.shape[1:] != (c, 3, 3) or bias.value.shape != weight.value.shape[:1]:
            raise ShapeError(
                f"conv3x3 weight {weight.value.shape} / bias {bias.value.shape} "
                f"incompatible with input channels {c}"
            )
        y, padded = kernels.conv3x3_forward(x.value, weight.value, bias.value)

        def backward(g):
            dx, dw, db = kernels.conv3x3_backward(g, padded, weight.value, x.requires_grad)
            return dx, dw, db

        return self._op(y, (x, weight, bias), backward)

    def conv1x1(self, x, weight, bias):
        x, weight, bias = self._own(x), self._own(weight), self._own(bias)
        n, c, h, w = _dims(x)
        wv = weight.value
        if wv.ndim == 4:
            if wv.shape[2:] != (1, 1):
                raise ShapeError(f"conv1x1 weight must be (cout, cin, 1, 1), got {wv.shape}")
            wv = wv[:, :, 0, 0]
        if wv.ndim != 2 or wv.shape[1] != c or bias.value.shape != (wv.shape[0],):
            raise ShapeError(f"conv1x1 weight {weight.value.shape} incompatible with {c} channels")
        cols = x.value.reshape(n, c, h * w)
        y = np.matmul(wv, cols).reshape(n, -1, h, w) + bias.value[None, :, None, None]

        def backward(g):
            gc = g.reshape(n, -1, h * w)
            dx = np.matmul(wv.T, gc).reshape(n, c, h, w) if x.requires_grad else None
            dw = np.matmul(gc, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.value.shape)
            return dx, dw, g.sum(axis=(0, 2, 3))

        return self._op(y, (x, weight, bias), backward)

    def relu(self, x):
        x = self._own(x)
        mask = x.value > 0
        return self._op(np.where(mask, x.value, 0.0), (x,), lambda g: (np.where(mask, g, 0.0),))

    def maxpool2(self, x):
        x = self._own(x)
        n, c, h, w = _dims(x)
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
        y, idx = kernels.maxpool2_forward(np.ascontiguousarray(x.value))
        return self._op(y, (x,), lambda g: (kernels.maxpool2_backward(g, idx),))

    def upsample2(self, x):
        x = self._own(x)
        n, c, h, w = _dims(x)
        if h % 2 or w % 2:
            raise ShapeError(f"upsample2_nearest needs even spatial dims, got {h}x{w}")
        y = kernels.upsample2_forward(np.ascontiguousarray(x.value))
        return self._op(y, (x,), lambda g: (kernels.upsample2_backward(g),))

    def concat(self, a, b):
        a, b = self._own(a), self._own(b)
        na, ca, ha, wa = _dims(a)
        nb, cb, hb, wb = _dims(b)
        if (na, ha, wa) != (nb, hb, wb):
            raise ShapeError(f"concat_channels needs matching n,h,w: {a.shape} vs {b.shape}")
        y = np.concatenate([a.value, b.value], axis=1)
        return self._op(y, (a, b), lambda g: (g[:, :ca], g[:, ca:]))

    # -- scalar plumbing --------------------------------------------------
    def add(self, a, b):
        a, b = self._own(a), self._own(b)
        if np.shape(a.value) != np.shape(b.value):
            raise ShapeError(f"add needs equal shapes: {a.shape} vs {b.shape}")
        return self._op(a.value + b.value, (a, b), lambda g: (g, g))

    def affine(self, x, scale, shift, center=0.0):
        """``scale * (x - center) + shift`` with constant coefficients (no gradient to them)."""
        x = self._own(x)
        return self._op(scale * (x.value - center) + shift, (x,), lambda g: (scale * g,))

    def sum(self, x):
        x = self._own(x)
        shape = np.shape(x.value)
        return self._op(np.float64(np.sum(x.value)), (x,), lambda g: (np.full(shape, g),))

    def sqdist(self, x, anchor, coef=0.5):
        """``coef * ||x - anchor||^2`` with ``anchor`` constant."""
        x = self._own(x)
        diff = x.value - anchor
        return self._op(np.float64(coef * np.sum(diff * diff)), (x,), lambda g: (2.0 * coef * g * diff,))

    def cross_entropy(self, logits, labels):
        """Mean per-pixel softmax cross-entropy; ``labels`` is a constant (n, 1, h, w) 0/1 array."""
        logits = self._own(logits)
        n, c, h, w = _dims(logits)
        labels = np.asarray(labels)
        if labels.shape != (n, 1, h, w):
            raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
        if c != 2:
            raise ShapeError(f"cross_entropy expects 2 classes, got {c}")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValidationError("labels must be binary (0/1)")
        z = logits.value
        top = np.maximum(z[:, 0], z[:, 1])
        lse = top + np.log(np.exp(z[:, 0] - top) + np.exp(z[:, 1] - top))
        lab = labels[:, 0].astype(bool)
        picked = np.where(lab, z[:, 1], z[:, 0])
        count = n * h * w
        loss = np.float64(np.sum(lse - picked) / count)

        def backward(g):
            p1 = np.exp(z[:, 1] - lse)
            d1 = (p1 - lab) * (g / count)
            return (np.stack([-d1, d1], axis=1),)

        return self._op(loss, (logits,), backward)

    # -- differentiation --------------------------------------------------
    def backward(self, loss):
        """Populate and return ``{param name: gradient}`` for the scalar ``loss``."""
        if not self.nodes:
            raise GraphStateError("backward called before any forward operation")
        loss = self._own(loss)
        if np.ndim(loss.value) != 0:
            raise GraphStateError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not np.isfinite(loss.value):
            raise NumericError(f"loss is not finite: {loss.value}")
        grads: list = [None] * (loss.index + 1)
        grads[loss.index] = np.float64(1.0)
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads[node.index]
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                slot = grads[parent.index]
                grads[parent.index] = pg if slot is None else slot + pg
        out = {}
        for name, node in self.params.items():
            g = grads[node.index] if node.index <= loss.index else None
            out[name] = np.zeros_like(node.value) if g is None else np.asarray(g, dtype=np.float64)
        self.grads = out
        return out


def _dims(node):
    shape = np.shape(node.value)
    if len(shape) != 4:
        raise ShapeError(f"expected a rank-4 tensor, got shape {shape}")
    return shape


def layer_forward(kind, inputs, params=None):
    """Evaluate one layer outside any training graph and return the output array.

    ``inputs`` is a tensor (or a pair of tensors for ``concat_channels``);
    ``params`` is ``(weight, bias)`` for the convolution kinds.
    """
    if kind not in LAYER_KINDS:
        raise ValidationError(f"unknown layer kind {kind!r}; expected one of {LAYER_KINDS}")
    g = Graph()
    if kind == "concat_channels":
        a, b = inputs
        out = g.concat(g.constant(as_tensor4(a)), g.constant(as_tensor4(b)))
    else:
        x = g.constant(as_tensor4(inputs))
        if kind in ("conv3x3", "conv1x1"):
            if params is None:
                raise ValidationError(f"{kind} needs (weight, bias)")
            weight, bias = (g.constant(p) for p in params)
            out = g.conv3x3(x, weight, bias) if kind == "conv3x3" else g.conv1x1(x, weight, bias)
        elif kind == "relu":
            out = g.relu(x)
        elif kind == "maxpool2":
            out = g.maxpool2(x)
        else:
            out = g.upsample2(x)
    if not np.all(np.isfinite(out.value)):
        raise NumericError(f"{kind} produced non-finite values")
    return out.value
