"""Adam optimizer over a dict of named parameter arrays."""

from dataclasses import dataclass, field

import numpy as np

from pathfl.errors import ShapeError, ValidationError


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self):
        return AdamState(self.step, {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_step(params, grads, state, lr=1e-4, beta1=0.9, beta2=0.95, eps=1e-8):
    """Apply one bias-corrected Adam update to ``params`` in place and return them."""
    if lr < 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1) or eps <= 0:
        raise ValidationError(f"bad Adam hyper-parameters lr={lr} betas=({beta1}, {beta2}) eps={eps}")
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ShapeError(f"gradient {name!r} has shape {np.shape(g)}, parameter {np.shape(params[name])}")
        if name in state.m and state.m[name].shape != np.shape(g):
            raise ShapeError(f"moment state for {name!r} has shape {state.m[name].shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params
