import numpy as np
import pytest

from oracles import scalar_adam
from pathfl.errors import ShapeError, ValidationError
from pathfl.optim import AdamState, adam_step


def test_first_step_moves_each_weight_by_lr_against_gradient_sign(rng):
    w = rng.standard_normal((3, 4))
    g = rng.standard_normal((3, 4))
    params = {"w": w.copy()}
    adam_step(params, {"w": g}, AdamState(), lr=1e-3)
    # bias-corrected first step is lr * g / (|g| + eps)
    np.testing.assert_allclose(params["w"], w - 1e-3 * g / (np.abs(g) + 1e-8), rtol=0, atol=1e-15)


def test_matches_scalar_reference_over_many_steps(rng):
    w0 = rng.standard_normal(5)
    grads = rng.standard_normal((25, 5))
    params = {"w": w0.copy()}
    state = AdamState()
    for g in grads:
        adam_step(params, {"w": g}, state, lr=1e-2, beta1=0.9, beta2=0.95)
    expected = [scalar_adam(w0[i], grads[:, i], 1e-2, 0.9, 0.95, 1e-8)[-1] for i in range(5)]
    np.testing.assert_allclose(params["w"], expected, rtol=1e-12)


def test_zero_gradient_leaves_fresh_parameters_unchanged():
    params = {"w": np.ones(3)}
    adam_step(params, {"w": np.zeros(3)}, AdamState())
    np.testing.assert_array_equal(params["w"], np.ones(3))


def test_state_copy_is_independent():
    params = {"w": np.ones(2)}
    state = AdamState()
    adam_step(params, {"w": np.ones(2)}, state)
    snap = state.copy()
    adam_step(params, {"w": np.ones(2)}, state)
    assert snap.step == 1 and state.step == 2
    assert not np.array_equal(snap.m["w"], state.m["w"])


def test_bad_inputs_rejected():
    with pytest.raises(ShapeError):
        adam_step({"w": np.ones(2)}, {"w": np.ones(3)}, AdamState())
    with pytest.raises(ShapeError):
        adam_step({"w": np.ones(2)}, {"v": np.ones(2)}, AdamState())
    with pytest.raises(ValidationError):
        adam_step({"w": np.ones(2)}, {"w": np.ones(2)}, AdamState(), beta1=1.0)
