import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathfl.errors import NoForeignStyle, ShapeError, ValidationError
from pathfl.style import (TRANSFORMS, StylePool, StyleStats, adain_transfer, apply_transform,
                          compute_image_stats, half_plane, hybridize, make_random_mask, mean_stats,
                          sample_style)


# -- statistics --------------------------------------------------------------

def test_constant_batch_stats():
    s = compute_image_stats(np.full((2, 3, 4, 4), 0.5))
    np.testing.assert_array_equal(s.mean, [0.5] * 3)
    np.testing.assert_array_equal(s.std, [0.0] * 3)


def test_binary_batch_stats():
    x = np.zeros((1, 1, 2, 4))
    x[..., :2] = 1.0
    s = compute_image_stats(x)
    assert s.mean[0] == 0.5 and s.std[0] == 0.5


def test_channels_are_separate():
    x = np.empty((2, 2, 3, 3))
    x[:, 0] = 0.2
    x[:, 1] = 0.8
    s = compute_image_stats(x)
    np.testing.assert_allclose(s.mean, [0.2, 0.8])
    np.testing.assert_allclose(s.std, [0.0, 0.0], atol=1e-15)


def test_scalar_mode_pools_channels(rng):
    x = rng.random((2, 3, 4, 4))
    s = compute_image_stats(x, per_channel=False)
    assert s.channels == 1
    assert s.mean[0] == pytest.approx(x.mean()) and s.std[0] == pytest.approx(x.std())


def test_empty_batch_rejected():
    with pytest.raises(ValidationError):
        compute_image_stats(np.zeros((0, 3, 4, 4)))


def test_mean_stats_averages_elementwise():
    m = mean_stats([StyleStats([0.2, 0.4], [0.1, 0.3]), StyleStats([0.4, 0.0], [0.3, 0.1])])
    np.testing.assert_allclose(m.mean, [0.3, 0.2])
    np.testing.assert_allclose(m.std, [0.2, 0.2])


# -- pool --------------------------------------------------------------------

def test_pool_rules_and_round_trip():
    pool = StylePool(2)
    pool.add("a", StyleStats([0.1, 0.2, 0.3], [0.01, 0.02, 0.03]))
    pool.add("b", StyleStats([0.4, 0.5, 0.6], [0.04, 0.05, 0.06]))
    with pytest.raises(ValidationError):
        pool.add("a", StyleStats([0.1, 0.2, 0.3], [0.0, 0.0, 0.0]))
    with pytest.raises(ShapeError):
        pool.add("c", StyleStats([0.1], [0.1]))
    back = StylePool.loads(pool.dumps())
    assert back.round == 2 and set(back.entries) == {"a", "b"}
    np.testing.assert_array_equal(back.entries["b"].std, pool.entries["b"].std)


def test_sample_style_single_foreign_always_chosen(rng):
    pool = StylePool(0, {"me": StyleStats([0.1], [0.1]), "other": StyleStats([0.9], [0.2])})
    for _ in range(20):
        assert sample_style(pool, "me", rng) is pool.entries["other"]


def test_sample_style_is_uniform_over_foreign(rng):
    pool = StylePool(0, {"me": StyleStats([0.0], [0.1]), "a": StyleStats([0.3], [0.1]),
                         "b": StyleStats([0.6], [0.1])})
    picks = [sample_style(pool, "me", rng) is pool.entries["a"] for _ in range(10000)]
    assert 4700 <= sum(picks) <= 5300


def test_sample_style_without_foreign_entry():
    with pytest.raises(NoForeignStyle):
        sample_style(StylePool(0, {"me": StyleStats([0.1], [0.1])}), "me", np.random.default_rng(0))
    with pytest.raises(NoForeignStyle):
        sample_style(StylePool(0), "me", np.random.default_rng(0))


# -- transfer ----------------------------------------------------------------

def test_transfer_hand_example():
    x = np.full((1, 1, 1, 1), 0.3)
    out = adain_transfer(x, StyleStats([0.2], [0.1]), StyleStats([0.5], [0.2]), eps=1e-12)
    assert out.item() == pytest.approx(0.7, abs=1e-9)


def test_transfer_to_own_stats_is_near_identity(rng):
    x = 0.2 + 0.5 * rng.random((3, 3, 6, 6))
    s = compute_image_stats(x)
    assert np.max(np.abs(adain_transfer(x, s, s) - x)) < 1e-4


def test_transfer_clamps_and_checks_channels(rng):
    x = rng.random((1, 2, 4, 4))
    out = adain_transfer(x, StyleStats([0.5, 0.5], [0.01, 0.01]), StyleStats([0.5, 0.5], [1.0, 1.0]))
    assert out.min() >= 0.0 and out.max() <= 1.0
    with pytest.raises(ShapeError):
        adain_transfer(x, StyleStats([0.5] * 3, [0.1] * 3), StyleStats([0.5] * 3, [0.1] * 3))
    with pytest.raises(ValidationError):
        adain_transfer(x, StyleStats([0.5] * 2, [0.1] * 2), StyleStats([0.5] * 2, [0.1] * 2), eps=0.0)


def _random_case(rng):
    c = int(rng.integers(1, 4))
    x = rng.uniform(0.2, 0.8, size=(int(rng.integers(1, 4)), c, 5, 5)) * rng.uniform(0.1, 1.0, size=(1, c, 1, 1))
    target = StyleStats(rng.uniform(0.2, 0.8, c), rng.uniform(0.01, 0.2, c))
    return x, target


def test_transferred_stats_equal_target_with_vanishing_eps(rng):
    for _ in range(200):
        x, target = _random_case(rng)
        src = compute_image_stats(x)
        out = adain_transfer(x, src, target, eps=1e-12, clamp=False)
        got = compute_image_stats(out)
        np.testing.assert_allclose(got.mean, target.mean, rtol=0, atol=1e-6)
        np.testing.assert_allclose(got.std, target.std, rtol=0, atol=1e-6)


def test_default_eps_error_is_bounded_by_eps_over_source_std(rng):
    # the regulariser shrinks the output std by the factor sigma / (sigma + eps)
    for _ in range(50):
        x, target = _random_case(rng)
        src = compute_image_stats(x)
        got = compute_image_stats(adain_transfer(x, src, target, clamp=False))
        bound = target.std * 1e-5 / src.std
        assert np.all(np.abs(got.std - target.std) <= bound * (1 + 1e-9) + 1e-15)
        np.testing.assert_allclose(got.mean, target.mean, atol=1e-12)


def test_round_trip_transfer_recovers_input(rng):
    for _ in range(200):
        x, target = _random_case(rng)
        src = compute_image_stats(x)
        there = adain_transfer(x, src, target, eps=1e-12, clamp=False)
        back = adain_transfer(there, target, src, eps=1e-12, clamp=False)
        assert np.max(np.abs(back - x)) < 1e-6


# -- masks -------------------------------------------------------------------

def test_four_by_four_half_plane():
    m = half_plane(4, 4)
    assert m.sum() == 8
    np.testing.assert_array_equal(m[:, :2], 1)
    np.testing.assert_array_equal(m[:, 2:], 0)


def test_mask_count_invariant_exhaustive():
    for h in range(1, 65):
        for w in range(1, 65):
            base = half_plane(h, w)
            assert base.shape == (h, w) and base.sum() == (h * w) // 2
            for t in TRANSFORMS:
                moved = apply_transform(base, t)
                assert moved.sum() == (h * w) // 2


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_random_mask_has_requested_dims_and_half_ones(h, w, seed):
    m = make_random_mask(h, w, np.random.default_rng(seed))
    assert m.shape == (h, w)
    assert m.sum() in ((h * w) // 2, (h * w + 1) // 2)
    assert set(np.unique(m)) <= {0, 1}


def test_half_planes_equally_likely(rng):
    counts = {"left": 0, "right": 0, "top": 0, "bottom": 0}
    for _ in range(1000):
        m = make_random_mask(8, 8, rng)
        if m[:, :4].all():
            counts["left"] += 1
        elif m[:, 4:].all():
            counts["right"] += 1
        elif m[:4].all():
            counts["top"] += 1
        else:
            assert m[4:].all()
            counts["bottom"] += 1
    for side, n in counts.items():
        assert 190 <= n <= 310, (side, counts)


def test_invalid_mask_dims():
    with pytest.raises(ValidationError):
        make_random_mask(0, 4, np.random.default_rng(0))


# -- hybrid ------------------------------------------------------------------

def test_hybridize_extremes(rng):
    a = rng.random((2, 3, 4, 4))
    b = rng.random((2, 3, 4, 4))
    np.testing.assert_array_equal(hybridize(a, b, np.ones((4, 4), np.uint8)), a)
    np.testing.assert_array_equal(hybridize(a, b, np.zeros((4, 4), np.uint8)), b)
    np.testing.assert_array_equal(hybridize(a, a, make_random_mask(4, 4, rng)), a)


def test_hybridize_half_mask_mean():
    out = hybridize(np.zeros((1, 3, 6, 6)), np.ones((1, 3, 6, 6)), half_plane(6, 6))
    assert out.mean() == 0.5


def test_hybridize_shape_errors():
    with pytest.raises(ShapeError):
        hybridize(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 5)), np.ones((4, 4)))
    with pytest.raises(ShapeError):
        hybridize(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 4)), np.ones((4, 5)))
