import math

import numpy as np
import pytest

from oracles import brute_assd, brute_boundary, brute_dice
from pathfl.errors import ShapeError, ValidationError
from pathfl.metrics import assd, boundary, dice, per_image_metrics


def test_dice_examples():
    m = np.zeros((4, 4))
    m[1:3, 1:3] = 1
    assert dice(m, m) == 1.0
    top = np.array([[1, 1], [0, 0]])
    assert dice(np.ones((2, 2)), top) == pytest.approx(2 * 2 / 6)
    assert dice(np.zeros((2, 2)), top) == 0.0
    assert dice(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


def test_assd_examples():
    m = np.zeros((8, 8))
    m[2:6, 2:5] = 1
    assert assd(m, m) == 0.0
    a, b = np.zeros((5, 9)), np.zeros((5, 9))
    a[2, 1] = 1
    b[2, 4] = 1
    assert assd(a, b) == 3.0
    label = np.zeros((64, 64))
    label[10, 10] = 1
    assert assd(np.zeros((64, 64)), label) == pytest.approx(90.5097, abs=1e-4)
    assert assd(np.zeros((64, 64)), label) == math.hypot(64, 64)
    assert assd(np.zeros((4, 4)), np.zeros((4, 4))) == 0.0


def test_errors():
    with pytest.raises(ShapeError):
        dice(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        assd(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValidationError):
        dice(np.full((2, 2), 0.5), np.zeros((2, 2)))


def _random_masks(rng):
    h, w = rng.integers(1, 17, size=2)
    density = rng.uniform(0.0, 1.0)
    # blocky masks plus sparse noise give both large regions and isolated pixels
    a = rng.random((h, w)) < density
    b = np.roll(a, int(rng.integers(-2, 3)), axis=int(rng.integers(2)))
    b ^= rng.random((h, w)) < 0.1
    if rng.random() < 0.1:
        b[:] = False
    return a.astype(np.uint8), b.astype(np.uint8)


def test_metrics_match_brute_force_exactly():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        a, b = _random_masks(rng)
        assert dice(a, b) == brute_dice(a, b)
        assert assd(a, b) == brute_assd(a, b)
        assert sorted(zip(*np.nonzero(boundary(a)))) == sorted(brute_boundary(a))


def test_symmetry_and_ranges():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b = _random_masks(rng)
        assert dice(a, b) == dice(b, a)
        assert assd(a, b) == assd(b, a)
        assert 0.0 <= dice(a, b) <= 1.0 and assd(a, b) >= 0.0


def test_translation_invariance():
    a, b = np.zeros((16, 16)), np.zeros((16, 16))
    a[3:7, 2:6] = 1
    b[4:9, 3:6] = 1
    moved_a, moved_b = np.roll(a, (3, 4), axis=(0, 1)), np.roll(b, (3, 4), axis=(0, 1))
    assert dice(a, b) == dice(moved_a, moved_b)
    assert assd(a, b) == assd(moved_a, moved_b)


def test_boundary_counts_image_border_as_outside():
    np.testing.assert_array_equal(boundary(np.ones((3, 3))), [[1, 1, 1], [1, 0, 1], [1, 1, 1]])


def test_per_image_metrics_shapes():
    preds = np.zeros((3, 1, 4, 4))
    labels = np.zeros((3, 1, 4, 4))
    labels[1, 0, 0, 0] = 1
    d, s = per_image_metrics(preds, labels)
    assert d == [1.0, 0.0, 1.0] and s == [0.0, math.hypot(4, 4), 0.0]
