import numpy as np
import pytest

from rotsr.geometry import ScanGeometry
from rotsr.preprocess import (
    adjacent_row_shifts,
    displacement_metric,
    estimate_row_shifts,
    median_filter3,
    register_even_to_odd,
    shift_rows,
    split_and_interpolate,
)
from rotsr.simulator import DisplacementModel, PhantomParams, acquire, apply_row_shifts, generate_phantom


@pytest.fixture(scope="module")
def scan():
    g = ScanGeometry(128, 128)
    p = PhantomParams(seed=11, size=128, n_trees=6, branch_depth=3, vessel_width_range=(1.0, 3.0))
    raw, _ = acquire(generate_phantom(p), g, DisplacementModel(), p, np.random.default_rng(0))
    return raw


def test_median_constant_and_impulse():
    img = np.full((5, 6), 2.0)
    assert np.array_equal(median_filter3(img), img)
    img[2, 3] = 50.0
    assert np.array_equal(median_filter3(img), np.full((5, 6), 2.0))


def test_median_hand_sorted():
    img = np.array([[1, 2, 3], [4, 100, 6], [7, 8, 9]], dtype=float)
    assert median_filter3(img)[1, 1] == 6.0
    with pytest.raises(ValueError):
        median_filter3(np.zeros((2, 5)))


def test_split_identical_rows():
    raw = np.tile(np.arange(7.0), (6, 1))
    odd, even = split_and_interpolate(raw)
    assert np.array_equal(odd, raw) and np.array_equal(even, raw)


def test_split_four_rows():
    raw = np.arange(4.0)[:, None] * np.array([[1.0, 10.0, 100.0]])
    odd, even = split_and_interpolate(raw)
    assert np.array_equal(even[1], (raw[0] + raw[2]) / 2)
    assert np.array_equal(even[3], raw[2])
    assert np.array_equal(odd[0], raw[1])
    assert np.array_equal(odd[2], (raw[1] + raw[3]) / 2)


def test_split_matches_direct_formula():
    raw = np.random.default_rng(0).random((8, 8))
    odd, even = split_and_interpolate(raw)
    exp_odd = np.empty_like(raw)
    exp_even = np.empty_like(raw)
    for i in range(8):
        if i % 2:
            exp_odd[i] = raw[i]
            exp_even[i] = (raw[i - 1] + raw[i + 1]) / 2 if i + 1 < 8 else raw[i - 1]
        else:
            exp_even[i] = raw[i]
            exp_odd[i] = (raw[i - 1] + raw[i + 1]) / 2 if i > 0 else raw[1]
    assert np.allclose(odd, exp_odd, atol=1e-15) and np.allclose(even, exp_even, atol=1e-15)


def test_shifts_zero_for_identical(scan):
    assert np.all(np.abs(estimate_row_shifts(scan, scan)) < 1e-9)


def test_shifts_constant_roll(scan):
    moving = np.roll(scan, 3, axis=1)
    s = estimate_row_shifts(scan, moving)
    assert np.all(np.abs(s - 3) <= 0.25)


def test_shifts_random_rolls(scan):
    rng = np.random.default_rng(4)
    truth = np.repeat(rng.integers(-2, 3, size=scan.shape[0] // 8), 8)
    moving = apply_row_shifts(scan, truth)
    s = estimate_row_shifts(scan, moving, smooth=1)
    assert np.mean(np.abs(s - truth) <= 0.5) >= 0.95


def test_zero_variance_row_reports_zero():
    fixed = np.random.default_rng(1).random((6, 30))
    fixed[2] = 0.4
    s = estimate_row_shifts(fixed, np.roll(fixed, 2, axis=1), smooth=1)
    assert s[2] == 0.0 and np.all(np.abs(np.delete(s, 2) - 2) < 0.25)


def test_shift_rows_inverse():
    img = np.random.default_rng(2).random((4, 16))
    s = np.array([2.0, -1.0, 0.0, 3.0])
    assert np.allclose(shift_rows(shift_rows(img, s), -s), img)


def test_register_preserves_odd_rows(scan):
    raw = apply_row_shifts(scan, DisplacementModel("constant", 3).draw(scan.shape[0], None))
    out = register_even_to_odd(raw)
    assert np.array_equal(out[1::2], raw[1::2])


def test_register_aligned_input(scan):
    out = register_even_to_odd(scan)
    assert np.array_equal(out[1::2], scan[1::2])
    assert np.abs(out - scan).mean() < 0.01


def test_register_removes_constant_shift(scan):
    raw = apply_row_shifts(scan, DisplacementModel("constant", 3).draw(scan.shape[0], None))
    before = displacement_metric(raw)
    out = register_even_to_odd(raw)
    assert displacement_metric(out) < 0.5 < before
    assert displacement_metric(out) <= before


def test_register_zero_image():
    assert np.array_equal(register_even_to_odd(np.zeros((10, 12))), np.zeros((10, 12)))


def test_register_idempotent(scan):
    raw = apply_row_shifts(scan, DisplacementModel("constant", 2).draw(scan.shape[0], None))
    once = register_even_to_odd(raw)
    twice = register_even_to_odd(once)
    assert abs(displacement_metric(twice) - displacement_metric(once)) < 0.1


def test_displacement_metric_cases(scan):
    assert displacement_metric(np.tile(scan[40], (10, 1))) == 0.0
    alt = apply_row_shifts(np.tile(scan[40], (20, 1)), DisplacementModel("constant", 2).draw(20, None))
    assert displacement_metric(alt) == pytest.approx(2.0, abs=0.1)
    r = np.random.default_rng(0).random((12, 40))
    assert displacement_metric(r) >= 0
    assert adjacent_row_shifts(r).shape == (11,)
