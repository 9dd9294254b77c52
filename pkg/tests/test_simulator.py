import hashlib

import numpy as np
import pytest

from rotsr.geometry import ScanGeometry, sample_polar
from rotsr.simulator import (
    DisplacementModel,
    PhantomParams,
    acquire,
    apply_row_shifts,
    generate_phantom,
    inject_row_displacement,
)

GEOM = ScanGeometry(128, 128)
SMALL = PhantomParams(seed=5, size=128, n_trees=4, branch_depth=3)


def test_phantom_deterministic():
    a = generate_phantom(SMALL)
    b = generate_phantom(SMALL)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    assert not np.array_equal(a, generate_phantom(PhantomParams(**{**SMALL.to_dict(), "seed": 6})))


def test_phantom_without_trees_is_background():
    img = generate_phantom(PhantomParams(n_trees=0, size=64, background_level=0.1))
    assert np.all(img == 0.1)


def test_phantom_vessel_fraction_regression():
    img = generate_phantom(PhantomParams(seed=0))
    frac = float(np.mean(img > PhantomParams().background_level + 0.05))
    assert frac == pytest.approx(0.41925048828125, abs=1e-12)


def test_phantom_param_validation():
    with pytest.raises(ValueError):
        PhantomParams(vessel_width_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        PhantomParams(branch_depth=0)
    with pytest.raises(ValueError):
        PhantomParams(noise_sigma=-1)


def test_inject_zero_shift_is_identity():
    raw = np.random.default_rng(0).random((16, 20))
    out, shifts = inject_row_displacement(raw, DisplacementModel("constant", 0), np.random.default_rng(0))
    assert np.array_equal(out, raw) and not shifts.any()


def test_inject_constant_shift():
    raw = np.random.default_rng(0).random((16, 20))
    out, shifts = inject_row_displacement(raw, DisplacementModel("constant", 3), np.random.default_rng(0))
    for i in range(16):
        expected = np.roll(raw[i], 3) if i % 2 == 0 else raw[i]
        assert np.array_equal(out[i], expected)
    assert np.array_equal(shifts[0::2], np.full(8, 3)) and not shifts[1::2].any()


def test_inject_uniform_matches_rng_replay():
    raw = np.zeros((21, 30))
    _, shifts = inject_row_displacement(raw, DisplacementModel("uniform", 5), np.random.default_rng(42))
    replay = np.random.default_rng(42).integers(-5, 6, size=11)
    assert np.array_equal(shifts[0::2], replay)
    assert not shifts[1::2].any()


def test_walk_shifts_are_bounded_integers():
    s = DisplacementModel("walk", 2, step=0.7).draw(200, np.random.default_rng(1))
    assert np.all(np.abs(s) <= 2) and not s[1::2].any()


def test_shift_too_large():
    with pytest.raises(ValueError):
        inject_row_displacement(np.zeros((4, 5)), DisplacementModel("constant", 5), np.random.default_rng(0))


def test_negated_shifts_restore_input():
    raw = np.random.default_rng(3).random((32, 40))
    out, shifts = inject_row_displacement(raw, DisplacementModel("uniform", 5), np.random.default_rng(9))
    assert np.array_equal(apply_row_shifts(out, -shifts), raw)


def test_acquire_noiseless_equals_sample_polar():
    ph = generate_phantom(SMALL)
    p = PhantomParams(**{**SMALL.to_dict(), "noise_sigma": 0.0})
    raw, shifts = acquire(ph, GEOM, DisplacementModel(), p, np.random.default_rng(0))
    assert np.array_equal(raw, sample_polar(ph, GEOM)) and not shifts.any()


def test_acquire_symmetric_phantom_rows_identical():
    yy, xx = np.mgrid[:128, :128]
    c = GEOM.center[0]
    ph = np.exp(-((xx - c) ** 2 + (yy - c) ** 2) / (2 * 20.0 ** 2))
    p = PhantomParams(noise_sigma=0.0, size=128)
    raw, _ = acquire(ph, GEOM, DisplacementModel(), p, np.random.default_rng(0))
    assert np.max(np.abs(raw - raw[0])) < 5e-3


def test_acquire_checksum_regression():
    ph = generate_phantom(SMALL)
    raw, shifts = acquire(ph, GEOM, DisplacementModel("uniform", 3), SMALL, np.random.default_rng(123))
    digest = hashlib.sha256(np.round(raw, 12).tobytes() + shifts.tobytes()).hexdigest()
    assert digest == "91a912247c012f30784f18718f2467e77d64453c92b2417633f73871ceefd35f"
