"""Median filtering and odd/even row registration of raw scans.

Even-indexed rows are registered onto the odd-indexed rows. Each row pair is
aligned by a 1-D normalized cross-correlation search with circular shifts,
refined with a three-point parabola and smoothed along the rows.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

MAX_SHIFT = 8
SMOOTH_WIDTH = 5


def median_filter3(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ValueError("median_filter3 needs a 2-D image of at least 3x3")
    return ndimage.median_filter(img, size=3, mode="nearest")


def interpolate_rows(raw: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Linearly interpolate the rows not in ``keep`` from the kept rows (replicate at ends)."""
    out = raw.copy()
    kept = np.flatnonzero(keep)
    for i in np.flatnonzero(~keep):
        lo = kept[kept < i]
        hi = kept[kept > i]
        if len(lo) and len(hi):
            a, b = lo[-1], hi[0]
            t = (i - a) / (b - a)
            out[i] = (1 - t) * raw[a] + t * raw[b]
        else:
            out[i] = raw[lo[-1] if len(lo) else hi[0]]
    return out


def split_and_interpolate(raw: np.ndarray):
    """Returns (odd_full, even_full): each row family re-interpolated to full height."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] < 4:
        raise ValueError("need a 2-D image with at least 4 rows")
    idx = np.arange(raw.shape[0])
    odd_full = interpolate_rows(raw, idx % 2 == 1)
    even_full = interpolate_rows(raw, idx % 2 == 0)
    return odd_full, even_full


def _ncc_curve(fixed_row: np.ndarray, moving_row: np.ndarray, max_shift: int) -> np.ndarray | None:
    f = fixed_row - fixed_row.mean()
    m = moving_row - moving_row.mean()
    nf = np.sqrt(np.dot(f, f))
    nm = np.sqrt(np.dot(m, m))
    if nf < 1e-12 or nm < 1e-12:
        return None
    lags = np.arange(-max_shift, max_shift + 1)
    # moving ~= roll(fixed, s)  <=>  roll(moving, -s) ~= fixed
    return np.array([np.dot(f, np.roll(m, -s)) for s in lags]) / (nf * nm)


def _peak(curve: np.ndarray, max_shift: int) -> float:
    k = int(np.argmax(curve))
    s = float(k - max_shift)
    if 0 < k < len(curve) - 1:
        y0, y1, y2 = curve[k - 1], curve[k], curve[k + 1]
        den = y0 - 2 * y1 + y2
        if den < 0:
            s += float(np.clip(0.5 * (y0 - y2) / den, -0.5, 0.5))
    return s


def raw_row_shifts(fixed: np.ndarray, moving: np.ndarray, max_shift: int = MAX_SHIFT) -> np.ndarray:
    """Per-row subpixel shift of ``moving`` relative to ``fixed``, unsmoothed."""
    fixed = np.asarray(fixed, dtype=float)
    moving = np.asarray(moving, dtype=float)
    if fixed.shape != moving.shape:
        raise ValueError(f"shape mismatch {fixed.shape} vs {moving.shape}")
    max_shift = min(max_shift, fixed.shape[1] // 2 - 1)
    out = np.zeros(fixed.shape[0])
    for i in range(fixed.shape[0]):
        curve = _ncc_curve(fixed[i], moving[i], max_shift)
        if curve is not None:
            out[i] = _peak(curve, max_shift)
    return out


def estimate_row_shifts(fixed: np.ndarray, moving: np.ndarray, max_shift: int = MAX_SHIFT,
                        smooth: int = SMOOTH_WIDTH) -> np.ndarray:
    """Per-row shift s such that ``moving[i] ~= roll(fixed[i], s)``.

    NCC peak with parabolic refinement, then a moving average of width
    ``smooth`` along the rows. Zero-variance rows report 0 before smoothing.
    """
    s = raw_row_shifts(fixed, moving, max_shift)
    if smooth > 1 and len(s) > 1:
        s = ndimage.uniform_filter1d(s, smooth, mode="nearest")
    return s


def shift_rows(img: np.ndarray, shifts) -> np.ndarray:
    """Circular per-row shift by (possibly fractional) amounts, linear interpolation."""
    img = np.asarray(img, dtype=float)
    out = np.empty_like(img)
    for i, s in enumerate(np.asarray(shifts, dtype=float)):
        k = int(np.floor(s))
        t = s - k
        a = np.roll(img[i], k)
        if t == 0:
            out[i] = a
        else:
            out[i] = (1 - t) * a + t * np.roll(img[i], k + 1)
    return out


def register_even_to_odd(raw: np.ndarray, max_shift: int = MAX_SHIFT, return_shifts: bool = False):
    """Align even rows onto odd rows; odd rows are returned untouched."""
    raw = np.asarray(raw, dtype=float)
    odd_full, even_full = split_and_interpolate(raw)
    shifts = estimate_row_shifts(odd_full, even_full, max_shift)
    out = shift_rows(even_full, -shifts)
    out[1::2] = raw[1::2]
    if return_shifts:
        return out, shifts
    return out


def adjacent_row_shifts(raw: np.ndarray, max_shift: int = MAX_SHIFT) -> np.ndarray:
    """|shift| between each consecutive row pair (i, i+1)."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    return np.abs(raw_row_shifts(raw[:-1], raw[1:], max_shift))


def displacement_metric(raw: np.ndarray, max_shift: int = MAX_SHIFT) -> float:
    """Mean absolute adjacent-row shift in pixels."""
    return float(adjacent_row_shifts(raw, max_shift).mean())


def preprocess(raw: np.ndarray, median: bool = True, registration: bool = True) -> np.ndarray:
    out = np.asarray(raw, dtype=float)
    if median:
        out = median_filter3(out)
    if registration:
        out = register_even_to_odd(out)
    return out
