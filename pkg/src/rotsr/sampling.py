"""Gradient-scored patch selection and LR synthesis."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .preprocess import interpolate_rows


def sobel_xy(img: np.ndarray):
    """Standard 3x3 Sobel pair with replicate padding; x runs along columns."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ValueError("Sobel needs a 2-D image of at least 3x3")
    return ndimage.sobel(img, axis=1, mode="nearest"), ndimage.sobel(img, axis=0, mode="nearest")


def gradient_map(img: np.ndarray) -> np.ndarray:
    gx, gy = sobel_xy(img)
    return np.sqrt(gx * gx + gy * gy)


def _window_slices(n: int, win: int):
    return [slice(a, min(a + win, n)) for a in range(0, n, win)]


def window_scores(img: np.ndarray, sub_window: int = 64) -> np.ndarray:
    """Sum of 0.5|Sobel_x| + 0.5|Sobel_y| inside each window, Sobel taken per window.

    A trailing partial window is scored over its own area. Windows smaller than
    3 pixels on a side score 0.
    """
    img = np.asarray(img, dtype=float)
    rows = _window_slices(img.shape[0], sub_window)
    cols = _window_slices(img.shape[1], sub_window)
    out = np.zeros((len(rows), len(cols)))
    for i, rs in enumerate(rows):
        for j, cs in enumerate(cols):
            sub = img[rs, cs]
            if min(sub.shape) < 3:
                continue
            gx, gy = sobel_xy(sub)
            out[i, j] = np.sum(0.5 * np.abs(gx) + 0.5 * np.abs(gy))
    return out


def window_probs(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    if np.any(s < 0):
        raise ValueError("scores must be nonnegative")
    total = s.sum()
    if total <= 0:
        return np.full(s.shape, 1.0 / s.size)
    return s / total


@dataclass
class PatchSampler:
    sub_window: int = 64
    patch: int = 64
    scale: int = 2
    probabilities: np.ndarray | None = field(default=None, repr=False)
    grid: tuple[int, int] = (0, 0)

    def fit(self, lr: np.ndarray, uniform: bool = False) -> "PatchSampler":
        scores = window_scores(lr, self.sub_window)
        self.grid = scores.shape
        self.probabilities = (np.full(scores.shape, 1.0 / scores.size) if uniform
                              else window_probs(scores)).ravel()
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("probabilities")
        return d


def sample_patch(lr: np.ndarray, hr: np.ndarray, sampler: PatchSampler, rng: np.random.Generator,
                 return_rect: bool = False):
    """Draw a window by probability, then a patch whose top-left lies in that window.

    The top-left is clamped so the patch fits the image; the HR crop is the
    co-located ``scale``-times larger region.
    """
    lr = np.asarray(lr)
    hr = np.asarray(hr)
    s, p = sampler.scale, sampler.patch
    if hr.shape != (lr.shape[0] * s, lr.shape[1] * s):
        raise ValueError(f"hr shape {hr.shape} is not {s} x lr shape {lr.shape}")
    if lr.shape[0] < p or lr.shape[1] < p:
        raise ValueError(f"lr {lr.shape} smaller than one {p}x{p} patch")
    if sampler.probabilities is None:
        sampler.fit(lr)
    gh, gw = sampler.grid
    k = int(rng.choice(gh * gw, p=sampler.probabilities))
    wi, wj = divmod(k, gw)
    win = sampler.sub_window
    r0, c0 = wi * win, wj * win
    r1, c1 = min(r0 + win, lr.shape[0]), min(c0 + win, lr.shape[1])
    top = min(int(rng.integers(r0, r1)), lr.shape[0] - p)
    left = min(int(rng.integers(c0, c1)), lr.shape[1] - p)
    lr_patch = lr[top:top + p, left:left + p]
    hr_patch = hr[top * s:(top + p) * s, left * s:(left + p) * s]
    if return_rect:
        return lr_patch, hr_patch, (top * s, left * s, p * s, p * s)
    return lr_patch, hr_patch


def adjacent_downsample(hr: np.ndarray, s: int) -> np.ndarray:
    """Keep every s-th row and column, starting at index 0."""
    hr = np.asarray(hr)
    if s < 1 or hr.shape[0] % s or hr.shape[1] % s:
        raise ValueError(f"shape {hr.shape} not divisible by scale {s}")
    return hr[::s, ::s].copy()


@dataclass(frozen=True)
class DegradationConfig:
    shift_max: int = 2
    blur_sigma: tuple[float, float] = (0.2, 1.0)
    noise_max: float = 0.02  # fraction of the [0, 1] range
    p_stage: float = 0.5
    enabled: tuple[str, ...] = ("shift", "rowresample", "blur", "noise")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blur_sigma"] = list(self.blur_sigma)
        d["enabled"] = list(self.enabled)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationConfig":
        d = dict(d)
        if "blur_sigma" in d:
            d["blur_sigma"] = tuple(d["blur_sigma"])
        if "enabled" in d:
            d["enabled"] = tuple(d["enabled"])
        return cls(**d)


STAGES = ("shift", "rowresample", "blur", "noise")


def displacement_degrade(lr: np.ndarray, rng: np.random.Generator, cfg: DegradationConfig = DegradationConfig(),
                         return_log: bool = False):
    """Random-order stack of row shift, row down/up-sampling, blur and noise.

    Every stage fires independently with probability ``cfg.p_stage``. All
    random draws are made up front so the draw sequence does not depend on
    which stages fire.
    """
    out = np.array(lr, dtype=float, copy=True)
    order = rng.permutation(len(STAGES))
    fire = rng.random(len(STAGES)) < cfg.p_stage
    n_even = (out.shape[0] + 1) // 2
    shifts = rng.integers(-cfg.shift_max, cfg.shift_max + 1, size=n_even)
    sigma_blur = rng.uniform(*cfg.blur_sigma)
    sigma_noise = rng.uniform(0.0, cfg.noise_max)
    noise = rng.normal(0.0, 1.0, out.shape)
    log = []
    for k in order:
        name = STAGES[k]
        if not fire[k] or name not in cfg.enabled:
            continue
        log.append(name)
        if name == "shift":
            for i, s in zip(range(0, out.shape[0], 2), shifts):
                out[i] = np.roll(out[i], int(s))
        elif name == "rowresample":
            if out.shape[0] >= 2:
                out = interpolate_rows(out, np.arange(out.shape[0]) % 2 == 0)
        elif name == "blur":
            out = ndimage.gaussian_filter(out, sigma_blur, mode="nearest")
        elif name == "noise":
            out = out + sigma_noise * noise
    if log:
        out = np.clip(out, 0.0, 1.0)
    if return_log:
        return out, log
    return out
