"""Synthetic vasculature phantoms and raw rotational scans."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .geometry import ScanGeometry, sample_polar


@dataclass(frozen=True)
class PhantomParams:
    seed: int = 0
    n_trees: int = 8
    branch_depth: int = 4
    vessel_width_range: tuple[float, float] = (1.2, 5.0)
    curvature: float = 0.12
    background_level: float = 0.05
    noise_sigma: float = 0.01
    size: int = 256

    def __post_init__(self):
        lo, hi = self.vessel_width_range
        if lo <= 0 or hi < lo:
            raise ValueError("vessel widths must be positive with lo <= hi")
        if self.branch_depth < 1:
            raise ValueError("branch_depth must be >= 1")
        if self.noise_sigma < 0 or self.n_trees < 0:
            raise ValueError("noise_sigma and n_trees must be nonnegative")
        object.__setattr__(self, "vessel_width_range", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vessel_width_range"] = list(self.vessel_width_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomParams":
        d = dict(d)
        if "vessel_width_range" in d:
            d["vessel_width_range"] = tuple(d["vessel_width_range"])
        return cls(**d)


@dataclass(frozen=True)
class DisplacementModel:
    """Even-row horizontal shifts.

    kind: ``constant`` (every even row shifted by ``magnitude``), ``uniform``
    (integers drawn from [-magnitude, magnitude]) or ``walk`` (rounded random
    walk with steps in [-step, step], clipped to +-magnitude).
    """

    kind: str = "constant"
    magnitude: int = 0
    step: float = 0.5

    def __post_init__(self):
        if self.kind not in ("constant", "uniform", "walk"):
            raise ValueError(f"unknown displacement kind {self.kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def draw(self, n_rows: int, rng: np.random.Generator) -> np.ndarray:
        shifts = np.zeros(n_rows, dtype=np.int64)
        n_even = (n_rows + 1) // 2
        if self.kind == "constant":
            vals = np.full(n_even, self.magnitude, dtype=np.int64)
        elif self.kind == "uniform":
            vals = rng.integers(-self.magnitude, self.magnitude + 1, size=n_even)
        else:
            walk = np.cumsum(rng.uniform(-self.step, self.step, size=n_even))
            vals = np.rint(np.clip(walk, -self.magnitude, self.magnitude)).astype(np.int64)
        shifts[0::2] = vals
        return shifts


def _trace_branch(rng, params, start, heading, level, length, width, amp, out):
    x, y = start
    n_steps = max(int(length), 2)
    bend = 0.0
    for i in range(n_steps):
        bend = 0.8 * bend + params.curvature * rng.normal()
        heading += bend * 0.25
        x += math.cos(heading)
        y += math.sin(heading)
        if not (-10 < x < params.size + 10 and -10 < y < params.size + 10):
            break
        out.append((x, y, width, amp))
        if level + 1 < params.branch_depth and i > 4 and rng.random() < 1.5 / length:
            side = rng.choice((-1.0, 1.0))
            _trace_branch(rng, params, (x, y), heading + side * rng.uniform(0.45, 1.1), level + 1,
                          length * rng.uniform(0.45, 0.7), max(width * rng.uniform(0.55, 0.8), params.vessel_width_range[0]),
                          amp * rng.uniform(0.75, 1.0), out)
    if level + 1 < params.branch_depth:
        for side in (-1.0, 1.0):
            _trace_branch(rng, params, (x, y), heading + side * rng.uniform(0.3, 0.8), level + 1,
                          length * rng.uniform(0.45, 0.7), max(width * rng.uniform(0.55, 0.8), params.vessel_width_range[0]),
                          amp * rng.uniform(0.8, 1.0), out)


def generate_phantom(params: PhantomParams) -> np.ndarray:
    """Branching vessel trees over a constant dark background, values in [0, 1]."""
    rng = np.random.default_rng(params.seed)
    n = params.size
    vessels = np.zeros((n, n))
    pts: list[tuple[float, float, float, float]] = []
    lo, hi = params.vessel_width_range
    c = (n - 1) / 2
    for _ in range(params.n_trees):
        a = rng.uniform(0, 2 * math.pi)
        rad = rng.uniform(0.3, 0.5) * n
        start = (c + rad * math.cos(a), c + rad * math.sin(a))
        heading = a + math.pi + rng.uniform(-0.6, 0.6)
        _trace_branch(rng, params, start, heading, 0, rng.uniform(0.35, 0.6) * n,
                      rng.uniform(0.7, 1.0) * hi, rng.uniform(0.7, 1.0), pts)
    for x, y, width, amp in pts:
        sigma = max(width / 2.355, 0.35)
        rad = int(math.ceil(3 * sigma)) + 1
        x0, x1 = max(int(x) - rad, 0), min(int(x) + rad + 1, n)
        y0, y1 = max(int(y) - rad, 0), min(int(y) + rad + 1, n)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        prof = amp * np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2 * sigma * sigma))
        np.maximum(vessels[y0:y1, x0:x1], prof, out=vessels[y0:y1, x0:x1])
    b = params.background_level
    return np.clip(b + (1.0 - b) * vessels, 0.0, 1.0)


def inject_row_displacement(raw: np.ndarray, model: DisplacementModel, rng: np.random.Generator):
    """Circularly shift even rows; returns (displaced raw, per-row shifts)."""
    raw = np.asarray(raw, dtype=float)
    shifts = model.draw(raw.shape[0], rng)
    if np.any(np.abs(shifts) >= raw.shape[1]):
        raise ValueError(f"shift magnitude must be < n_radial={raw.shape[1]}")
    return apply_row_shifts(raw, shifts), shifts


def apply_row_shifts(raw: np.ndarray, shifts) -> np.ndarray:
    out = np.array(raw, dtype=float, copy=True)
    for i, s in enumerate(np.asarray(shifts)):
        if s:
            out[i] = np.roll(out[i], int(s))
    return out


def acquire(phantom: np.ndarray, geom: ScanGeometry, model: DisplacementModel,
            params: PhantomParams, rng: np.random.Generator):
    """sample_polar -> additive Gaussian noise (clipped to [0, 1]) -> row displacement."""
    raw = sample_polar(phantom, geom)
    if params.noise_sigma > 0:
        raw = np.clip(raw + rng.normal(0.0, params.noise_sigma, raw.shape), 0.0, 1.0)
    return inject_row_displacement(raw, model, rng)


def simulate_dataset(root, count: int, seed: int, geom: ScanGeometry, params: PhantomParams,
                     model: DisplacementModel, scale: int = 2, n_test: int | None = None) -> dict:
    """Write ``<root>/{train,test}/<id>_{hr,lr}.pgm`` and ``<id>_shifts.csv``.

    Image ``k`` uses phantom seed ``seed * 100003 + k`` and its own RNG stream,
    so any subset can be regenerated independently.
    """
    from . import io
    from .sampling import adjacent_downsample

    root = Path(root)
    if n_test is None:
        n_test = max(1, round(count * 0.2))
    n_train = count - n_test
    ids = []
    for k in range(count):
        split = "train" if k < n_train else "test"
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        p = PhantomParams(**{**params.to_dict(), "seed": seed * 100003 + k,
                             "vessel_width_range": params.vessel_width_range})
        rng = np.random.default_rng([seed, k])
        hr, shifts = acquire(generate_phantom(p), geom, model, p, rng)
        hr16 = io.to_uint16(hr)
        name = f"{k:04d}"
        io.write_pgm(d / f"{name}_hr.pgm", hr16)
        io.write_pgm(d / f"{name}_lr.pgm", adjacent_downsample(hr16, scale))
        io.write_shifts(d / f"{name}_shifts.csv", shifts)
        ids.append((split, name))
    return {"n_train": n_train, "n_test": n_test, "ids": ids}
