"""Polar <-> cartesian mapping for rotational (diameter) scans.

Row ``i`` of a raw scan is the diameter at angle ``i * angle_step``; column
``j`` is the signed radius ``j - (n_radial - 1) / 2`` in pixel units. Rows
cover at most a half turn, the signed radius covers the other half.
Cartesian images are indexed ``img[y, x]``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import torch
from scipy import ndimage


@dataclass(frozen=True)
class ScanGeometry:
    n_angles: int
    n_radial: int
    angle_step: float | None = None  # radians per row; default pi / n_angles
    radial_step: float = 10.0  # micrometers per column, metadata only
    grid_size: int | None = None
    center: tuple[float, float] | None = field(default=None)  # (cx, cy)

    def __post_init__(self):
        if self.angle_step is None:
            object.__setattr__(self, "angle_step", math.pi / self.n_angles)
        if self.grid_size is None:
            object.__setattr__(self, "grid_size", self.n_radial)
        if self.center is None:
            c = (self.grid_size - 1) / 2
            object.__setattr__(self, "center", (c, c))
        else:
            object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.n_angles < 1 or self.n_radial < 1:
            raise ValueError("n_angles and n_radial must be positive")
        if self.n_angles * self.angle_step > math.pi + 1e-9:
            raise ValueError("rows must cover at most a half turn")
        if self.grid_size < self.n_radial:
            raise ValueError("grid_size must be >= n_radial")
        cx, cy = self.center
        if not (0 <= cx <= self.grid_size - 1 and 0 <= cy <= self.grid_size - 1):
            raise ValueError("center must lie inside the grid")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_radial)

    @property
    def radius(self) -> float:
        return (self.n_radial - 1) / 2

    @property
    def full_half_turn(self) -> bool:
        return abs(self.n_angles * self.angle_step - math.pi) < 1e-9

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScanGeometry":
        d = dict(d)
        if d.get("center") is not None:
            d["center"] = tuple(d["center"])
        return cls(**d)

    def scaled(self, s: int) -> "ScanGeometry":
        """Geometry of an adjacent-downsampled raw scan (every s-th row and column)."""
        return ScanGeometry(
            n_angles=-(-self.n_angles // s),
            n_radial=-(-self.n_radial // s),
            angle_step=self.angle_step * s,
            radial_step=self.radial_step * s,
            grid_size=-(-self.grid_size // s),
        )


def polar_coords(geom: ScanGeometry, row, col):
    """Cartesian (x, y) of raw sample(s) at (row, col). Accepts scalars or arrays."""
    row_a = np.asarray(row)
    col_a = np.asarray(col)
    if np.any(row_a < 0) or np.any(row_a >= geom.n_angles) or np.any(col_a < 0) or np.any(col_a >= geom.n_radial):
        raise IndexError(f"(row, col) outside raw shape {geom.shape}")
    theta = row_a * geom.angle_step
    r = col_a - geom.radius
    cx, cy = geom.center
    x = cx + r * np.cos(theta)
    y = cy + r * np.sin(theta)
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def cartesian_to_polar(geom: ScanGeometry, x, y):
    """Fractional (row, col) preimage of cartesian points; theta folded to [0, pi)."""
    cx, cy = geom.center
    dx = np.asarray(x, dtype=float) - cx
    dy = np.asarray(y, dtype=float) - cy
    theta = np.arctan2(dy, dx)
    rho = np.hypot(dx, dy)
    flip = (theta < 0) | (theta >= math.pi)
    theta = np.where(flip, theta + math.pi, theta)
    theta = np.where(theta >= math.pi, theta - math.pi, theta)
    r = np.where(flip, -rho, rho)
    return theta / geom.angle_step, r + geom.radius


def _check_raw(raw_shape, geom):
    if tuple(raw_shape[-2:]) != geom.shape:
        raise ValueError(f"raw shape {tuple(raw_shape[-2:])} does not match geometry {geom.shape}")


def scatter_targets(geom: ScanGeometry):
    """Nearest cartesian pixel (flat index) hit by each raw sample; -1 if off-grid."""
    rows, cols = np.meshgrid(np.arange(geom.n_angles), np.arange(geom.n_radial), indexing="ij")
    x, y = polar_coords(geom, rows, cols)
    xi = np.rint(x).astype(np.int64)
    yi = np.rint(y).astype(np.int64)
    g = geom.grid_size
    ok = (xi >= 0) & (xi < g) & (yi >= 0) & (yi < g)
    return np.where(ok, yi * g + xi, -1)


def zero_point_mask(geom: ScanGeometry) -> np.ndarray:
    """True where no raw sample lands. Depends on geometry only."""
    t = scatter_targets(geom).ravel()
    hit = np.zeros(geom.grid_size ** 2, dtype=bool)
    hit[t[t >= 0]] = True
    return ~hit.reshape(geom.grid_size, geom.grid_size)


def reconstruct_scatter(raw: np.ndarray, geom: ScanGeometry):
    """Nearest-pixel scan conversion; collisions keep the maximum.

    Returns (image, mask) with masked pixels set to 0.
    """
    raw = np.asarray(raw, dtype=float)
    _check_raw(raw.shape, geom)
    t = scatter_targets(geom).ravel()
    ok = t >= 0
    g = geom.grid_size
    out = np.full(g * g, -np.inf)
    np.maximum.at(out, t[ok], raw.ravel()[ok])
    mask = np.isneginf(out)
    out[mask] = 0.0
    return out.reshape(g, g), mask.reshape(g, g)


@dataclass(frozen=True)
class GatherTable:
    """Bilinear polar preimage for every cartesian pixel.

    ``index[p, k]`` are flat raw indices of the four neighbours of pixel ``p``
    and ``weight[p, k]`` their bilinear weights (all zero outside the disc).
    """

    geom: ScanGeometry
    index: np.ndarray  # (G*G, 4) int64
    weight: np.ndarray  # (G*G, 4) float64
    inside: np.ndarray  # (G*G,) bool


@lru_cache(maxsize=16)
def gather_table(geom: ScanGeometry) -> GatherTable:
    g = geom.grid_size
    na, nr = geom.shape
    ys, xs = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
    u, v = cartesian_to_polar(geom, xs.ravel(), ys.ravel())
    inside = (v >= -1e-12) & (v <= nr - 1 + 1e-12)
    if not geom.full_half_turn:
        inside &= u <= na - 1 + 1e-12
    v = np.clip(v, 0, nr - 1)
    r0 = np.floor(u).astype(np.int64)
    c0 = np.floor(v).astype(np.int64)
    fu = u - r0
    fv = v - c0
    r0 = np.minimum(r0, na - 1)
    c1 = np.minimum(c0 + 1, nr - 1)
    r1 = r0 + 1
    # row na is row 0 seen from the opposite side: mirror the column.
    wrap = r1 >= na
    r1 = np.where(wrap, 0, r1)
    c0b = np.where(wrap, nr - 1 - c0, c0)
    c1b = np.where(wrap, nr - 1 - c1, c1)
    index = np.stack([r0 * nr + c0, r0 * nr + c1, r1 * nr + c0b, r1 * nr + c1b], axis=1)
    weight = np.stack([(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv], axis=1)
    weight[~inside] = 0.0
    index[~inside] = 0
    index.setflags(write=False)
    weight.setflags(write=False)
    inside.setflags(write=False)
    return GatherTable(geom, index, weight, inside)


def reconstruct_gather(raw, geom: ScanGeometry):
    """Bilinear scan conversion, linear in ``raw``.

    Works on numpy arrays and on torch tensors (differentiable); leading batch
    dimensions are kept. Pixels outside the scan disc are zero.
    """
    _check_raw(raw.shape, geom)
    tab = gather_table(geom)
    g = geom.grid_size
    lead = tuple(raw.shape[:-2])
    if isinstance(raw, torch.Tensor):
        idx = torch.from_numpy(tab.index.copy()).to(raw.device)
        w = torch.from_numpy(tab.weight.copy()).to(raw.device, raw.dtype)
        flat = raw.reshape(*lead, -1)
        out = (flat[..., idx] * w).sum(-1)
        return out.reshape(*lead, g, g)
    flat = np.asarray(raw, dtype=float).reshape(*lead, -1)
    out = (flat[..., tab.index] * tab.weight).sum(-1)
    return out.reshape(*lead, g, g)


def gather_adjoint(cart: np.ndarray, geom: ScanGeometry) -> np.ndarray:
    """Transpose of ``reconstruct_gather``: spread cartesian values back to raw samples."""
    tab = gather_table(geom)
    cart = np.asarray(cart, dtype=float)
    if cart.shape != (geom.grid_size, geom.grid_size):
        raise ValueError("cartesian shape does not match geometry")
    out = np.zeros(geom.n_angles * geom.n_radial)
    np.add.at(out, tab.index.ravel(), (tab.weight * cart.reshape(-1, 1)).ravel())
    return out.reshape(geom.shape)


def sample_polar(cart: np.ndarray, geom: ScanGeometry) -> np.ndarray:
    """Bilinear samples of a cartesian image along every scan diameter (0 off-image)."""
    cart = np.asarray(cart, dtype=float)
    if min(cart.shape) < geom.grid_size:
        raise ValueError(f"cartesian image {cart.shape} smaller than grid {geom.grid_size}")
    rows, cols = np.meshgrid(np.arange(geom.n_angles), np.arange(geom.n_radial), indexing="ij")
    x, y = polar_coords(geom, rows, cols)
    return ndimage.map_coordinates(cart, [y, x], order=1, mode="constant", cval=0.0)


def sector_footprint(geom: ScanGeometry, rect) -> np.ndarray:
    """Flat cartesian indices whose four bilinear neighbours all lie in ``rect``.

    ``rect`` is (row0, col0, height, width) in raw coordinates. Sorted output,
    possibly empty.
    """
    r0, c0, h, w = (int(v) for v in rect)
    if r0 < 0 or c0 < 0 or r0 + h > geom.n_angles or c0 + w > geom.n_radial or h < 0 or w < 0:
        raise ValueError(f"rect {rect} outside raw bounds {geom.shape}")
    if h == 0 or w == 0:
        return np.zeros(0, dtype=np.int64)
    tab = gather_table(geom)
    rows = tab.index // geom.n_radial
    cols = tab.index % geom.n_radial
    ok = (rows >= r0) & (rows < r0 + h) & (cols >= c0) & (cols < c0 + w)
    ok = ok.all(axis=1) & tab.inside
    return np.flatnonzero(ok)
