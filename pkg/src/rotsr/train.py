"""Losses, ADAM, and the patch-based training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .checkpoint import load_checkpoint, save_checkpoint
from .geometry import ScanGeometry, gather_table, sector_footprint
from .model import ModelConfig, SRNet, build_model
from .preprocess import preprocess
from .sampling import DegradationConfig, PatchSampler, adjacent_downsample, displacement_degrade, sample_patch

log = logging.getLogger(__name__)

GM_EPS = 1e-12

SOBEL_X = ((-1.0, 0.0, 1.0), (-2.0, 0.0, 2.0), (-1.0, 0.0, 1.0))


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    batch: int = 8
    patch: int = 64
    lam: float = 0.5
    seed: int = 0
    registration: bool = True
    patch_selection: bool = True
    consistency_loss: bool = True
    displacement_degradation: bool = True
    augmentation: bool = False
    max_steps: int | None = None
    patches_per_image: int = 16
    clip_norm: float = 10.0
    ckpt_every: int = 0
    median: bool = True
    sub_window: int = 64
    degradation: DegradationConfig = field(default_factory=DegradationConfig)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if isinstance(self.degradation, dict):
            object.__setattr__(self, "degradation", DegradationConfig.from_dict(self.degradation))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degradation"] = self.degradation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# losses


def sobel_torch(img: torch.Tensor):
    """Sobel pair on (..., H, W) with replicate padding."""
    lead = img.shape[:-2]
    x = img.reshape(-1, 1, *img.shape[-2:])
    kx = torch.tensor(SOBEL_X, dtype=img.dtype, device=img.device)
    k = torch.stack([kx, kx.T])[:, None]
    g = F.conv2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), k)
    return g[:, 0].reshape(*lead, *img.shape[-2:]), g[:, 1].reshape(*lead, *img.shape[-2:])


def gradient_map_torch(img: torch.Tensor) -> torch.Tensor:
    gx, gy = sobel_torch(img)
    return torch.sqrt(gx * gx + gy * gy + GM_EPS)


def l_rec(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return (sr - hr).abs().mean()


@dataclass(frozen=True)
class _ConsisPlan:
    local_index: np.ndarray  # (P, 4) flat indices into the patch
    weight: np.ndarray  # (P, 4)
    canvas_pos: np.ndarray  # (P,) flat positions in the bounding box
    box: tuple[int, int]
    eval_pos: np.ndarray  # positions whose 3x3 stencil lies inside the footprint


@lru_cache(maxsize=128)
def consistency_plan(geom: ScanGeometry, rect: tuple[int, int, int, int]) -> _ConsisPlan | None:
    """Precomputed gather restricted to the sector footprint of ``rect``."""
    fp = sector_footprint(geom, rect)
    if fp.size == 0:
        return None
    r0, c0, h, w = rect
    tab = gather_table(geom)
    idx = tab.index[fp]
    rows, cols = np.divmod(idx, geom.n_radial)
    local = (rows - r0) * w + (cols - c0)
    ys, xs = np.divmod(fp, geom.grid_size)
    y0, x0 = ys.min() - 1, xs.min() - 1
    bh, bw = ys.max() - y0 + 2, xs.max() - x0 + 2
    pos = (ys - y0) * bw + (xs - x0)
    inside = np.zeros(bh * bw, dtype=bool)
    inside[pos] = True
    core = ndimage.binary_erosion(inside.reshape(bh, bw), np.ones((3, 3), bool), border_value=0)
    return _ConsisPlan(local, tab.weight[fp], pos, (int(bh), int(bw)), np.flatnonzero(core))


def footprint_image(patch: torch.Tensor, plan: _ConsisPlan) -> torch.Tensor:
    """Cartesian bounding-box image of the footprint (zeros off-footprint)."""
    lead = patch.shape[:-2]
    flat = patch.reshape(*lead, -1)
    idx = torch.from_numpy(plan.local_index)
    w = torch.from_numpy(plan.weight).to(patch.dtype)
    vals = (flat[..., idx] * w).sum(-1)
    canvas = vals.new_zeros(*lead, plan.box[0] * plan.box[1])
    canvas = canvas.index_copy(-1, torch.from_numpy(plan.canvas_pos), vals)
    return canvas.reshape(*lead, *plan.box)


def l_consis(sr_patch: torch.Tensor, hr_patch: torch.Tensor, geom: ScanGeometry, rect) -> torch.Tensor:
    """Mean |GM(rec(SR)) - GM(rec(HR))| over the sector footprint of ``rect``.

    Only footprint pixels whose full 3x3 Sobel stencil stays inside the
    footprint contribute, so both reconstructions see identical support.
    """
    rect = tuple(int(v) for v in rect)
    if tuple(sr_patch.shape[-2:]) != rect[2:] or sr_patch.shape != hr_patch.shape:
        raise ValueError("patch shapes do not match the rectangle")
    if rect[0] + rect[2] > geom.n_angles or rect[1] + rect[3] > geom.n_radial:
        raise ValueError(f"rect {rect} outside geometry {geom.shape}")
    plan = consistency_plan(geom, rect)
    if plan is None or plan.eval_pos.size == 0:
        return sr_patch.sum() * 0.0
    gm_sr = gradient_map_torch(footprint_image(sr_patch, plan))
    gm_hr = gradient_map_torch(footprint_image(hr_patch, plan))
    lead = gm_sr.shape[:-2]
    pos = torch.from_numpy(plan.eval_pos)
    diff = (gm_sr.reshape(*lead, -1)[..., pos] - gm_hr.reshape(*lead, -1)[..., pos]).abs()
    return diff.mean()


def l_total(sr, hr, lam: float, geom: ScanGeometry | None = None, rects=None):
    """L_rec + lam * L_consis; returns (total, rec, consis).

    ``sr``/``hr`` are (B, 1, H, W) or (H, W); ``rects`` gives one raw rectangle
    per batch item (required when lam > 0).
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    rec = l_rec(sr, hr)
    if lam == 0 or geom is None:
        cons = rec.new_zeros(())
    else:
        if sr.dim() == 2:
            cons = l_consis(sr, hr, geom, rects[0] if isinstance(rects, list) else rects)
        else:
            terms = [l_consis(sr[b, 0], hr[b, 0], geom, rects[b]) for b in range(sr.shape[0])]
            cons = torch.stack(terms).mean()
    return rec + lam * cons, rec, cons


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, config: TrainConfig) -> AdamState:
    """One bias-corrected ADAM update, in place on ``params``."""
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"grad shape {tuple(g.shape)} != param shape {tuple(p.shape)}")
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(config.lr * (m / c1) / ((v / c2).sqrt() + config.eps))
    return state


# ---------------------------------------------------------------------------
# data


@dataclass
class TrainPair:
    id: str
    lr: np.ndarray
    hr: np.ndarray


@dataclass
class PairSet:
    pairs: list[TrainPair]
    geom: ScanGeometry  # geometry of the HR raw images
    scale: int


def make_pairs(hr_raws, ids, geom: ScanGeometry, scale: int, registration: bool = True,
               median: bool = True) -> PairSet:
    """Preprocess HR raw scans and derive LR partners by adjacent downsampling."""
    pairs = []
    for i, raw in zip(ids, hr_raws):
        hr = preprocess(raw, median=median, registration=registration)
        pairs.append(TrainPair(i, adjacent_downsample(hr, scale), hr))
    return PairSet(pairs, geom, scale)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: SRNet
    log: list[tuple[int, float, float, float]]
    clipped_steps: int = 0


def _global_norm(params) -> float:
    return math.sqrt(sum(float((p.grad.detach() ** 2).sum()) for p in params if p.grad is not None))


def steps_for(config: TrainConfig, n_images: int) -> int:
    if config.max_steps is not None:
        return config.max_steps
    per_epoch = math.ceil(n_images * config.patches_per_image / config.batch)
    return config.epochs * per_epoch


def train(dataset: PairSet, model: SRNet, config: TrainConfig, log_path=None, ckpt_dir=None,
          progress=None) -> TrainResult:
    if not dataset.pairs:
        raise ValueError("empty dataset")
    if model.cfg.scale != dataset.scale:
        raise ValueError(f"model scale {model.cfg.scale} != dataset scale {dataset.scale}")
    rng = np.random.default_rng(config.seed)
    samplers = [
        PatchSampler(config.sub_window, config.patch, dataset.scale).fit(p.lr, uniform=not config.patch_selection)
        for p in dataset.pairs
    ]
    params = [p for p in model.parameters() if p.requires_grad]
    state = AdamState()
    dtype = next(model.parameters()).dtype
    lam = config.lam if config.consistency_loss else 0.0
    n_steps = steps_for(config, len(dataset.pairs))
    history = []
    clipped = 0
    model.train()
    for step in range(1, n_steps + 1):
        lrs, hrs, rects, rots = [], [], [], []
        for _ in range(config.batch):
            k = int(rng.integers(len(dataset.pairs)))
            pair = dataset.pairs[k]
            lp, hp, rect = sample_patch(pair.lr, pair.hr, samplers[k], rng, return_rect=True)
            if config.displacement_degradation:
                lp = displacement_degrade(lp, rng, config.degradation)
            rot = int(rng.integers(4)) if config.augmentation else 0
            lrs.append(np.rot90(lp, rot))
            hrs.append(hp)
            rects.append(rect)
            rots.append(rot)
        x = torch.from_numpy(np.ascontiguousarray(np.stack(lrs))[:, None]).to(dtype)
        y = torch.from_numpy(np.stack(hrs)[:, None]).to(dtype)
        sr = model(x)
        if config.augmentation:
            sr = torch.stack([torch.rot90(sr[b], -r, dims=(-2, -1)) for b, r in enumerate(rots)])
        total, rec, cons = l_total(sr, y, lam, dataset.geom, rects)
        if not torch.isfinite(total):
            raise NumericError(f"non-finite loss at step {step}: rec={rec.item()} consis={cons.item()}")
        if lam == 0:
            with torch.no_grad():
                cons = l_total(sr.detach(), y, 1.0, dataset.geom, rects)[2]
        model.zero_grad(set_to_none=True)
        total.backward()
        norm = _global_norm(params)
        if not math.isfinite(norm):
            raise NumericError(f"non-finite gradient norm at step {step}")
        if norm > config.clip_norm:
            clipped += 1
            log.info("step %d: clipping gradient norm %.3g to %.3g", step, norm, config.clip_norm)
            for p in params:
                if p.grad is not None:
                    p.grad.mul_(config.clip_norm / norm)
        adam_step(params, [p.grad for p in params], state, config)
        history.append((step, rec.item(), cons.item(), total.item()))
        if progress is not None:
            progress(step, n_steps, history[-1])
        if ckpt_dir is not None and config.ckpt_every and step % config.ckpt_every == 0:
            save_checkpoint(Path(ckpt_dir) / f"step{step:06d}.ckpt", model, {"train": config.to_dict()})
    model.eval()
    if log_path is not None:
        write_loss_log(log_path, history)
    return TrainResult(model, history, clipped)


def write_loss_log(path, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "l_rec", "l_consis", "l_total"])
        for row in history:
            w.writerow([row[0], *(repr(v) for v in row[1:])])


def read_loss_log(path) -> list[tuple[int, float, float, float]]:
    with open(path, newline="") as f:
        return [(int(r["step"]), float(r["l_rec"]), float(r["l_consis"]), float(r["l_total"]))
                for r in csv.DictReader(f)]


def init_from_scale2(ckpt, target_scale: int, seed: int = 0) -> SRNet:
    """Copy every weight except the upsampling conv; that one is freshly drawn."""
    if isinstance(ckpt, SRNet):
        src = ckpt
    else:
        src, _ = load_checkpoint(ckpt)
    cfg = replace(src.cfg, scale=target_scale)
    dst = build_model(cfg, seed=seed, dtype=next(src.parameters()).dtype)
    src_state = src.state_dict()
    dst_state = dst.state_dict()
    for name, t in dst_state.items():
        if name.startswith(SRNet.UPSAMPLER_PREFIX) and target_scale != src.cfg.scale:
            continue
        if name not in src_state or src_state[name].shape != t.shape:
            raise ValueError(f"incompatible checkpoint: parameter {name}")
        dst_state[name] = src_state[name].clone()
    dst.load_state_dict(dst_state)
    if target_scale != src.cfg.scale:
        dst.reset_upsampler(torch.Generator().manual_seed(seed + 1))
    return dst


__all__ = [
    "TrainConfig", "ModelConfig", "l_rec", "l_consis", "l_total", "adam_step", "AdamState",
    "train", "init_from_scale2", "make_pairs", "PairSet", "TrainPair", "NumericError",
]
