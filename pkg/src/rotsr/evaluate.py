"""Raw-domain evaluation of SR models and interpolation baselines."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import io
from .geometry import ScanGeometry, reconstruct_scatter
from .metrics import bicubic_upsample, bilinear_upsample, mse, psnr, ssim
from .model import SRNet

BASELINES = {"bicubic": bicubic_upsample, "bilinear": bilinear_upsample}


@dataclass
class ImageMetrics:
    id: str
    psnr: float
    ssim: float
    mse: float


@dataclass
class MetricsReport:
    scale: int
    per_image: list[ImageMetrics]
    mean: dict = field(default_factory=dict)
    method: str = "model"

    def __post_init__(self):
        if not self.mean and self.per_image:
            self.mean = {k: float(np.mean([getattr(m, k) for m in self.per_image])) for k in ("psnr", "ssim", "mse")}

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "method": self.method,
            "per_image": [{k: _enc(v) for k, v in asdict(m).items()} for m in self.per_image],
            "mean": {k: _enc(v) for k, v in self.mean.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        per = [ImageMetrics(**{k: _dec(v) if k != "id" else v for k, v in m.items()}) for m in d["per_image"]]
        return cls(int(d["scale"]), per, {k: _dec(v) for k, v in d["mean"].items()}, d.get("method", "model"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _enc(v):
    # JSON has no infinity; identical images are reported as the string "inf"
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _dec(v):
    if isinstance(v, str):
        return float(v)
    return v


def model_predictor(model: SRNet):
    """Full-image inference; pads (reflect) up to a multiple of the window."""
    ws = model.cfg.window
    dtype = next(model.parameters()).dtype

    def predict(lr: np.ndarray) -> np.ndarray:
        h, w = lr.shape
        ph, pw = (-h) % ws, (-w) % ws
        x = np.pad(lr, ((0, ph), (0, pw)), mode="reflect") if (ph or pw) else lr
        with torch.no_grad():
            out = model(torch.from_numpy(np.ascontiguousarray(x))[None, None].to(dtype))
        s = model.cfg.scale
        return out[0, 0, : h * s, : w * s].double().numpy()

    return predict


def baseline_predictor(name: str, scale: int):
    try:
        fn = BASELINES[name]
    except KeyError:
        raise ValueError(f"unknown baseline {name!r}") from None
    return lambda lr: fn(lr, scale)


def evaluate(predictor, pairs, geom: ScanGeometry, scale: int, out_dir=None, method: str = "model",
             figures: bool = True) -> MetricsReport:
    """Metrics between restored and ground-truth raw images.

    ``pairs`` holds objects with ``id``, ``lr``, ``hr``; ``geom`` is the HR
    raw geometry, used for the reconstructed panels. Outputs are clipped to
    [0, 1] before scoring.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty test set")
    rows = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for p in sorted(pairs, key=lambda q: q.id):
        sr = np.clip(predictor(p.lr), 0.0, 1.0)
        if sr.shape != p.hr.shape:
            raise ValueError(f"{p.id}: prediction {sr.shape} vs ground truth {p.hr.shape}")
        rows.append(ImageMetrics(p.id, psnr(sr, p.hr), ssim(sr, p.hr), mse(sr, p.hr)))
        if out is not None:
            io.write_pgm(out / f"{p.id}_sr.pgm", io.to_uint16(sr))
            rec, _ = reconstruct_scatter(sr, geom)
            io.write_pgm(out / f"{p.id}_sr_rec.pgm", io.to_uint16(rec))
            if figures:
                from .plotting import comparison_panel
                lr_view = np.kron(p.lr, np.ones((scale, scale)))
                comparison_panel(out / f"{p.id}_panel.png", {"LR": lr_view, method: sr, "HR": p.hr}, geom)
    report = MetricsReport(scale, rows, method=method)
    if out is not None:
        report.save(out / "report.json")
        write_metrics_csv(out / "metrics.csv", report)
    return report


def write_metrics_csv(path, report: MetricsReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "psnr", "ssim", "mse"])
        for m in report.per_image:
            w.writerow([m.id, repr(m.psnr), repr(m.ssim), repr(m.mse)])
        w.writerow(["mean", repr(report.mean["psnr"]), repr(report.mean["ssim"]), repr(report.mean["mse"])])
