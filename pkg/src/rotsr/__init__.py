"""Super-resolution for rotational-scan (polar raw) photoacoustic images."""

from .geometry import ScanGeometry, reconstruct_gather, reconstruct_scatter, sample_polar, zero_point_mask
from .model import ModelConfig, SRNet, build_model, sr_forward
from .train import TrainConfig, init_from_scale2, train

__version__ = "0.1.0"

__all__ = [
    "ScanGeometry", "reconstruct_gather", "reconstruct_scatter", "sample_polar", "zero_point_mask",
    "ModelConfig", "SRNet", "build_model", "sr_forward", "TrainConfig", "init_from_scale2", "train",
]
