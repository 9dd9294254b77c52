"""Shifted-window attention super-resolution network.

Layout: two shallow convs -> residual shifted-window transformer blocks
(RSTB) -> conv + long skip -> conv to C*s^2 channels -> pixel shuffle ->
output conv. Autodiff comes from torch; every layer below is written out
explicitly rather than taken from ``torch.nn`` transformer modules.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

MASK_VALUE = -1e9


@dataclass(frozen=True)
class ModelConfig:
    n_rstb: int = 2
    n_stl_per_rstb: int = 2
    n_heads: int = 2
    dim: int = 32
    window: int = 8
    scale: int = 2
    kernel: int = 3
    mlp_ratio: float = 2.0

    def __post_init__(self):
        if self.dim % self.n_heads:
            raise ValueError(f"dim={self.dim} not divisible by n_heads={self.n_heads}")
        if self.n_stl_per_rstb % 2:
            raise ValueError("n_stl_per_rstb must be even (W-MSA / SW-MSA pairs)")
        if self.n_rstb < 1 or self.window < 1 or self.scale < 1:
            raise ValueError("n_rstb, window and scale must be >= 1")
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd")

    @classmethod
    def desk(cls, scale: int = 2) -> "ModelConfig":
        return cls(scale=scale)

    @classmethod
    def full(cls, scale: int = 2) -> "ModelConfig":
        """Full-size preset (6 RSTB x 6 STL, 6 heads, dim 180); parameter counts only."""
        return cls(n_rstb=6, n_stl_per_rstb=6, n_heads=6, dim=180, window=8, scale=scale)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# functional pieces


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Cross-correlation with zero 'same' padding. x: (B, Cin, H, W)."""
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape[1]}, kernel {weight.shape[1]}")
    kh, kw = weight.shape[-2:]
    return F.conv2d(x, weight, bias, padding=(kh // 2, kw // 2))


def pixel_shuffle(x: torch.Tensor, s: int) -> torch.Tensor:
    """(B, C*s^2, H, W) -> (B, C, H*s, W*s) with out[c, i*s+a, j*s+b] = in[c*s^2 + a*s + b, i, j]."""
    b, c, h, w = x.shape
    if c % (s * s):
        raise ValueError(f"{c} channels not divisible by s^2={s * s}")
    c_out = c // (s * s)
    x = x.reshape(b, c_out, s, s, h, w)
    return x.permute(0, 1, 4, 2, 5, 3).reshape(b, c_out, h * s, w * s)


def pixel_unshuffle(x: torch.Tensor, s: int) -> torch.Tensor:
    b, c, hs, ws = x.shape
    if hs % s or ws % s:
        raise ValueError("spatial dims not divisible by s")
    h, w = hs // s, ws // s
    x = x.reshape(b, c, h, s, w, s)
    return x.permute(0, 1, 3, 5, 2, 4).reshape(b, c * s * s, h, w)


def window_partition(x: torch.Tensor, ws: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * nW, ws*ws, C), windows in row-major order."""
    b, h, w, c = x.shape
    x = x.reshape(b, h // ws, ws, w // ws, ws, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws * ws, c)


def window_reverse(windows: torch.Tensor, ws: int, h: int, w: int) -> torch.Tensor:
    c = windows.shape[-1]
    b = windows.shape[0] // ((h // ws) * (w // ws))
    x = windows.reshape(b, h // ws, w // ws, ws, ws, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)


def relative_position_index(ws: int) -> torch.Tensor:
    """(ws^2, ws^2) index into a (2ws-1)^2 bias table, keyed by token-pair offset."""
    coords = torch.stack(torch.meshgrid(torch.arange(ws), torch.arange(ws), indexing="ij")).flatten(1)
    rel = coords[:, :, None] - coords[:, None, :] + (ws - 1)
    return rel[0] * (2 * ws - 1) + rel[1]


def shifted_window_mask(h: int, w: int, ws: int, shift: int) -> torch.Tensor:
    """(nW, ws^2, ws^2) boolean mask, True where tokens came from different regions."""
    region = torch.zeros(1, h, w, 1)
    cnt = 0
    bands = (slice(0, -ws), slice(-ws, -shift), slice(-shift, None))
    for hs in bands:
        for wsl in bands:
            region[:, hs, wsl, :] = cnt
            cnt += 1
    ids = window_partition(region, ws).squeeze(-1)
    return ids[:, :, None] != ids[:, None, :]


def attention_core(q, k, v, bias=None, mask=None):
    """softmax(q k^T / sqrt(d) + bias) v; returns (output, weights).

    q, k, v: (..., heads, n, d). bias: (heads, n, n). mask: (nW, n, n) bool,
    broadcast over a leading batch dim of size B*nW.
    """
    d = q.shape[-1]
    logits = q @ k.transpose(-2, -1) / math.sqrt(d)
    if bias is not None:
        logits = logits + bias
    if mask is not None:
        nw = mask.shape[0]
        logits = logits.reshape(-1, nw, *logits.shape[1:])
        logits = logits.masked_fill(mask[None, :, None], MASK_VALUE)
        logits = logits.reshape(-1, *logits.shape[2:])
    attn = torch.softmax(logits, dim=-1)
    return attn @ v, attn


# ---------------------------------------------------------------------------
# modules


class WindowAttention(nn.Module):
    def __init__(self, dim: int, window: int, n_heads: int):
        super().__init__()
        if dim % n_heads:
            raise ValueError("dim must be divisible by n_heads")
        self.dim, self.window, self.n_heads = dim, window, n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.bias_table = nn.Parameter(torch.zeros((2 * window - 1) ** 2, n_heads))
        self.register_buffer("rel_index", relative_position_index(window), persistent=False)
        self.last_attn = None

    def position_bias(self) -> torch.Tensor:
        n = self.window * self.window
        return self.bias_table[self.rel_index.reshape(-1)].reshape(n, n, -1).permute(2, 0, 1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        bw, n, c = x.shape
        if c != self.dim or n != self.window * self.window:
            raise ValueError(f"expected (*, {self.window ** 2}, {self.dim}), got {tuple(x.shape)}")
        hd = c // self.n_heads
        qkv = self.qkv(x).reshape(bw, n, 3, self.n_heads, hd).permute(2, 0, 3, 1, 4)
        out, attn = attention_core(qkv[0], qkv[1], qkv[2], self.position_bias(), mask)
        self.last_attn = attn.detach()
        return self.proj(out.transpose(1, 2).reshape(bw, n, c))


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class SwinLayer(nn.Module):
    """One STL; ``shift`` > 0 turns W-MSA into SW-MSA."""

    def __init__(self, dim: int, window: int, n_heads: int, shift: int, mlp_ratio: float = 2.0):
        super().__init__()
        self.window, self.shift = window, shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self._mask_cache: dict[tuple[int, int], torch.Tensor] = {}

    def _mask(self, h: int, w: int):
        if not self.shift:
            return None
        if (h, w) not in self._mask_cache:
            self._mask_cache[(h, w)] = shifted_window_mask(h, w, self.window, self.shift)
        return self._mask_cache[(h, w)]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, H, W, C)
        b, h, w, c = x.shape
        ws = self.window
        if h % ws or w % ws:
            raise ValueError(f"spatial dims {h}x{w} not divisible by window {ws}")
        y = self.norm1(x)
        if self.shift:
            y = torch.roll(y, shifts=(-self.shift, -self.shift), dims=(1, 2))
        mask = self._mask(h, w)
        y = self.attn(window_partition(y, ws), None if mask is None else mask.to(x.device))
        y = window_reverse(y, ws, h, w)
        if self.shift:
            y = torch.roll(y, shifts=(self.shift, self.shift), dims=(1, 2))
        x = x + y
        return x + self.mlp(self.norm2(x))


class RSTB(nn.Module):
    """STL stack plus trailing conv. The block residual is added by the caller."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(
            SwinLayer(cfg.dim, cfg.window, cfg.n_heads, shift=0 if i % 2 == 0 else cfg.window // 2,
                      mlp_ratio=cfg.mlp_ratio)
            for i in range(cfg.n_stl_per_rstb)
        )
        self.conv = nn.Conv2d(cfg.dim, cfg.dim, cfg.kernel, padding=cfg.kernel // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x.permute(0, 2, 3, 1)
        for layer in self.layers:
            y = layer(y)
        return conv2d(y.permute(0, 3, 1, 2), self.conv.weight, self.conv.bias)


class SRNet(nn.Module):
    UPSAMPLER_PREFIX = "conv_up."

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c, k = cfg.dim, cfg.kernel
        self.conv_first1 = nn.Conv2d(1, c, k, padding=k // 2)
        self.conv_first2 = nn.Conv2d(c, c, k, padding=k // 2)
        self.blocks = nn.ModuleList(RSTB(cfg) for _ in range(cfg.n_rstb))
        self.conv_body = nn.Conv2d(c, c, k, padding=k // 2)
        self.conv_up = nn.Conv2d(c, c * cfg.scale ** 2, k, padding=k // 2)
        self.conv_last = nn.Conv2d(c, 1, k, padding=k // 2)
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None):
        for name, p in self.named_parameters():
            with torch.no_grad():
                if name.endswith("bias") or "bias_table" in name or "norm" in name:
                    if "norm" in name and name.endswith("weight"):
                        p.fill_(1.0)
                    else:
                        p.zero_()
                elif p.dim() == 4:
                    fan_in = p.shape[1] * p.shape[2] * p.shape[3]
                    p.copy_(torch.randn(p.shape, generator=generator, dtype=p.dtype) / math.sqrt(fan_in))
                else:
                    p.copy_(_trunc_normal(p.shape, 0.02, generator, p.dtype))
        for blk in self.blocks:
            with torch.no_grad():
                blk.conv.weight.zero_()
                blk.conv.bias.zero_()

    def reset_upsampler(self, generator: torch.Generator | None = None):
        w = self.conv_up.weight
        fan_in = w.shape[1] * w.shape[2] * w.shape[3]
        with torch.no_grad():
            w.copy_(torch.randn(w.shape, generator=generator, dtype=w.dtype) / math.sqrt(fan_in))
            self.conv_up.bias.zero_()

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        f0 = conv2d(conv2d(x, self.conv_first1.weight, self.conv_first1.bias),
                    self.conv_first2.weight, self.conv_first2.bias)
        f = f0
        for blk in self.blocks:
            f = blk(f) + f
        return conv2d(f, self.conv_body.weight, self.conv_body.bias) + f0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (B, 1, H, W) LR raw patch -> (B, 1, sH, sW)."""
        if x.dim() != 4 or x.shape[1] != 1:
            raise ValueError(f"expected (B, 1, H, W), got {tuple(x.shape)}")
        ws = self.cfg.window
        if x.shape[-2] % ws or x.shape[-1] % ws:
            raise ValueError(f"input {tuple(x.shape[-2:])} not divisible by window {ws}")
        f = self.forward_features(x)
        up = pixel_shuffle(conv2d(f, self.conv_up.weight, self.conv_up.bias), self.cfg.scale)
        return conv2d(up, self.conv_last.weight, self.conv_last.bias)


def _trunc_normal(shape, std, generator, dtype):
    t = torch.randn(shape, generator=generator, dtype=dtype)
    bad = t.abs() > 2
    while bad.any():
        t[bad] = torch.randn(int(bad.sum()), generator=generator, dtype=dtype)
        bad = t.abs() > 2
    return t * std


def build_model(cfg: ModelConfig, seed: int = 0, dtype=torch.float32) -> SRNet:
    net = SRNet(cfg).to(dtype)
    net.reset_parameters(torch.Generator().manual_seed(seed))
    return net


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def sr_forward(model: SRNet, lr: torch.Tensor) -> torch.Tensor:
    """Accepts (H, W), (1, H, W) or (B, 1, H, W)."""
    squeeze = lr.dim()
    x = lr
    while x.dim() < 4:
        x = x.unsqueeze(0)
    out = model(x)
    if squeeze == 2:
        return out[0, 0]
    if squeeze == 3:
        return out[0]
    return out
