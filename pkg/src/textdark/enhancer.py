"""Dual-encoder / dual-decoder U-Net with edge-aware attention.

The image encoder and the edge encoder run in parallel.  At each skip level
an :class:`EdgeAtt` block rescales the image features channel-wise (from
the image features themselves) and spatially (from the edge features).
The image decoder predicts the enhanced image; an edge decoder mirrors it
on the edge features, and three side heads tap both decoders to predict
edge maps that are fused by a 1x1 convolution.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .core import read_image, sobel_edges
from .errors import ConfigError, DataError, ShapeError

SIDE_OUTPUTS = 3


@dataclass
class EnhancerConfig:
    levels: int = 5
    base_channels: int = 32
    max_channels: int = 512
    side_outputs: int = SIDE_OUTPUTS
    attention_levels: Sequence[int] | None = None  # None: every level
    in_channels: int = 3

    def __post_init__(self):
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if self.side_outputs != SIDE_OUTPUTS:
            raise ConfigError(f"exactly {SIDE_OUTPUTS} side edge outputs are supported")
        if self.attention_levels is not None:
            bad = [l for l in self.attention_levels if not 0 <= l < self.levels]
            if bad:
                raise ConfigError(f"attention levels {bad} outside 0..{self.levels - 1}")

    @property
    def channels(self) -> list[int]:
        return [min(self.base_channels * 2 ** l, self.max_channels) for l in range(self.levels)]

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)


class EnhancerOutput(NamedTuple):
    enhanced: Tensor      # N x 3 x H x W
    fused_edge: Tensor    # N x 1 x H x W
    side_edges: list      # J tensors, N x 1 x H x W


# ------------------------------------------------------------- attention

class ChannelAttention(nn.Module):
    """Channel weights in (0, 1) from a spatially softmax-pooled value branch."""

    def __init__(self, channels: int, inner: int | None = None):
        super().__init__()
        inner = inner or max(channels // 2, 1)
        self.wq = nn.Conv2d(channels, 1, 1)
        self.wv = nn.Conv2d(channels, inner, 1)
        self.wz = nn.Conv2d(inner, channels, 1)

    def query_weights(self, feat: Tensor) -> Tensor:
        n = feat.shape[0]
        return torch.softmax(self.wq(feat).reshape(n, 1, -1), dim=-1)  # N x 1 x HW

    def forward(self, feat: Tensor) -> Tensor:
        n = feat.shape[0]
        v = self.wv(feat).reshape(n, self.wv.out_channels, -1)         # N x C' x HW
        q = self.query_weights(feat)
        z = torch.bmm(v, q.transpose(1, 2)).unsqueeze(-1)              # N x C' x 1 x 1
        return torch.sigmoid(self.wz(z))                                # N x C x 1 x 1


class SpatialAttention(nn.Module):
    """Per-pixel weights in (0, 1) from a channel-softmaxed pooled query."""

    def __init__(self, channels: int, inner: int | None = None):
        super().__init__()
        inner = inner or max(channels // 2, 1)
        self.wq = nn.Conv2d(channels, inner, 1)
        self.wv = nn.Conv2d(channels, inner, 1)

    def query_weights(self, feat: Tensor) -> Tensor:
        n = feat.shape[0]
        pooled = F.adaptive_avg_pool2d(self.wq(feat), 1).reshape(n, 1, -1)
        return torch.softmax(pooled, dim=-1)                            # N x 1 x C'

    def forward(self, feat: Tensor) -> Tensor:
        n, _, h, w = feat.shape
        v = self.wv(feat).reshape(n, self.wv.out_channels, -1)         # N x C' x HW
        a = torch.bmm(self.query_weights(feat), v)                     # N x 1 x HW
        return torch.sigmoid(a.reshape(n, 1, h, w))


class EdgeAtt(nn.Module):
    def __init__(self, image_channels: int, edge_channels: int | None = None):
        super().__init__()
        self.channel = ChannelAttention(image_channels)
        self.spatial = SpatialAttention(edge_channels or image_channels)

    def forward(self, feat: Tensor, edge_feat: Tensor) -> Tensor:
        if feat.shape[-2:] != edge_feat.shape[-2:]:
            raise ShapeError(
                f"image features {tuple(feat.shape[-2:])} and edge features "
                f"{tuple(edge_feat.shape[-2:])} differ in spatial size")
        return self.channel(feat) * feat + self.spatial(edge_feat) * feat


def channel_attention(feat: Tensor, module: ChannelAttention) -> Tensor:
    return module(feat)


def spatial_attention(edge_feat: Tensor, module: SpatialAttention) -> Tensor:
    return module(edge_feat)


def edge_att(feat: Tensor, edge_feat: Tensor, module: EdgeAtt) -> Tensor:
    return module(feat, edge_feat)


# ------------------------------------------------------------------ U-Net

def conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1), nn.LeakyReLU(0.2),
        nn.Conv2d(cout, cout, 3, padding=1), nn.LeakyReLU(0.2),
    )


class Up(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return self.act(self.conv(x))


class _Encoder(nn.Module):
    def __init__(self, cin: int, chans: list[int]):
        super().__init__()
        self.blocks = nn.ModuleList(
            conv_block(cin if l == 0 else chans[l - 1], c) for l, c in enumerate(chans))

    def forward(self, x) -> list[Tensor]:
        feats = []
        for l, block in enumerate(self.blocks):
            if l:
                x = F.max_pool2d(x, 2)
            x = block(x)
            feats.append(x)
        return feats


class _Decoder(nn.Module):
    def __init__(self, chans: list[int]):
        super().__init__()
        self.ups = nn.ModuleList(Up(chans[l + 1], chans[l]) for l in range(len(chans) - 1))
        self.blocks = nn.ModuleList(conv_block(2 * chans[l], chans[l]) for l in range(len(chans) - 1))

    def forward(self, skips: list[Tensor]) -> list[Tensor]:
        """Returns decoder stages from the bottleneck (coarsest) to full resolution."""
        d = skips[-1]
        stages = [d]
        for l in range(len(skips) - 2, -1, -1):
            d = self.blocks[l](torch.cat([self.ups[l](d), skips[l]], dim=1))
            stages.append(d)
        return stages


class Enhancer(nn.Module):
    def __init__(self, cfg: EnhancerConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or EnhancerConfig()
        chans = cfg.channels
        levels = range(cfg.levels) if cfg.attention_levels is None else cfg.attention_levels
        self.attention_levels = sorted(set(levels))
        self.image_encoder = _Encoder(cfg.in_channels, chans)
        self.edge_encoder = _Encoder(1, chans)
        self.attention = nn.ModuleDict({str(l): EdgeAtt(chans[l]) for l in self.attention_levels})
        self.image_decoder = _Decoder(chans)
        self.edge_decoder = _Decoder(chans)
        self.image_head = nn.Conv2d(chans[0], 3, 1)
        # three deepest decoder stages; the finest stage is reused for shallow nets
        self.side_taps = [min(j, cfg.levels - 1) for j in range(cfg.side_outputs)]
        stage_chans = chans[::-1]
        self.side_heads = nn.ModuleList(nn.Conv2d(2 * stage_chans[t], 1, 1) for t in self.side_taps)
        self.fuse = nn.Conv2d(cfg.side_outputs, 1, 1)

    def forward(self, x: Tensor, e: Tensor) -> EnhancerOutput:
        if x.shape[-2:] != e.shape[-2:]:
            raise ShapeError(f"image {tuple(x.shape[-2:])} and edge map {tuple(e.shape[-2:])} differ")
        h, w = x.shape[-2:]
        k = self.cfg.divisor
        if h % k or w % k:
            raise ShapeError(
                f"input {h}x{w} is not divisible by {k}; pad or crop to a multiple of {k}")
        img_feats = self.image_encoder(x)
        edge_feats = self.edge_encoder(e)
        skips = [self.attention[str(l)](f, g) if str(l) in self.attention else f
                 for l, (f, g) in enumerate(zip(img_feats, edge_feats))]
        img_stages = self.image_decoder(skips)
        edge_stages = self.edge_decoder(edge_feats)

        side_logits = []
        for head, t in zip(self.side_heads, self.side_taps):
            s = head(torch.cat([img_stages[t], edge_stages[t]], dim=1))
            if s.shape[-2:] != (h, w):
                s = F.interpolate(s, size=(h, w), mode="bilinear", align_corners=False)
            side_logits.append(s)
        fused = torch.sigmoid(self.fuse(torch.cat(side_logits, dim=1)))
        enhanced = torch.sigmoid(self.image_head(img_stages[-1]))
        return EnhancerOutput(enhanced, fused, [torch.sigmoid(s) for s in side_logits])


def build_enhancer(cfg: EnhancerConfig | None = None, seed: int = 0,
                   dtype: torch.dtype = torch.float64) -> Enhancer:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = Enhancer(cfg).to(dtype)
    finally:
        torch.random.set_rng_state(gen_state)
    return model


# ------------------------------------------------------------ conversions

def to_batch(img: np.ndarray, dtype=torch.float64) -> Tensor:
    """``H x W x C`` (or ``H x W``) array to a ``1 x C x H x W`` tensor."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[..., None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).to(dtype).unsqueeze(0)


def from_batch(t: Tensor) -> np.ndarray:
    """First item of a ``N x C x H x W`` tensor as an ``H x W x C`` float64 array."""
    return t[0].detach().to(torch.float64).cpu().numpy().transpose(1, 2, 0)


def input_edge_provider(x, mode: str = "classical", path=None) -> np.ndarray:
    """Edge map fed to the edge encoder.

    ``classical``: max-normalized Sobel magnitude of the luma channel.
    ``file``: a precomputed map (e.g. offline RCF output) read from ``path``.
    """
    if mode == "classical":
        return sobel_edges(x)
    if mode == "file":
        if path is None:
            raise ConfigError("file edge mode needs a path")
        try:
            edges = read_image(path, channels=1)[..., 0]
        except FileNotFoundError as exc:
            raise DataError(f"missing edge map {path}") from exc
        if edges.shape != np.shape(x)[:2]:
            raise DataError(f"edge map {path} is {edges.shape}, image is {np.shape(x)[:2]}")
        return edges
    raise ConfigError(f"unknown edge mode {mode!r}")
