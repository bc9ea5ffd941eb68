"""Supervised curve estimation for synthesizing extremely dark images.

A small network predicts per-pixel, per-channel curve maps ``H`` (tanh) and
``U`` (non-negative) from a long-exposure image ``y``; the darkened result
is ``-(H + U) y^2 + (1 + H) y``.  Training pairs supply the real short
exposure as the target.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigError, ShapeError
from .losses import check_finite

ENT_EPS = 1e-12


class CurveParams(NamedTuple):
    H: Tensor  # in [-1, 1]
    U: Tensor  # >= 0


@dataclass
class SynthLossWeights:
    prox: float = 1.0
    spa: float = 20.0
    tv_H: float = 10.0
    tv_U: float = 10.0

    def __post_init__(self):
        for name, v in vars(self).items():
            if not 0 <= v < float("inf"):
                raise ConfigError(f"synthesis weight {name} must be finite and >= 0, got {v}")


@dataclass
class SpaConfig:
    region: int = 4
    alpha_s: float = 0.05

    def __post_init__(self):
        if self.region < 1:
            raise ConfigError("region must be >= 1")


@dataclass
class CurveNetConfig:
    channels: int = 32
    in_channels: int = 3

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")


# ---------------------------------------------------------------- network

class CurveNet(nn.Module):
    """Seven-layer 3x3 trunk with symmetric skip concatenations and two heads.

    Heads start at zero so an untrained model is the identity curve.
    """

    def __init__(self, cfg: CurveNetConfig | None = None):
        super().__init__()
        cfg = cfg or CurveNetConfig()
        c, cin = cfg.channels, cfg.in_channels

        def conv(i, o):
            return nn.Conv2d(i, o, 3, padding=1)

        self.c1, self.c2, self.c3, self.c4 = conv(cin, c), conv(c, c), conv(c, c), conv(c, c)
        self.c5, self.c6 = conv(2 * c, c), conv(2 * c, c)
        self.head_h, self.head_u = conv(2 * c, cin), conv(2 * c, cin)
        for head in (self.head_h, self.head_u):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, y: Tensor) -> CurveParams:
        if y.dim() != 4 or y.shape[1] != self.c1.in_channels:
            raise ShapeError(f"expected N x {self.c1.in_channels} x H x W, got {tuple(y.shape)}")
        x1 = F.relu(self.c1(y))
        x2 = F.relu(self.c2(x1))
        x3 = F.relu(self.c3(x2))
        x4 = F.relu(self.c4(x3))
        x5 = F.relu(self.c5(torch.cat([x3, x4], 1)))
        x6 = F.relu(self.c6(torch.cat([x2, x5], 1)))
        feat = torch.cat([x1, x6], 1)
        # clamp rather than relu: unit gradient at exactly 0 lets the zero-initialized head move
        return CurveParams(torch.tanh(self.head_h(feat)), self.head_u(feat).clamp(min=0))


def build_curve_net(cfg: CurveNetConfig | None = None, seed: int = 0,
                    dtype: torch.dtype = torch.float64) -> CurveNet:
    state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        return CurveNet(cfg).to(dtype)
    finally:
        torch.random.set_rng_state(state)


def curve_network_forward(y: Tensor, model: CurveNet) -> CurveParams:
    return model(y)


def apply_curve(y: Tensor, params: CurveParams, clamp: bool = True) -> Tensor:
    H, U = params
    if H.shape != y.shape or U.shape != y.shape:
        raise ShapeError(f"curve maps {tuple(H.shape)}, {tuple(U.shape)} do not match image {tuple(y.shape)}")
    out = -(H + U) * y * y + (1 + H) * y
    return out.clamp(0, 1) if clamp else out


def synthesize(y: Tensor, model: CurveNet) -> Tensor:
    """Single-pass darkening, clipped to [0, 1]."""
    return apply_curve(y, model(y), clamp=True)


# ----------------------------------------------------------------- losses

def _check_pair(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def tv_loss(z: Tensor) -> Tensor:
    """Mean of ``(|dx| + |dy|)^2`` over the sites where both forward differences exist."""
    h, w = z.shape[-2:]
    if h < 2 or w < 2:
        raise ShapeError(f"total variation needs at least 2x2, got {h}x{w}")
    dx = (z[..., :-1, 1:] - z[..., :-1, :-1]).abs()
    dy = (z[..., 1:, :-1] - z[..., :-1, :-1]).abs()
    return ((dx + dy) ** 2).mean()


def binary_entropy(p: Tensor) -> Tensor:
    """Elementwise entropy in nats, with ``0 log 0 = 0``."""
    p = p.clamp(0, 1)
    return -(p * torch.log(p.clamp_min(ENT_EPS)) + (1 - p) * torch.log((1 - p).clamp_min(ENT_EPS)))


def proximity_loss(x_hat: Tensor, x: Tensor) -> Tensor:
    """L1 + entropy of ``|x_hat - x|`` + total variation of ``x_hat - x``."""
    _check_pair(x_hat, x, "proximity_loss")
    d = x_hat - x
    ad = d.abs()
    return ad.mean() + binary_entropy(ad).mean() + tv_loss(d)


def region_means(img: Tensor, region: int) -> Tensor:
    h, w = img.shape[-2:]
    if h < region or w < region:
        raise ShapeError(f"{h}x{w} image is smaller than one {region}x{region} region")
    return F.avg_pool2d(img.mean(1, keepdim=True), region)


def spatial_consistency_loss(x_hat: Tensor, y: Tensor, cfg: SpaConfig | None = None) -> Tensor:
    """Neighbouring-region contrast of ``x_hat`` should track a log-compressed copy of ``y``'s.

    Every region visits its existing 4-neighbours (border regions have fewer),
    and the sum is divided by the number of regions.
    """
    cfg = cfg or SpaConfig()
    _check_pair(x_hat, y, "spatial_consistency_loss")
    X, Y = region_means(x_hat, cfg.region), region_means(y, cfg.region)
    total = x_hat.new_zeros(x_hat.shape[0])

    def pairs(dim):
        n = X.shape[dim]
        a, b = X.narrow(dim, 0, n - 1), X.narrow(dim, 1, n - 1)
        ya, yb = Y.narrow(dim, 0, n - 1), Y.narrow(dim, 1, n - 1)
        term = ((a - b).abs() - cfg.alpha_s * torch.log10(9 * (ya - yb).abs() + 1)) ** 2
        # each unordered pair appears once from each side
        return 2 * term.reshape(term.shape[0], -1).sum(1)

    if X.shape[-1] > 1:
        total = total + pairs(-1)
    if X.shape[-2] > 1:
        total = total + pairs(-2)
    m = X.shape[-1] * X.shape[-2]
    return (total / m).mean()


SYNTH_TERMS = ("prox", "spa", "tv_H", "tv_U")


def total_synthesis_loss(components: Mapping[str, object], weights: SynthLossWeights | None = None):
    weights = weights or SynthLossWeights()
    check_finite(components, SYNTH_TERMS)
    return (weights.prox * components["prox"] + weights.spa * components["spa"]
            + weights.tv_H * components["tv_H"] + weights.tv_U * components["tv_U"])


def synthesis_losses(model: CurveNet, y: Tensor, x: Tensor, spa: SpaConfig | None = None) -> dict:
    """Loss components for one long/short pair; ``x_hat`` is the unclamped curve output."""
    params = model(y)
    x_hat = apply_curve(y, params, clamp=False)
    return {
        "prox": proximity_loss(x_hat, x),
        "spa": spatial_consistency_loss(x_hat, y, spa),
        "tv_H": tv_loss(params.H),
        "tv_U": tv_loss(params.U),
    }
