"""Training objectives for the enhancer.

All losses take ``N x C x H x W`` tensors and return a scalar tensor, so
they compose with autograd.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .core import LUMA_WEIGHTS, gaussian_kernel_1d
from .errors import ConfigError, NumericError, ProviderContractError, ShapeError

log = logging.getLogger(__name__)

PROB_EPS = 1e-7
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _same_shape(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


@dataclass
class LossWeights:
    recons: float = 0.2125
    text: float = 0.425
    ssim_ms: float = 0.15
    edge: float = 0.2125

    def __post_init__(self):
        for name, v in vars(self).items():
            if not 0 <= v < math.inf:
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {v}")


# ------------------------------------------------------------ smooth L1

def smooth_l1(x_hat: Tensor, y: Tensor, delta: float = 1.0) -> Tensor:
    _same_shape(x_hat, y, "smooth_l1")
    if delta <= 0:
        raise ConfigError("delta must be > 0")
    d = x_hat - y
    ad = d.abs()
    return torch.where(ad < delta, 0.5 * d * d / delta, ad - 0.5 * delta).mean()


# --------------------------------------------------------------- MS-SSIM

@dataclass
class MsSsimConfig:
    """Multi-scale SSIM settings.

    ``weights[j]`` is the exponent of the contrast/structure term at scale
    ``j`` and, at the coarsest scale, of the luminance term too.  Left as
    ``None`` it uses the standard 5-scale vector (truncated and renormalized
    for fewer scales).
    """

    scales: int = 5
    weights: Sequence[float] | None = None
    window: int = 11
    sigma: float = 1.5
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2
    exponents: tuple = field(init=False)

    def __post_init__(self):
        if self.scales < 1:
            raise ConfigError("MS-SSIM needs at least one scale")
        if self.weights is None:
            w = MS_SSIM_WEIGHTS if self.scales == 5 else MS_SSIM_WEIGHTS[:self.scales]
            total = sum(w)
            w = tuple(x / total for x in w) if self.scales != 5 else w
        else:
            w = tuple(float(x) for x in self.weights)
        if len(w) != self.scales or any(x < 0 for x in w):
            raise ConfigError(f"need {self.scales} non-negative scale weights, got {w}")
        gaussian_kernel_1d(self.window, self.sigma)
        self.exponents = w

    @property
    def c3(self) -> float:
        return self.c2 / 2

    def max_scales(self, height: int, width: int) -> int:
        m, side = 0, min(height, width)
        while side >= self.window:
            m += 1
            side //= 2
        return m


def _blur(x: Tensor, kernel: Tensor) -> Tensor:
    c = x.shape[1]
    k = kernel.to(x.dtype)
    x = F.conv2d(x, k.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    return F.conv2d(x, k.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)


def ssim_maps(x: Tensor, y: Tensor, kernel: Tensor, c1: float, c2: float):
    """Luminance and contrast-structure maps over valid Gaussian windows."""
    mx, my = _blur(x, kernel), _blur(y, kernel)
    vx = _blur(x * x, kernel) - mx * mx
    vy = _blur(y * y, kernel) - my * my
    cov = _blur(x * y, kernel) - mx * my
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    cs = (2 * cov + c2) / (vx + vy + c2)
    return lum, cs


def ms_ssim(x_hat: Tensor, y: Tensor, cfg: MsSsimConfig | None = None) -> Tensor:
    cfg = cfg or MsSsimConfig()
    _same_shape(x_hat, y, "ms_ssim")
    h, w = x_hat.shape[-2:]
    feasible = cfg.max_scales(h, w)
    if feasible < cfg.scales:
        raise ConfigError(
            f"{h}x{w} image supports at most {feasible} MS-SSIM scales with a "
            f"{cfg.window}px window, {cfg.scales} requested")
    kernel = torch.from_numpy(gaussian_kernel_1d(cfg.window, cfg.sigma))
    n = x_hat.shape[0]
    result = torch.ones(n, dtype=x_hat.dtype, device=x_hat.device)
    a, b = x_hat, y
    for j, expo in enumerate(cfg.exponents):
        lum, cs = ssim_maps(a, b, kernel, cfg.c1, cfg.c2)
        if j == cfg.scales - 1:
            term = (lum * cs).reshape(n, -1).mean(1)
        else:
            term = cs.reshape(n, -1).mean(1)
            a, b = F.avg_pool2d(a, 2), F.avg_pool2d(b, 2)
        # negative means (anti-correlated structure) would make fractional powers undefined
        result = result * term.clamp_min(1e-12) ** expo
    return result.mean()


def ms_ssim_loss(x_hat: Tensor, y: Tensor, cfg: MsSsimConfig | None = None) -> Tensor:
    return 1 - ms_ssim(x_hat, y, cfg)


# -------------------------------------------------------------- text loss

class ContrastTextScorer(nn.Module):
    """Fixed, differentiable stand-in for a text region scorer.

    Scores local high-frequency luma energy, which is what glyph strokes
    produce: ``tanh(blur((luma - blur(luma))^2) / tau)``.  No trainable
    parameters.
    """

    scale = 1

    def __init__(self, window: int = 7, sigma: float = 1.5, tau: float = 0.01):
        super().__init__()
        if not tau > 0:
            raise ConfigError(f"tau must be > 0, got {tau}")
        self.register_buffer("kernel", torch.from_numpy(gaussian_kernel_1d(window, sigma)))
        self.register_buffer("luma", torch.tensor(LUMA_WEIGHTS).view(1, 3, 1, 1))
        self.pad = window // 2
        self.tau = tau

    def forward(self, img: Tensor) -> Tensor:
        luma = (img * self.luma.to(img.dtype)).sum(1, keepdim=True) if img.shape[1] == 3 else img
        p = self.pad
        blurred = _blur(F.pad(luma, (p, p, p, p), mode="replicate"), self.kernel)
        hp = luma - blurred
        energy = _blur(F.pad(hp * hp, (p, p, p, p), mode="replicate"), self.kernel)
        return torch.tanh(energy / self.tau)


def text_detection_loss(provider, x_hat: Tensor, y: Tensor) -> Tensor:
    """Mean absolute difference between region heatmaps of ``x_hat`` and ``y``."""
    _same_shape(x_hat, y, "text_detection_loss")
    r_hat, r_ref = provider(x_hat), provider(y)
    s = getattr(provider, "scale", 1)
    want = (x_hat.shape[0], 1, x_hat.shape[-2] // s, x_hat.shape[-1] // s)
    for r in (r_hat, r_ref):
        if tuple(r.shape) != want:
            raise ProviderContractError(
                f"{type(provider).__name__} produced heatmap {tuple(r.shape)}, expected {want}")
    return (r_hat - r_ref).abs().mean()


# -------------------------------------------------------------- edge loss

@dataclass
class EdgeLossParams:
    lam: float = 1.1

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError("lambda must be > 0")


def balance_weights(gt: Tensor, lam: float):
    """Per-image ``(alpha, beta)``: weights for negative and positive pixels."""
    n = gt.shape[0]
    total = gt[0].numel()
    pos = gt.reshape(n, -1).sum(1)
    neg = total - pos
    return lam * pos / total, neg / total


def balanced_edge_bce(pred: Tensor, gt: Tensor, params: EdgeLossParams | None = None,
                      reduction: str = "mean") -> Tensor:
    """Class-balanced edge cross-entropy, summed per image then divided by its pixel count.

    ``reduction="none"`` returns the per-pixel terms.
    """
    params = params or EdgeLossParams()
    _same_shape(pred, gt, "balanced_edge_bce")
    if pred.numel() == 0:
        raise ShapeError("edge maps must have at least one pixel")
    if not torch.all((pred > PROB_EPS) & (pred < 1 - PROB_EPS)):
        log.debug("clamping edge probabilities to [%g, 1 - %g]", PROB_EPS, PROB_EPS)
    p = pred.clamp(PROB_EPS, 1 - PROB_EPS)
    alpha, beta = balance_weights(gt, params.lam)
    shape = (-1,) + (1,) * (gt.dim() - 1)
    alpha, beta = alpha.view(shape).to(p.dtype), beta.view(shape).to(p.dtype)
    terms = -(alpha * (1 - gt) * torch.log(1 - p) + beta * gt * torch.log(p))
    if reduction == "none":
        return terms
    n = gt.shape[0]
    pixels = gt.shape[-1] * gt.shape[-2]
    return (terms.reshape(n, -1).sum(1) / pixels).mean()


def edge_reconstruction_loss(side_edges: Sequence[Tensor], fused: Tensor, gt: Tensor,
                             params: EdgeLossParams | None = None, expected_sides: int = 3) -> Tensor:
    if len(side_edges) != expected_sides:
        raise ConfigError(f"expected {expected_sides} side edge maps, got {len(side_edges)}")
    total = balanced_edge_bce(fused, gt, params)
    for side in side_edges:
        total = total + balanced_edge_bce(side, gt, params)
    return total


# ---------------------------------------------------------------- total

ENHANCEMENT_TERMS = ("recons", "text", "ssim_ms", "edge")


def check_finite(components: Mapping[str, object], names: Sequence[str]):
    for name in names:
        if name not in components:
            raise ConfigError(f"missing loss component {name!r}")
        v = components[name]
        v = v.detach().item() if isinstance(v, Tensor) else float(v)
        if not math.isfinite(v):
            raise NumericError(f"loss term {name!r} is not finite ({v})")


def total_enhancement_loss(components: Mapping[str, object], weights: LossWeights | None = None):
    weights = weights or LossWeights()
    check_finite(components, ENHANCEMENT_TERMS)
    return (weights.recons * components["recons"] + weights.text * components["text"]
            + weights.ssim_ms * components["ssim_ms"] + weights.edge * components["edge"])
