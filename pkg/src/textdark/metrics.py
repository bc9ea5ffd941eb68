"""Image quality, darkness statistics and text detection / spotting scores."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .core import TextBox, box_iou, check_image, gaussian_kernel_1d, rgb_to_lightness
from .errors import ConfigError, DataError, EmptyCorpusError, ShapeError

MATCH_IOU = 0.5


def _pair(a, b, what):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")
    return a, b


# ---------------------------------------------------------------- quality

def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit peak; ``math.inf`` when identical."""
    a, b = _pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


@dataclass
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2


def _valid_blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    r = len(kernel) // 2
    out = ndimage.correlate1d(img, kernel, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="reflect")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim(a, b, cfg: SsimConfig | None = None) -> float:
    """Single-scale Gaussian-window SSIM, averaged over valid windows and channels."""
    cfg = cfg or SsimConfig()
    a, b = _pair(a, b, "ssim")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < cfg.window:
        raise ConfigError(f"image {a.shape[:2]} is smaller than the {cfg.window}px SSIM window")
    k = gaussian_kernel_1d(cfg.window, cfg.sigma)
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _valid_blur(x, k), _valid_blur(y, k)
        vx = _valid_blur(x * x, k) - mx * mx
        vy = _valid_blur(y * y, k) - my * my
        cov = _valid_blur(x * y, k) - mx * my
        s = ((2 * mx * my + cfg.c1) * (2 * cov + cfg.c2)
             / ((mx * mx + my * my + cfg.c1) * (vx + vy + cfg.c2)))
        vals.append(s.mean())
    return float(np.mean(vals))


class Darkness(NamedTuple):
    psnr: float
    ssim: float
    lightness: float


def dataset_darkness(images: Sequence) -> Darkness:
    """Average PSNR and SSIM against black, and average L*/100."""
    if len(images) == 0:
        raise EmptyCorpusError("dataset_darkness needs at least one image")
    ps, ss, ls = [], [], []
    for img in images:
        img = check_image(img, channels=3)
        black = np.zeros_like(img)
        ps.append(psnr(img, black))
        ss.append(ssim(img, black))
        ls.append(float(rgb_to_lightness(img).mean()))
    # any identical-to-black image makes the average infinite
    return Darkness(float(np.mean(ps)), float(np.mean(ss)), float(np.mean(ls)))


# -------------------------------------------------------------- detection

@dataclass
class DetectionResult:
    boxes: list = field(default_factory=list)
    confidence: list | None = None

    def __post_init__(self):
        if self.confidence is not None and len(self.confidence) != len(self.boxes):
            raise ConfigError("one confidence per box is required")

    def check_bounds(self, width: int, height: int):
        for b in self.boxes:
            if not b.in_bounds(width, height):
                raise DataError(f"detection {b.aabb} lies outside the {width}x{height} image")


class MatchResult(NamedTuple):
    tp: int
    fp: int
    matched: list        # per prediction: index of matched GT, or None
    excluded: list       # per prediction: True when dropped as don't-care


def _iou_matrix(preds, gts, mode):
    return np.array([[box_iou(p, g, mode) for g in gts] for p in preds]).reshape(len(preds), len(gts))


def match_detections(preds, gts: Sequence[TextBox], iou_threshold: float = MATCH_IOU,
                     mode: str = "aabb", strategy: str = "greedy") -> MatchResult:
    """One-to-one matching of predictions to legible ground truth.

    A prediction whose best overlap is an illegible box, at IoU >= threshold,
    is excluded from both counts.  The rest are matched when IoU > threshold:
    ``greedy`` takes pairs by descending IoU; ``optimal`` maximizes the match
    count.
    """
    if not 0 < iou_threshold < 1:
        raise ConfigError(f"IoU threshold must be in (0, 1), got {iou_threshold}")
    if strategy not in ("greedy", "optimal"):
        raise ConfigError(f"unknown matching strategy {strategy!r}")
    pboxes = preds.boxes if isinstance(preds, DetectionResult) else list(preds)
    iou = _iou_matrix(pboxes, gts, mode)
    legible = np.array([g.legible for g in gts], dtype=bool)

    excluded = [False] * len(pboxes)
    if (~legible).any():
        for i in range(len(pboxes)):
            best_dc = iou[i, ~legible].max()
            best_leg = iou[i, legible].max() if legible.any() else -1.0
            # ties go to the legible box
            excluded[i] = bool(best_dc >= iou_threshold and best_dc > best_leg)

    candidates = iou.copy()
    candidates[:, ~legible] = -1
    candidates[np.array(excluded, dtype=bool)] = -1
    matched: list = [None] * len(pboxes)
    if strategy == "greedy":
        pairs = [(candidates[i, j], i, j) for i in range(len(pboxes)) for j in range(len(gts))
                 if candidates[i, j] > iou_threshold]
        used = set()
        for _, i, j in sorted(pairs, key=lambda t: (-t[0], t[1], t[2])):
            if matched[i] is None and j not in used:
                matched[i] = j
                used.add(j)
    elif candidates.size:
        ok = candidates > iou_threshold
        rows, cols = linear_sum_assignment(ok.astype(float), maximize=True)
        for i, j in zip(rows, cols):
            if ok[i, j]:
                matched[i] = int(j)
    tp = sum(m is not None for m in matched)
    fp = sum(1 for m, ex in zip(matched, excluded) if m is None and not ex)
    return MatchResult(tp, fp, matched, excluded)


class Scores(NamedTuple):
    precision: float
    recall: float
    hmean: float


def hmean(tp: int, fp: int, total_legible_gt: int) -> Scores:
    """Precision, recall and their harmonic mean.

    With no predictions precision is 1 if there is also no ground truth, else
    0; with no ground truth recall is 1.
    """
    if min(tp, fp, total_legible_gt) < 0:
        raise ConfigError("counts must be non-negative")
    if tp > total_legible_gt:
        raise ConfigError(f"tp={tp} exceeds the {total_legible_gt} legible ground-truth boxes")
    n_det = tp + fp
    p = tp / n_det if n_det else (1.0 if total_legible_gt == 0 else 0.0)
    r = tp / total_legible_gt if total_legible_gt else 1.0
    h = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return Scores(p, r, h)


@dataclass
class DetectionTotals:
    tp: int = 0
    fp: int = 0
    gt: int = 0

    def add(self, res: MatchResult, gts: Sequence[TextBox]):
        self.tp += res.tp
        self.fp += res.fp
        self.gt += sum(g.legible for g in gts)

    def scores(self) -> Scores:
        return hmean(self.tp, self.fp, self.gt)


def evaluate_detection(samples, iou_threshold: float = MATCH_IOU, mode: str = "aabb") -> tuple:
    """Micro-averaged scores over ``(preds, gts)`` pairs; returns ``(Scores, DetectionTotals)``."""
    totals = DetectionTotals()
    for preds, gts in samples:
        totals.add(match_detections(preds, gts, iou_threshold, mode), gts)
    return totals.scores(), totals


# --------------------------------------------------------------- spotting

class SpotRecord(NamedTuple):
    pred_box: TextBox | None
    pred_text: str
    gt_box: TextBox
    gt_text: str


def word_correct(rec: SpotRecord, iou_threshold: float = MATCH_IOU) -> bool:
    if rec.pred_box is None or not rec.gt_box.legible:
        return False
    return box_iou(rec.pred_box, rec.gt_box) > iou_threshold and rec.pred_text.casefold() == rec.gt_text.casefold()


def word_accuracy(records: Sequence[SpotRecord], n_legible_gt: int) -> float:
    """Fraction of legible ground-truth words that were located and read correctly."""
    correct = sum(word_correct(SpotRecord(*r)) for r in records)
    if correct > n_legible_gt:
        raise DataError(f"{correct} correct words but only {n_legible_gt} legible ground-truth words")
    if n_legible_gt == 0:
        return 1.0 if correct == 0 else 0.0
    return correct / n_legible_gt


def spotting_records(preds: Sequence[TextBox], gts: Sequence[TextBox]) -> list[SpotRecord]:
    """Pair every legible GT word with its highest-IoU prediction (each prediction used once)."""
    records, used = [], set()
    for g in gts:
        if not g.legible:
            continue
        best, best_iou = None, 0.0
        for i, p in enumerate(preds):
            v = box_iou(p, g)
            if i not in used and v > best_iou:
                best, best_iou = i, v
        if best is None:
            records.append(SpotRecord(None, "", g, g.transcription or ""))
        else:
            used.add(best)
            records.append(SpotRecord(preds[best], preds[best].transcription or "", g, g.transcription or ""))
    return records


# ----------------------------------------------------------------- report

@dataclass
class EvalReport:
    psnr: float | None = None
    ssim: float | None = None
    avg_lightness: float | None = None
    precision: float | None = None
    recall: float | None = None
    hmean: float | None = None
    word_accuracy: float | None = None
    lpips: float | None = None       # externally computed, merged for table parity
    counts: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        # JSON has no infinity literal
        for k, v in d.items():
            if isinstance(v, float) and math.isinf(v):
                d[k] = "inf"
        return d

    def table(self) -> str:
        rows = [("metric", "value")]
        for k in ("psnr", "ssim", "avg_lightness", "precision", "recall", "hmean", "word_accuracy", "lpips"):
            v = getattr(self, k)
            rows.append((k, "n/a" if v is None else ("inf" if math.isinf(v) else f"{v:.4f}")))
        for k, v in sorted(self.counts.items()):
            rows.append((k, str(v)))
        width = max(len(r[0]) for r in rows)
        lines = [f"{a:<{width}}  {b}" for a, b in rows]
        lines.insert(1, "-" * (width + 2 + max(len(r[1]) for r in rows)))
        lines += [f"skipped: {s}" for s in self.skipped]
        return "\n".join(lines) + "\n"
