"""Text-aware copy-paste augmentation.

Crops of annotated words are pasted at uniformly drawn positions with
sizes drawn from the corpus box statistics, never overlapping any box
already present in the image.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import cv2
import numpy as np

from .core import TextBox, aabb_intersection
from .dataset import BoxStats, SamplePair
from .errors import ConfigError


@dataclass
class TextCpParams:
    stats: BoxStats
    n_target: int = 10
    gamma: float = 1.0
    max_attempts: int = 100
    rng_seed: int | None = None

    def __post_init__(self):
        if self.n_target < 0:
            raise ConfigError("n_target must be >= 0")
        if self.gamma <= 0:
            raise ConfigError("gamma must be > 0")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")


@dataclass(frozen=True)
class PoolEntry:
    source: str
    index: int
    box: TextBox
    long_crop: np.ndarray
    short_crop: np.ndarray | None = None


@dataclass(frozen=True)
class TextPool:
    entries: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.entries)


def _pixel_rect(box: TextBox, height: int, width: int):
    u, v, w, h = box.aabb
    x0, y0 = max(int(np.floor(u)), 0), max(int(np.floor(v)), 0)
    x1, y1 = min(int(np.ceil(u + w)), width), min(int(np.ceil(v + h)), height)
    return x0, y0, x1, y1


def build_pool(pairs: Sequence[SamplePair]) -> TextPool:
    """Collect every legible word crop (long exposure, plus the aligned short crop)."""
    entries = []
    for pair in pairs:
        h, w = pair.long.shape[:2]
        for k, box in enumerate(pair.boxes):
            if not box.legible:
                continue
            x0, y0, x1, y1 = _pixel_rect(box, h, w)
            if x1 <= x0 or y1 <= y0:
                continue
            entries.append(PoolEntry(pair.id, k, box,
                                     pair.long[y0:y1, x0:x1].copy(),
                                     pair.short[y0:y1, x0:x1].copy()))
    return TextPool(tuple(entries))


def sample_placement(params: TextCpParams, image_w, image_h, rng: np.random.Generator):
    """Raw ``(u, v, w, h)`` draw: uniform position, Gaussian size."""
    s = params.stats
    u = rng.uniform(0, image_w)
    v = rng.uniform(0, image_h)
    w = rng.normal(s.mu_w, s.sigma_w)
    h = rng.normal(s.mu_h, s.sigma_h)
    return u, v, w, h


Sampler = Callable[[TextCpParams, int, int, np.random.Generator], tuple]


def _resize(crop: np.ndarray, w: int, h: int) -> np.ndarray:
    out = cv2.resize(crop, (w, h), interpolation=cv2.INTER_LINEAR)
    return out.reshape(h, w, crop.shape[2])


def text_cp_augment(image, existing: Sequence[TextBox], pool: TextPool, params: TextCpParams,
                    rng=None, short=None, image_id: str | None = None,
                    sampler: Sampler = sample_placement):
    """Paste pool words into ``image`` until ``n_target`` boxes or attempts run out.

    Returns ``(augmented, boxes)``; when the paired ``short`` exposure is
    given, returns ``(augmented, augmented_short, boxes)`` with the aligned
    short crops pasted at the same rectangles.  Partial augmentation is a
    normal outcome.
    """
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    boxes = list(existing)
    out = np.array(image, dtype=np.float64, copy=True)
    out_short = None if short is None else np.array(short, dtype=np.float64, copy=True)
    paired = short is not None

    if len(boxes) < params.n_target and len(pool) == 0:
        raise ConfigError("text pool is empty but augmentation needs more text instances")

    H, W = out.shape[:2]
    used = {(e.source, e.index) for e in pool.entries if image_id is not None and e.source == image_id}
    attempts = 0
    while len(boxes) < params.n_target and attempts < params.max_attempts:
        attempts += 1
        available = [i for i, e in enumerate(pool.entries) if (e.source, e.index) not in used]
        if not available:
            break
        entry = pool.entries[available[rng.integers(len(available))]]
        u, v, w, h = sampler(params, W, H, rng)
        u, v, w, h = int(round(u)), int(round(v)), int(round(w)), int(round(h))
        if w < 1 or h < 1 or w / h < params.gamma or u + w > W or v + h > H:
            continue
        if any(aabb_intersection((u, v, w, h), b.aabb) > 0 for b in boxes):
            continue
        if paired and entry.short_crop is None:
            continue
        out[v:v + h, u:u + w] = _resize(entry.long_crop, w, h)
        if paired:
            out_short[v:v + h, u:u + w] = _resize(entry.short_crop, w, h)
        boxes.append(TextBox.from_aabb(u, v, w, h, transcription=entry.box.transcription))
        used.add((entry.source, entry.index))

    if paired:
        return out, out_short, boxes
    return out, boxes


def augment_pair(pair: SamplePair, pool: TextPool, params: TextCpParams, rng=None) -> SamplePair:
    long, short, boxes = text_cp_augment(pair.long, pair.boxes, pool, params, rng,
                                         short=pair.short, image_id=pair.id)
    return SamplePair(short, long, boxes, pair.id)
