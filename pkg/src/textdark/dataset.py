"""Paired short/long exposure data with ICDAR15-style text annotations."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DONT_CARE, TextBox, canonical_quad, read_image
from .errors import ConfigError, DataError, EmptyCorpusError, ParseError, SamplingExhaustedError


@dataclass
class SamplePair:
    short: np.ndarray
    long: np.ndarray
    boxes: list = field(default_factory=list)
    id: str = ""

    def __post_init__(self):
        if self.short.shape != self.long.shape:
            raise DataError(
                f"sample {self.id!r}: short {self.short.shape} vs long {self.long.shape}")
        h, w = self.long.shape[:2]
        for box in self.boxes:
            if not box.in_bounds(h, w):
                raise DataError(f"sample {self.id!r}: box {box.quad} outside {w}x{h} image")


@dataclass(frozen=True)
class BoxStats:
    mu_w: float
    mu_h: float
    sigma_w: float
    sigma_h: float
    count_legible: int = 0
    count_illegible: int = 0


# Long-exposure training-set statistics reported for the four corpora.
PAPER_BOX_STATS = {
    "sid-sony-text": BoxStats(79.270, 34.122, 123.635, 50.920, 5937, 2128),
    "sid-fuji-text": BoxStats(128.579, 57.787, 183.199, 68.466, 6213, 4534),
    "lol-text": BoxStats(23.017, 14.011, 21.105, 17.542, 613, 1423),
    "ic15": BoxStats(78.410, 29.991, 55.947, 24.183, 4468, 7418),
}


@dataclass
class PatchSpec:
    size: int = 512
    require_legible_text: bool = True
    hflip: bool = True
    vflip: bool = True
    transpose: bool = True
    min_keep_fraction: float = 0.5
    clipped_to_dontcare: bool = False
    max_draws: int = 50

    def __post_init__(self):
        if self.size < 32:
            raise ConfigError(f"patch size must be >= 32, got {self.size}")


# ------------------------------------------------------------------ parsing

def parse_icdar_line(line: str, require_transcription: bool = True) -> TextBox:
    """Parse ``x1,y1,...,x4,y4,transcription``.

    Transcriptions may themselves contain commas.  With
    ``require_transcription=False`` a bare 8-coordinate line (detector
    output) is also accepted.
    """
    text = line.strip().lstrip("﻿")
    parts = text.split(",")
    need = 9 if require_transcription else 8
    if len(parts) < need:
        raise ParseError(f"expected >= {need} comma-separated fields, got {len(parts)}: {line!r}")
    try:
        coords = [float(p) for p in parts[:8]]
    except ValueError as exc:
        raise ParseError(f"non-numeric coordinate in {line!r}") from exc
    transcription = ",".join(parts[8:])
    quad = tuple(zip(coords[0::2], coords[1::2]))
    try:
        if transcription == DONT_CARE:
            return TextBox(quad, legible=False)
        return TextBox(quad, legible=True, transcription=transcription)
    except ConfigError as exc:
        raise ParseError(f"invalid box in {line!r}: {exc}") from exc


def read_annotations(path, require_transcription: bool = True) -> list[TextBox]:
    boxes = []
    with open(path, encoding="utf-8-sig") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                boxes.append(parse_icdar_line(line, require_transcription))
            except ParseError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return boxes


def write_annotations(path, boxes: Sequence[TextBox]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for box in boxes:
            fh.write(box.to_icdar() + "\n")


def load_pair(short_path, long_path, annotation_path=None, allow_unlabeled: bool = False,
              sample_id: str | None = None) -> SamplePair:
    short_path, long_path = Path(short_path), Path(long_path)
    try:
        short = read_image(short_path)
        long = read_image(long_path)
    except FileNotFoundError as exc:
        raise DataError(f"missing image: {exc.filename}") from exc
    if short.shape != long.shape:
        raise DataError(
            f"dimension mismatch: {short_path} is {short.shape[1]}x{short.shape[0]}, "
            f"{long_path} is {long.shape[1]}x{long.shape[0]}")
    boxes: list[TextBox] = []
    if annotation_path is not None and Path(annotation_path).exists():
        boxes = read_annotations(annotation_path)
    elif not allow_unlabeled:
        raise DataError(f"missing annotation file {annotation_path}")
    return SamplePair(short, long, boxes, sample_id or long_path.stem)


@dataclass(frozen=True)
class ManifestRecord:
    short: Path
    long: Path
    annotation: Path | None
    split: str


def read_manifest(path) -> list[ManifestRecord]:
    """CSV manifest with header ``short,long,annotation,split``; paths relative to the file."""
    path = Path(path)
    base = path.parent
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"short", "long", "annotation", "split"} - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: manifest missing columns {sorted(missing)}")
        for row in reader:
            ann = row["annotation"].strip()
            records.append(ManifestRecord(base / row["short"].strip(), base / row["long"].strip(),
                                          base / ann if ann else None, row["split"].strip()))
    return records


def load_manifest(path, split: str | None = "train", allow_unlabeled: bool = False) -> list[SamplePair]:
    return [load_pair(r.short, r.long, r.annotation, allow_unlabeled,
                      sample_id=(r.annotation or r.long).stem)
            for r in read_manifest(path) if split is None or r.split == split]


# -------------------------------------------------------------- statistics

def compute_box_stats(pairs: Sequence[SamplePair], legible_only: bool = True) -> BoxStats:
    """Population mean/std of annotated box widths and heights."""
    all_boxes = [b for p in pairs for b in p.boxes]
    chosen = [b for b in all_boxes if b.legible or not legible_only]
    if not chosen:
        raise EmptyCorpusError("no boxes to compute statistics from")
    wh = np.array([b.aabb[2:] for b in chosen])
    n_leg = sum(b.legible for b in all_boxes)
    return BoxStats(float(wh[:, 0].mean()), float(wh[:, 1].mean()),
                    float(wh[:, 0].std()), float(wh[:, 1].std()),
                    n_leg, len(all_boxes) - n_leg)


# ---------------------------------------------------------------- patches

def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _clip_box(box: TextBox, x0, y0, size, spec: PatchSpec) -> TextBox | None:
    q = np.asarray(box.quad) - (x0, y0)
    clipped = np.clip(q, 0, size)
    bx, by, bw, bh = box.aabb
    iw = min(bx + bw, x0 + size) - max(bx, x0)
    ih = min(by + bh, y0 + size) - max(by, y0)
    if iw <= 0 or ih <= 0:
        return None
    if iw * ih < spec.min_keep_fraction * bw * bh:
        if box.legible and spec.clipped_to_dontcare:
            return TextBox(tuple(map(tuple, clipped)), legible=False)
        return None
    try:
        return TextBox(tuple(map(tuple, clipped)), box.legible, box.transcription)
    except ConfigError:
        return None


def transform_points(q: np.ndarray, size: int, hflip: bool, vflip: bool, transpose: bool) -> np.ndarray:
    q = np.array(q, dtype=np.float64)
    if hflip:
        q[:, 0] = size - q[:, 0]
    if vflip:
        q[:, 1] = size - q[:, 1]
    if transpose:
        q = q[:, ::-1].copy()
    return q


def transform_image(img: np.ndarray, hflip: bool, vflip: bool, transpose: bool) -> np.ndarray:
    if hflip:
        img = img[:, ::-1]
    if vflip:
        img = img[::-1]
    if transpose:
        img = np.swapaxes(img, 0, 1)
    return np.ascontiguousarray(img)


def sample_patch(pair: SamplePair, spec: PatchSpec, rng_seed=None):
    """Cut identical square windows from both exposures.

    Returns ``(short_patch, long_patch, boxes)`` with boxes clipped and
    transformed into patch coordinates.  Deterministic for a fixed seed.
    """
    rng = _rng(rng_seed)
    h, w = pair.long.shape[:2]
    size = spec.size
    if h < size or w < size:
        raise ConfigError(f"sample {pair.id!r}: {w}x{h} image smaller than {size}px patch")

    if spec.require_legible_text:
        candidates = [b for b in pair.boxes if b.legible and b.aabb[2] <= size and b.aabb[3] <= size]
        if not candidates:
            raise SamplingExhaustedError(
                f"sample {pair.id!r}: no legible box fits inside a {size}px patch")
        for _ in range(spec.max_draws):
            bx, by, bw, bh = candidates[rng.integers(len(candidates))].aabb
            lo_x, hi_x = max(0, int(np.ceil(bx + bw)) - size), min(int(np.floor(bx)), w - size)
            lo_y, hi_y = max(0, int(np.ceil(by + bh)) - size), min(int(np.floor(by)), h - size)
            if lo_x <= hi_x and lo_y <= hi_y:
                x0 = int(rng.integers(lo_x, hi_x + 1))
                y0 = int(rng.integers(lo_y, hi_y + 1))
                break
        else:
            raise SamplingExhaustedError(
                f"sample {pair.id!r}: no placeable legible box after {spec.max_draws} draws")
    else:
        x0 = int(rng.integers(0, w - size + 1))
        y0 = int(rng.integers(0, h - size + 1))

    flips = (spec.hflip and rng.random() < 0.5,
             spec.vflip and rng.random() < 0.5,
             spec.transpose and rng.random() < 0.5)

    short = transform_image(pair.short[y0:y0 + size, x0:x0 + size], *flips)
    long = transform_image(pair.long[y0:y0 + size, x0:x0 + size], *flips)
    boxes = []
    for box in pair.boxes:
        clipped = _clip_box(box, x0, y0, size, spec)
        if clipped is None:
            continue
        quad = canonical_quad(transform_points(clipped.quad, size, *flips))
        boxes.append(TextBox(quad, clipped.legible, clipped.transcription))
    return short, long, boxes
