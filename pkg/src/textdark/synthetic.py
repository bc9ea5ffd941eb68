"""Procedural paired scenes with text-like glyph blocks, for tests and demos."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import TextBox, aabb_intersection, write_image
from .dataset import SamplePair, write_annotations


def _glyph_block(rng, h, w, ink, paper):
    block = np.empty((h, w, 3))
    block[:] = paper
    stroke = max(1, h // 6)
    x = stroke
    while x < w - stroke:
        gw = int(rng.integers(max(2, h // 3), max(3, h // 2) + 1))
        kind = rng.integers(3)
        top, bot = stroke, h - stroke
        if kind == 0:  # vertical bar
            block[top:bot, x:x + stroke] = ink
        elif kind == 1:  # box-ish glyph
            block[top:bot, x:x + stroke] = ink
            block[top:bot, min(x + gw, w) - stroke:min(x + gw, w)] = ink
            block[top:top + stroke, x:min(x + gw, w)] = ink
        else:  # cross
            block[top:bot, x + gw // 2:x + gw // 2 + stroke] = ink
            mid = (top + bot) // 2
            block[mid:mid + stroke, x:min(x + gw, w)] = ink
        x += gw + stroke
    return block


def make_text_scene(rng, height=96, width=96, n_boxes=3, n_illegible=1,
                    darkness=0.1, noise=0.0, sample_id="scene") -> SamplePair:
    """A smooth background with non-overlapping glyph blocks.

    The short exposure is ``darkness * long`` (plus optional Gaussian noise).
    """
    rng = np.random.default_rng(rng)
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    base = rng.uniform(0.3, 0.7, size=3)
    tilt = rng.uniform(-0.2, 0.2, size=(2, 3))
    long = np.clip(base + xx[..., None] * tilt[0] + yy[..., None] * tilt[1], 0, 1)

    boxes: list[TextBox] = []
    for k in range(n_boxes + n_illegible):
        for _ in range(100):
            bh = int(rng.integers(8, max(9, height // 5)))
            bw = int(rng.integers(2 * bh, max(2 * bh + 1, min(width - 2, 5 * bh))))
            if bw >= width - 1 or bh >= height - 1:
                continue
            u = int(rng.integers(0, width - bw))
            v = int(rng.integers(0, height - bh))
            if all(aabb_intersection((u, v, bw, bh), b.aabb) == 0 for b in boxes):
                break
        else:
            continue
        ink = rng.uniform(0.0, 0.15, size=3) if rng.random() < 0.5 else rng.uniform(0.85, 1.0, size=3)
        long[v:v + bh, u:u + bw] = _glyph_block(rng, bh, bw, ink, 1.0 - ink)
        legible = k < n_boxes
        word = "".join(rng.choice(list("abcdefghijklmnop"), size=int(rng.integers(2, 7))))
        boxes.append(TextBox.from_aabb(u, v, bw, bh, legible=legible,
                                       transcription=word if legible else ""))
    short = darkness * long
    if noise:
        short = short + rng.normal(0, noise, short.shape)
    return SamplePair(np.clip(short, 0, 1), long, boxes, sample_id)


def write_corpus(root, n_train=4, n_test=2, height=96, width=96, seed=0) -> Path:
    """Write a toy paired corpus and its manifest; returns the manifest path.

    Images are quantized to 8 bits on disk like any real corpus.
    """
    root = Path(root)
    rows = ["short,long,annotation,split"]
    for i in range(n_train + n_test):
        split = "train" if i < n_train else "test"
        pair = make_text_scene(seed * 1000 + i, height, width, sample_id=f"{split}_{i:03d}")
        rel = f"{split}/{pair.id}"
        write_image(root / f"{rel}_short.png", pair.short)
        write_image(root / f"{rel}_long.png", pair.long)
        write_annotations(root / f"{rel}.txt", pair.boxes)
        rows.append(f"{rel}_short.png,{rel}_long.png,{rel}.txt,{split}")
    manifest = root / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest
