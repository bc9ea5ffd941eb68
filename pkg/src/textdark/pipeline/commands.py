"""Batch commands behind the CLI: inference, synthesis, augmentation, evaluation."""
from __future__ import annotations

import json
import logging
import shutil
from pathlib import Path

import numpy as np
import torch

from ..core import read_image, write_image
from ..dataset import (
    PAPER_BOX_STATS,
    SamplePair,
    compute_box_stats,
    load_manifest,
    read_annotations,
    write_annotations,
)
from ..enhancer import Enhancer, EnhancerConfig, input_edge_provider
from ..errors import ConfigError, DataError, EmptyCorpusError
from ..metrics import (
    EvalReport,
    evaluate_detection,
    psnr,
    spotting_records,
    ssim,
    word_accuracy,
)
from ..core import rgb_to_lightness
from ..synthdce import CurveNet, CurveNetConfig, synthesize
from ..textcp import TextCpParams, augment_pair, build_pool
from .checkpoint import file_sha256, load_checkpoint
from .config import RunConfig, dump_config
from .train import torch_dtype, train_enhancer, train_synth

log = logging.getLogger(__name__)

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def list_images(root, pattern: str = "*") -> list[Path]:
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(p for p in root.rglob(pattern) if p.suffix.lower() in IMAGE_EXTS and p.is_file())


def _rel(path: Path, root: Path) -> Path:
    return Path(path.name) if root.is_file() else path.relative_to(root)


# ------------------------------------------------------------- inference

def load_enhancer(path) -> tuple[Enhancer, dict]:
    payload = load_checkpoint(path, "enhancer")
    cfg = payload["config"]
    model = Enhancer(EnhancerConfig(**cfg["enhancer"])).to(torch_dtype(cfg["dtype"]))
    model.load_state_dict(payload["model"])
    model.eval()
    return model, cfg


def load_synth(path) -> tuple[CurveNet, dict]:
    payload = load_checkpoint(path, "synth")
    cfg = payload["config"]
    model = CurveNet(CurveNetConfig(**cfg["curve_net"])).to(torch_dtype(cfg["dtype"]))
    model.load_state_dict(payload["model"])
    model.eval()
    return model, cfg


def pad_to_multiple(t: torch.Tensor, k: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad the bottom/right so both sides are multiples of ``k``."""
    h, w = t.shape[-2:]
    ph, pw = (-h) % k, (-w) % k
    if ph == 0 and pw == 0:
        return t, (h, w)
    if ph >= h or pw >= w:  # reflect needs pad < size
        return torch.nn.functional.pad(t, (0, pw, 0, ph), mode="replicate"), (h, w)
    return torch.nn.functional.pad(t, (0, pw, 0, ph), mode="reflect"), (h, w)


def _forward(model: Enhancer, x: torch.Tensor, e: torch.Tensor):
    k = model.cfg.divisor
    xp, (h, w) = pad_to_multiple(x, k)
    ep, _ = pad_to_multiple(e, k)
    with torch.no_grad():
        out = model(xp, ep)
    return out.enhanced[..., :h, :w], out.fused_edge[..., :h, :w]


def _ramp(n: int, overlap: int, at_start: bool, at_end: bool) -> np.ndarray:
    w = np.ones(n)
    if overlap > 0:
        r = (np.arange(overlap) + 0.5) / overlap
        if not at_start:
            w[:overlap] = np.minimum(w[:overlap], r)
        if not at_end:
            w[n - overlap:] = np.minimum(w[n - overlap:], r[::-1])
    return w


def _tile_starts(size: int, tile: int, overlap: int) -> list[int]:
    if size <= tile:
        return [0]
    stride = tile - overlap
    starts = list(range(0, size - tile, stride))
    starts.append(size - tile)
    return starts


def enhance_tensor(model: Enhancer, x: torch.Tensor, e: torch.Tensor,
                   tile: int | None = None, overlap: int = 64):
    """Full-frame or tiled inference; returns ``(enhanced, fused_edge)`` at the input size."""
    if tile is None:
        return _forward(model, x, e)
    if tile <= overlap:
        raise ConfigError(f"tile ({tile}) must be larger than overlap ({overlap})")
    h, w = x.shape[-2:]
    acc_x = torch.zeros_like(x)
    acc_e = torch.zeros_like(e)
    weight = torch.zeros((1, 1, h, w), dtype=x.dtype)
    ys, xs = _tile_starts(h, tile, overlap), _tile_starts(w, tile, overlap)
    for y0 in ys:
        for x0 in xs:
            y1, x1 = min(y0 + tile, h), min(x0 + tile, w)
            out_x, out_e = _forward(model, x[..., y0:y1, x0:x1], e[..., y0:y1, x0:x1])
            wy = _ramp(y1 - y0, overlap, y0 == 0, y1 == h)
            wx = _ramp(x1 - x0, overlap, x0 == 0, x1 == w)
            wt = torch.from_numpy(np.outer(wy, wx)).to(x.dtype)[None, None]
            acc_x[..., y0:y1, x0:x1] += wt * out_x
            acc_e[..., y0:y1, x0:x1] += wt * out_e
            weight[..., y0:y1, x0:x1] += wt
    return acc_x / weight, acc_e / weight


def enhance_image(model: Enhancer, img: np.ndarray, tile=None, overlap=64, dtype=torch.float64):
    x = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None].to(dtype)
    e = torch.from_numpy(input_edge_provider(img))[None, None].to(dtype)
    out_x, out_e = enhance_tensor(model, x, e, tile, overlap)
    return (out_x[0].to(torch.float64).numpy().transpose(1, 2, 0),
            out_e[0, 0].to(torch.float64).numpy())


def enhance_command(cfg: RunConfig) -> Path:
    inf = cfg.inference
    model, saved = load_enhancer(inf.checkpoint)
    dtype = torch_dtype(saved["dtype"])
    src = Path(inf.input)
    files = list_images(src, inf.pattern)
    if not files:
        raise EmptyCorpusError(f"no images under {src}")
    out = Path(cfg.out)
    for path in files:
        rel = _rel(path, src)
        img = read_image(path)
        enhanced, edge = enhance_image(model, img, inf.tile, inf.overlap, dtype)
        write_image(out / "enhanced" / rel.with_suffix(".png"), enhanced)
        if inf.write_edges:
            write_image(out / "edges" / rel.with_suffix(".png"), edge)
        if inf.panels:
            write_image(out / "panels" / rel.with_suffix(".png"), np.concatenate([img, enhanced], axis=1))
        log.info("enhanced %s", rel)
    return out


# ------------------------------------------------------------- synthesis

def synthesize_command(cfg: RunConfig) -> Path:
    """Darken every long-exposure image under ``inference.input`` into a mirrored tree.

    Non-image files (annotations, manifests) are copied unchanged; each
    output image gets a ``.json`` provenance sidecar.
    """
    inf = cfg.inference
    model, saved = load_synth(inf.checkpoint)
    dtype = torch_dtype(saved["dtype"])
    model_hash = file_sha256(inf.checkpoint)
    src = Path(inf.input)
    out = Path(cfg.out) / "synthesized"
    files = list_images(src)
    if not files:
        raise EmptyCorpusError(f"no images under {src}")
    if src.is_dir():
        for p in sorted(src.rglob("*")):
            if p.is_file() and p.suffix.lower() not in IMAGE_EXTS:
                dst = out / p.relative_to(src)
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(p, dst)
    for path in files:
        rel = _rel(path, src).with_suffix(".png")
        y = torch.from_numpy(np.ascontiguousarray(read_image(path).transpose(2, 0, 1)))[None].to(dtype)
        with torch.no_grad():
            dark = synthesize(y, model)[0].to(torch.float64).numpy().transpose(1, 2, 0)
        write_image(out / rel, dark)
        sidecar = {"source": str(path), "model_sha256": model_hash, "clamp": True}
        (out / rel).with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return out


# ---------------------------------------------------------- augmentation

def augment_command(cfg: RunConfig) -> Path:
    """Write Text-CP augmented copies of the training split plus a manifest."""
    pairs = load_manifest(cfg.data.manifest, cfg.data.split)
    if not pairs:
        raise EmptyCorpusError(f"split {cfg.data.split!r} of {cfg.data.manifest} is empty")
    t = cfg.textcp
    stats = compute_box_stats(pairs) if t.stats == "data" else PAPER_BOX_STATS[t.stats]
    params = TextCpParams(stats, t.n_target, t.gamma, t.max_attempts)
    pool = build_pool(pairs)
    rng = np.random.default_rng(cfg.seed)
    out = Path(cfg.out) / "augmented"
    rows = ["short,long,annotation,split"]
    for pair in pairs:
        for k in range(cfg.augment.copies):
            aug: SamplePair = augment_pair(pair, pool, params, rng)
            stem = f"{pair.id}_cp{k}"
            write_image(out / f"{stem}_short.png", aug.short)
            write_image(out / f"{stem}_long.png", aug.long)
            write_annotations(out / f"{stem}.txt", aug.boxes)
            rows.append(f"{stem}_short.png,{stem}_long.png,{stem}.txt,{cfg.data.split}")
    (out / "manifest.csv").write_text("\n".join(rows) + "\n")
    return out


# ------------------------------------------------------------ evaluation

def _index(root: Path, pattern: str, suffix: str) -> dict[str, Path]:
    out = {}
    for p in list_images(root, pattern):
        key = str(_rel(p, root).with_suffix(""))
        if suffix and key.endswith(suffix):
            key = key[: -len(suffix)]
        out[key] = p
    return out


def evaluate_command(cfg: RunConfig) -> EvalReport:
    ev = cfg.evaluate
    preds = _index(Path(ev.pred_dir), ev.pred_pattern, ev.pred_suffix)
    gts = _index(Path(ev.gt_dir), ev.gt_pattern, ev.gt_suffix)
    if set(preds) != set(gts):
        missing = sorted(set(gts) - set(preds))
        extra = sorted(set(preds) - set(gts))
        raise DataError(f"prediction/ground-truth trees differ: missing predictions {missing}, "
                        f"predictions without ground truth {extra}")
    if not preds:
        raise EmptyCorpusError(f"no images under {ev.pred_dir}")

    per_image, ps, ss, ls = [], [], [], []
    for key in sorted(preds):
        a, b = read_image(preds[key]), read_image(gts[key])
        if a.shape != b.shape:
            raise DataError(f"{key}: prediction {a.shape} vs ground truth {b.shape}")
        p, s, l = psnr(a, b), ssim(a, b), float(rgb_to_lightness(a).mean())
        ps.append(p), ss.append(s), ls.append(l)
        per_image.append({"id": key, "psnr": p, "ssim": s, "avg_lightness": l})

    report = EvalReport(psnr=float(np.mean(ps)), ssim=float(np.mean(ss)), avg_lightness=float(np.mean(ls)),
                        counts={"images": len(preds)})

    def ann(dirpath, key, require_text):
        f = Path(dirpath) / f"{key}.txt"
        if not f.is_file():
            raise DataError(f"missing annotation file {f}")
        return read_annotations(f, require_transcription=require_text)

    if ev.annotations is None:
        report.skipped += ["detection: no ground-truth annotations", "recognition: no ground-truth annotations"]
    else:
        gt_boxes = {k: ann(ev.annotations, k, True) for k in sorted(preds)}
        if ev.detections is not None:
            samples = [(ann(ev.detections, k, False), gt_boxes[k]) for k in sorted(preds)]
            scores, totals = evaluate_detection(samples, mode=ev.iou_mode)
            report.precision, report.recall, report.hmean = scores
            report.counts.update(tp=totals.tp, fp=totals.fp, legible_gt=totals.gt)
        else:
            report.skipped.append("detection: no detection files")
        if ev.recognition is not None:
            records, n_words = [], 0
            for k in sorted(preds):
                recs = spotting_records(ann(ev.recognition, k, True), gt_boxes[k])
                records += recs
                n_words += sum(g.legible for g in gt_boxes[k])
            report.word_accuracy = word_accuracy(records, n_words)
            report.counts["words"] = n_words
        else:
            report.skipped.append("recognition: no recognition files")

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.table())
    (out / "report.json").write_text(json.dumps(
        {"aggregate": report.to_dict(),
         "per_image": [{k: ("inf" if isinstance(v, float) and np.isinf(v) else v) for k, v in r.items()}
                       for r in per_image]},
        indent=2, sort_keys=True) + "\n")
    return report


# -------------------------------------------------------------- dispatch

def run(cfg: RunConfig):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.resolved.yaml")
    if cfg.task == "train-enhance":
        return train_enhancer(cfg)
    if cfg.task == "train-synth":
        return train_synth(cfg)
    if cfg.task == "enhance":
        return enhance_command(cfg)
    if cfg.task == "synthesize":
        return synthesize_command(cfg)
    if cfg.task == "augment":
        return augment_command(cfg)
    if cfg.task == "evaluate":
        return evaluate_command(cfg)
    raise ConfigError(f"unknown task {cfg.task!r}")
