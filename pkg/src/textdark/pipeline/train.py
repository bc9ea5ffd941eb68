"""Seeded, resumable training loops for the enhancer and the curve synthesizer.

All randomness (batch order, patch windows, flips, copy-paste draws) comes
from one ``numpy.random.Generator`` seeded by the run seed, and its state
is checkpointed alongside the weights and Adam moments, so a resumed run
continues the exact loss trajectory of an uninterrupted one.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..core import canny_edges
from ..dataset import PAPER_BOX_STATS, SamplePair, compute_box_stats, load_manifest, sample_patch
from ..enhancer import build_enhancer, input_edge_provider
from ..errors import ConfigError, EmptyCorpusError, NumericError
from ..losses import (
    ENHANCEMENT_TERMS,
    ContrastTextScorer,
    edge_reconstruction_loss,
    ms_ssim_loss,
    smooth_l1,
    text_detection_loss,
    total_enhancement_loss,
)
from ..synthdce import SYNTH_TERMS, build_curve_net, synthesis_losses, total_synthesis_loss
from ..textcp import TextCpParams, augment_pair, build_pool
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, Schedule, to_dict

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def lr_schedule(epoch: int, sched: Schedule) -> float:
    """Piecewise-constant rate: ``lr`` before ``lr_decay_epoch``, ``lr_after_decay`` from it on."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    if sched.lr_decay_epoch is not None and epoch >= sched.lr_decay_epoch:
        return sched.lr_after_decay
    return sched.lr


def torch_dtype(name: str) -> torch.dtype:
    return {"float64": torch.float64, "float32": torch.float32}[name]


def stack(arrays, dtype) -> torch.Tensor:
    """List of ``H x W x C`` (or ``H x W``) arrays to an ``N x C x H x W`` tensor."""
    arr = np.stack([a if a.ndim == 3 else a[..., None] for a in arrays])
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


class LossLog:
    """Append-only CSV: ``step, epoch, <terms>, total, lr``."""

    def __init__(self, path, terms: Sequence[str]):
        self.path = Path(path)
        self.columns = ["step", "epoch", *terms, "total", "lr"]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.columns)

    def truncate_after(self, step: int):
        """Drop rows past ``step`` (a resumed run rewrites them)."""
        rows = read_loss_log(self.path)
        with open(self.path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in rows:
                if int(r["step"]) <= step:
                    w.writerow([r[c] for c in self.columns])

    def append(self, row: dict):
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                                     for c in self.columns])


def read_loss_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    history: list


class _Trainer:
    kind = ""
    terms: tuple = ()

    def __init__(self, cfg: RunConfig, pairs: Sequence[SamplePair]):
        if not pairs:
            raise EmptyCorpusError("no training pairs")
        self.cfg = cfg
        self.pairs = list(pairs)
        self.dtype = torch_dtype(cfg.dtype)
        self.model = self.build_model()
        self.opt = torch.optim.Adam(self.model.parameters(), lr=lr_schedule(0, self.schedule),
                                    betas=ADAM_BETAS, eps=ADAM_EPS)
        self.rng = np.random.default_rng(cfg.seed)
        self.epoch = 0
        self.step = 0

    # subclass hooks
    schedule: Schedule

    def build_model(self):
        raise NotImplementedError

    def make_batch(self, indices):
        raise NotImplementedError

    def compute_losses(self, batch) -> tuple[dict, torch.Tensor]:
        raise NotImplementedError

    # -------------------------------------------------------------------
    def set_lr(self):
        lr = lr_schedule(self.epoch, self.schedule)
        for g in self.opt.param_groups:
            g["lr"] = lr
        return lr

    def train_step(self, batch) -> dict:
        lr = self.set_lr()
        self.model.train()
        self.opt.zero_grad(set_to_none=True)
        comps, total = self.compute_losses(batch)
        total.backward()
        # a finite loss can still have non-finite gradients; never let them reach the weights
        for name, p in self.model.named_parameters():
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient for parameter {name!r}")
        self.opt.step()
        self.step += 1
        row = {"step": self.step, "epoch": self.epoch}
        row.update({k: float(v.detach()) for k, v in comps.items()})
        row.update(total=float(total.detach()), lr=lr)
        return row

    def epoch_batches(self):
        order = self.rng.permutation(len(self.pairs))
        b = self.schedule.batch_size
        return [order[i:i + b] for i in range(0, len(order), b)]

    def run_epoch(self) -> list[dict]:
        rows = []
        for idx in self.epoch_batches():
            batch = self.make_batch(idx)
            try:
                rows.append(self.train_step(batch))
            except NumericError as exc:
                ids = ", ".join(self.pairs[i].id for i in idx)
                raise NumericError(f"epoch {self.epoch}, step {self.step + 1} (samples {ids}): {exc}") from exc
        self.epoch += 1
        return rows

    # ------------------------------------------------------------ state
    def rng_state(self) -> dict:
        return {"numpy": self.rng.bit_generator.state, "torch": torch.get_rng_state()}

    def save(self, path) -> Path:
        return save_checkpoint(path, kind=self.kind, config=to_dict(self.cfg),
                               model=self.model.state_dict(), optimizer=self.opt.state_dict(),
                               epoch=self.epoch, step=self.step, rng=self.rng_state())

    def restore(self, path):
        payload = load_checkpoint(path, self.kind)
        self.check_compatible(payload["config"])
        self.model.load_state_dict(payload["model"])
        if payload["optimizer"] is not None:
            self.opt.load_state_dict(payload["optimizer"])
        self.rng.bit_generator.state = payload["rng"]["numpy"]
        torch.set_rng_state(payload["rng"]["torch"])
        self.epoch, self.step = payload["epoch"], payload["step"]

    model_section = ""

    def check_compatible(self, saved: dict):
        mine = to_dict(self.cfg)
        for key in (self.model_section, "dtype"):
            if saved.get(key) != mine[key]:
                raise ConfigError(f"checkpoint {key} {saved.get(key)} differs from the run config {mine[key]}")

    def fit(self, out_dir, epochs: int | None = None) -> TrainResult:
        """Train to ``schedule.epochs`` (or ``epochs``), checkpointing every K epochs and at the end."""
        out = Path(out_dir)
        ckpt_dir = out / "checkpoints"
        log_ = LossLog(out / "loss_log.csv", self.terms)
        if self.schedule.resume:
            self.restore(self.schedule.resume)
            log_.truncate_after(self.step)
            log.info("resumed %s training at epoch %d", self.kind, self.epoch)
        target = self.schedule.epochs if epochs is None else epochs
        history = []
        last = ckpt_dir / "last.pt"
        while self.epoch < target:
            rows = self.run_epoch()
            for r in rows:
                log_.append(r)
            history.extend(rows)
            if self.epoch % self.schedule.checkpoint_every == 0 or self.epoch == target:
                self.save(ckpt_dir / f"epoch_{self.epoch:05d}.pt")
                self.save(last)
            if rows:
                log.info("%s epoch %d total %.6g", self.kind, self.epoch, rows[-1]["total"])
        if not last.exists():
            self.save(last)
        return TrainResult(last, log_.path, history)


class EnhancerTrainer(_Trainer):
    kind = "enhancer"
    terms = ENHANCEMENT_TERMS
    model_section = "enhancer"

    def __init__(self, cfg: RunConfig, pairs: Sequence[SamplePair]):
        self.schedule = cfg.train_enhance
        super().__init__(cfg, pairs)
        s = cfg.text_scorer
        self.scorer = ContrastTextScorer(s.window, s.sigma, s.tau).to(self.dtype)
        self.textcp = None
        if cfg.textcp.enabled:
            t = cfg.textcp
            stats = compute_box_stats(self.pairs) if t.stats == "data" else PAPER_BOX_STATS[t.stats]
            self.textcp = TextCpParams(stats, t.n_target, t.gamma, t.max_attempts)
            self.pool = build_pool(self.pairs)

    def build_model(self):
        return build_enhancer(self.cfg.enhancer, seed=self.cfg.seed, dtype=self.dtype)

    def make_batch(self, indices):
        xs, ys, es, gs = [], [], [], []
        for i in indices:
            pair = self.pairs[i]
            if self.textcp is not None:
                pair = augment_pair(pair, self.pool, self.textcp, self.rng)
            short, long, _ = sample_patch(pair, self.cfg.patch, self.rng)
            xs.append(short)
            ys.append(long)
            es.append(input_edge_provider(short))
            gs.append(canny_edges(long))
        d = self.dtype
        return stack(xs, d), stack(ys, d), stack(es, d), stack(gs, d)

    def compute_losses(self, batch):
        x, y, e, g = batch
        out = self.model(x, e)
        comps = {
            "recons": smooth_l1(out.enhanced, y),
            "text": text_detection_loss(self.scorer, out.enhanced, y),
            "ssim_ms": ms_ssim_loss(out.enhanced, y, self.cfg.ms_ssim),
            "edge": edge_reconstruction_loss(out.side_edges, out.fused_edge, g, self.cfg.edge_loss),
        }
        return comps, total_enhancement_loss(comps, self.cfg.loss)


class SynthTrainer(_Trainer):
    kind = "synth"
    terms = SYNTH_TERMS
    model_section = "curve_net"

    def __init__(self, cfg: RunConfig, pairs: Sequence[SamplePair]):
        self.schedule = cfg.train_synth
        super().__init__(cfg, pairs)

    def build_model(self):
        return build_curve_net(self.cfg.curve_net, seed=self.cfg.seed, dtype=self.dtype)

    def make_batch(self, indices):
        ys, xs = [], []
        for i in indices:
            short, long, _ = sample_patch(self.pairs[i], self.cfg.synth_patch, self.rng)
            ys.append(long)
            xs.append(short)
        return stack(ys, self.dtype), stack(xs, self.dtype)

    def compute_losses(self, batch):
        y, x = batch
        comps = synthesis_losses(self.model, y, x, self.cfg.spa)
        return comps, total_synthesis_loss(comps, self.cfg.synth_loss)


def _pairs(cfg: RunConfig):
    return load_manifest(cfg.data.manifest, cfg.data.split)


def train_enhancer(cfg: RunConfig, pairs=None) -> TrainResult:
    return EnhancerTrainer(cfg, pairs if pairs is not None else _pairs(cfg)).fit(cfg.out)


def train_synth(cfg: RunConfig, pairs=None) -> TrainResult:
    return SynthTrainer(cfg, pairs if pairs is not None else _pairs(cfg)).fit(cfg.out)
