"""Versioned training checkpoints shared by both trainers."""
from __future__ import annotations

import hashlib
import os
from pathlib import Path

import torch

from ..errors import ConfigError, DataError

MAGIC = "textdark-checkpoint"
VERSION = 1
KINDS = ("enhancer", "synth")


def save_checkpoint(path, *, kind: str, config: dict, model: dict, optimizer: dict | None,
                    epoch: int, step: int, rng: dict, extra: dict | None = None) -> Path:
    """Write atomically: a crash mid-write leaves the previous file intact."""
    if kind not in KINDS:
        raise ConfigError(f"unknown checkpoint kind {kind!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "magic": MAGIC, "version": VERSION, "kind": kind, "config": config,
        "model": model, "optimizer": optimizer, "epoch": epoch, "step": step,
        "rng": rng, "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path, kind: str | None = None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint {path} not found")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # corrupt zip, pickle error, ...
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != MAGIC:
        raise DataError(f"{path} is not a {MAGIC} file")
    if payload.get("version") != VERSION:
        raise DataError(f"{path}: checkpoint version {payload.get('version')} unsupported (want {VERSION})")
    if kind is not None and payload["kind"] != kind:
        raise ConfigError(f"{path} holds a {payload['kind']} model, a {kind} model is required")
    return payload


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
