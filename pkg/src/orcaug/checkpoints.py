"""Self-describing checkpoint archives for models and the quality filter."""

from __future__ import annotations

from pathlib import Path

import torch

from .errors import FormatError

_FORMAT = "orcaug-checkpoint"
_FORMAT_VERSION = 1


def save_checkpoint(path, kind: str, config: dict, state: dict, extra: dict | None = None) -> None:
    payload = {
        "format": _FORMAT,
        "format_version": _FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "state": state,
        "extra": extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path, expected_kind: str | None = None) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != _FORMAT:
        raise FormatError(f"{path} is not a recognized checkpoint archive")
    if payload.get("format_version") != _FORMAT_VERSION:
        raise FormatError(f"{path} uses unsupported checkpoint version "
                          f"{payload.get('format_version')}")
    if expected_kind is not None and payload.get("kind") != expected_kind:
        raise FormatError(f"{path} holds a {payload.get('kind')!r} checkpoint, "
                          f"expected {expected_kind!r}")
    return payload
