"""Model persistence: lossless 64-bit parameter snapshots bound to the
network they were trained on.

A checkpoint is a single JSON document holding every parameter block of
both models (base64-encoded little-endian float64, bitwise round-trip),
the model/training configuration, and the fingerprint of the road
network. A SHA-256 digest over the canonical body makes any edit —
including to the fingerprint itself — detectable at load time.
"""

from __future__ import annotations

import base64
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError
from .fileio import atomic_write_text
from .kgmodel import KgConfig, KgModel
from .network import RoadNetwork
from .refine import RankConfig, RankModel

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    format_version: int
    fingerprint: dict
    config: dict                      # training configuration as given
    kg_config: dict
    rank_config: dict
    kg_params: dict[str, np.ndarray]
    rank_params: dict[str, np.ndarray]


def _encode_params(params: dict[str, np.ndarray]) -> dict:
    out = {}
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr).astype("<f8", copy=False)
        out[name] = {
            "shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii"),
        }
    return out


def _decode_params(blob: dict, where: str) -> dict[str, np.ndarray]:
    out = {}
    for name, entry in blob.items():
        try:
            shape = tuple(int(s) for s in entry["shape"])
            raw = base64.b64decode(entry["data"], validate=True)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"checkpoint {where}[{name!r}] is malformed: {exc}") from exc
        expected = 8 * int(np.prod(shape)) if shape else 8
        if len(raw) != expected:
            raise DataError(
                f"checkpoint {where}[{name!r}] is truncated: "
                f"expected {expected} bytes for shape {shape}, got {len(raw)}"
            )
        out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(
            np.float64, copy=True
        )
    return out


def _canonical_body(doc: dict) -> str:
    body = {k: v for k, v in doc.items() if k != "digest"}
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def save_checkpoint(path: str, kg: KgModel, rank: RankModel,
                    network: RoadNetwork, config) -> None:
    """Atomically write both models plus configuration to ``path``."""
    if dataclasses.is_dataclass(config):
        config = dataclasses.asdict(config)
    elif not isinstance(config, dict):
        raise UsageError("config must be a TrainConfig or a dict")
    doc = {
        "format_version": FORMAT_VERSION,
        "fingerprint": network.fingerprint(),
        "config": config,
        "kg_config": dataclasses.asdict(kg.config),
        "rank_config": dataclasses.asdict(rank.config),
        "kg_params": _encode_params(kg.params),
        "rank_params": _encode_params(rank.params),
    }
    doc["digest"] = hashlib.sha256(_canonical_body(doc).encode()).hexdigest()
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path: str, network: RoadNetwork | None = None) -> Checkpoint:
    """Read and verify a checkpoint. When ``network`` is given, refuse a
    checkpoint whose fingerprint does not match it."""
    if not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint {path} is truncated or corrupt: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"checkpoint {path} is not a checkpoint document")

    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(
            f"unsupported checkpoint format version {version!r} "
            f"(this build reads version {FORMAT_VERSION})"
        )
    missing = [k for k in ("fingerprint", "config", "kg_config", "rank_config",
                           "kg_params", "rank_params", "digest") if k not in doc]
    if missing:
        raise DataError(f"checkpoint {path} is missing fields: {missing}")
    digest = hashlib.sha256(_canonical_body(doc).encode()).hexdigest()
    if digest != doc["digest"]:
        raise DataError(
            f"checkpoint {path} failed its integrity check; "
            "the file was edited or damaged after writing"
        )
    if network is not None:
        expected = network.fingerprint()
        if doc["fingerprint"] != expected:
            raise DataError(
                "checkpoint was trained on a different network "
                f"(checkpoint {doc['fingerprint']}, current {expected})"
            )
    return Checkpoint(
        format_version=version,
        fingerprint=doc["fingerprint"],
        config=doc["config"],
        kg_config=doc["kg_config"],
        rank_config=doc["rank_config"],
        kg_params=_decode_params(doc["kg_params"], "kg_params"),
        rank_params=_decode_params(doc["rank_params"], "rank_params"),
    )


def _load_into(params: dict[str, np.ndarray], stored: dict[str, np.ndarray],
               where: str) -> None:
    if set(params) != set(stored):
        extra = sorted(set(stored) - set(params))
        missing = sorted(set(params) - set(stored))
        raise DataError(
            f"checkpoint {where} blocks do not match the model: "
            f"missing {missing}, unexpected {extra}"
        )
    for name, arr in stored.items():
        if params[name].shape != arr.shape:
            raise DataError(
                f"checkpoint {where}[{name!r}] has shape {arr.shape}, "
                f"model expects {params[name].shape}"
            )
        params[name][...] = arr


def build_models(ckpt: Checkpoint) -> tuple[KgModel, RankModel]:
    """Reconstruct the model pair a checkpoint was saved from."""
    try:
        kg_cfg = KgConfig(**ckpt.kg_config)
        rank_cfg = RankConfig(**ckpt.rank_config)
    except TypeError as exc:
        raise DataError(f"checkpoint model configuration is invalid: {exc}") from exc
    kg = KgModel(kg_cfg, seed=0)
    rank = RankModel(rank_cfg, seed=0)
    _load_into(kg.params, ckpt.kg_params, "kg_params")
    _load_into(rank.params, ckpt.rank_params, "rank_params")
    return kg, rank


def load_models(path: str, network: RoadNetwork | None = None):
    """One-step load: returns (kg, rank, checkpoint), fingerprint-checked
    against ``network`` when given."""
    ckpt = load_checkpoint(path, network=network)
    kg, rank = build_models(ckpt)
    return kg, rank, ckpt
