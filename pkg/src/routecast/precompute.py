"""Persisted lookup tables: the link-to-link direction classes and the
padded per-node adjacency table, bound to a network fingerprint.

Rebuilding both from the network is cheap; the artifact exists so a
pipeline can compute them once, ship them next to the corpus, and have
every later stage verify it is using tables from the same network.
"""

from __future__ import annotations

import base64
import json
import os

import numpy as np

from .errors import DataError, UsageError
from .fileio import atomic_write_text
from .network import (
    DEFAULT_DENSE_CAP,
    DEFAULT_N_D,
    DirectionMatrix,
    NaeMatrix,
    RoadNetwork,
)


def _b64(arr: np.ndarray, dtype: str) -> dict:
    arr = np.ascontiguousarray(arr).astype(dtype, copy=False)
    return {"shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _unb64(entry: dict, dtype: str, where: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in entry["shape"])
        raw = base64.b64decode(entry["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"precomputed table {where} is malformed: {exc}") from exc
    itemsize = np.dtype(dtype).itemsize
    if len(raw) != itemsize * int(np.prod(shape)):
        raise DataError(f"precomputed table {where} is truncated")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def save_precomputed(path: str, network: RoadNetwork, n_d: int = DEFAULT_N_D,
                     dense_cap: int = DEFAULT_DENSE_CAP) -> dict:
    """Compute D and A for ``network`` and write them to ``path``.

    Returns a summary dict (sizes, whether the dense direction table fit
    under ``dense_cap``).
    """
    D = DirectionMatrix(network, n_d=n_d, dense_cap=dense_cap)
    A = NaeMatrix(network)
    doc = {
        "fingerprint": network.fingerprint(),
        "n_d": int(n_d),
        "intra": _b64(D.intra, "<i2"),
        "dense": _b64(D.dense, "<i2") if D.dense is not None else None,
        "nae": {
            "pad": int(A.pad),
            "n_a": int(A.n_a),
            "table": _b64(A.table, "<i8"),
        },
    }
    atomic_write_text(path, json.dumps(doc) + "\n")
    return {
        "out": path,
        "n_d": int(n_d),
        "dense": D.dense is not None,
        "n_a": int(A.n_a),
        "n_edges": network.n_edges,
    }


def load_precomputed(path: str, network: RoadNetwork) -> tuple[DirectionMatrix, NaeMatrix]:
    """Load tables and bind them to ``network``; refuses a fingerprint
    mismatch so stale artifacts cannot silently poison a run."""
    if not os.path.exists(path):
        raise UsageError(f"precomputed file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path} is truncated or corrupt: {exc}") from exc
    for key in ("fingerprint", "n_d", "intra", "nae"):
        if key not in doc:
            raise DataError(f"{path} is missing field {key!r}")
    expected = network.fingerprint()
    if doc["fingerprint"] != expected:
        raise DataError(
            "precomputed tables were built for a different network "
            f"(artifact {doc['fingerprint']}, current {expected})"
        )
    D = DirectionMatrix(network, n_d=int(doc["n_d"]), dense_cap=0)
    D.intra = _unb64(doc["intra"], "<i2", "intra").astype(np.int16)
    if doc.get("dense") is not None:
        dense = _unb64(doc["dense"], "<i2", "dense").astype(np.int16)
        if dense.shape != (network.n_edges, network.n_edges):
            raise DataError("precomputed dense direction table has the wrong shape")
        D.dense = dense
    A = NaeMatrix(network)
    nae = doc["nae"]
    table = _unb64(nae["table"], "<i8", "nae.table")
    if table.shape != A.table.shape or int(nae["pad"]) != A.pad:
        raise DataError("precomputed adjacency table does not match the network")
    A.table = table
    A.n_a = int(nae["n_a"])
    return D, A
