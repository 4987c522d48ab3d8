"""Prediction throughput measurement.

Synthesizes a batch of connected observed windows by random walk over the
adjacency table, then times the full prediction pipeline (per-step
queries, tree expansion, reranking, top-1 refinement, final assembly)
over them. Thread limiting makes the single-core figure honest even when
the BLAS backend would otherwise parallelize the matrix products.
"""

from __future__ import annotations

import time
from contextlib import nullcontext

import numpy as np

from .errors import UsageError
from .kgmodel import GOAL_D, SCENARIOS, KgModel
from .network import DirectionMatrix, NaeMatrix, RoadNetwork
from .pipeline import predict_routes
from .refine import RankModel
from .rng import stream


def random_windows(network: RoadNetwork, A: NaeMatrix, D: DirectionMatrix,
                   count: int, gamma: int, seed: int = 0):
    """(observed, observed_dirs) for ``count`` random connected windows."""
    rng = stream(seed, "bench.windows")
    deg = (A.table != A.pad).sum(axis=1)
    if not np.any(deg > 0):
        raise UsageError("network has no outgoing edges to walk")
    edges = np.arange(network.n_edges)
    ok = deg[network.edge_end] > 0  # never walk into a sink mid-window
    cur = rng.choice(edges[ok], size=count, replace=True)
    cols = [cur]
    for _ in range(gamma - 1):
        node = network.edge_end[cols[-1]]
        pick = rng.integers(0, deg[node])
        nxt = A.table[node, pick]
        cols.append(nxt)
    observed = np.stack(cols, axis=1)
    dirs = np.empty_like(observed)
    dirs[:, 0] = D.intra[observed[:, 0]]
    if gamma > 1:
        dirs[:, 1:] = D.get_many(observed[:, :-1], observed[:, 1:])
    return observed, dirs


def run_bench(network: RoadNetwork, kg: KgModel, rank: RankModel,
              D: DirectionMatrix, A: NaeMatrix, requests: int = 10_000,
              topk: int = 10, scenario: str = GOAL_D, seed: int = 0,
              single_thread: bool = True, chunk: int = 128) -> dict:
    """Time ``requests`` full top-``topk`` predictions; returns a report."""
    if scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario: {scenario}")
    if requests < 1:
        raise UsageError("requests must be >= 1")
    if topk < 1 or topk > rank.config.k:
        raise UsageError(f"topk must be in 1..{rank.config.k}")

    observed, dirs = random_windows(network, A, D, requests, kg.config.gamma, seed)
    rng = stream(seed, "bench.queries")
    dir_classes = rng.integers(0, kg.config.n_d, size=requests)
    goal_edges = None
    if scenario == "goal":
        goal_edges = rng.integers(0, network.n_edges, size=requests)

    # small chunks keep the (B, K, Γ′, δ) intermediates cache-resident,
    # which beats the larger-GEMM amortization of big batches ~2x here
    if single_thread:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=1)
    else:
        limiter = nullcontext()

    with limiter:
        t0 = time.monotonic()
        pred = predict_routes(
            kg, rank, D, A, scenario, observed, dirs,
            goal_dirs=dir_classes, goal_edges=goal_edges,
            dir_override=dir_classes, chunk=chunk,
        )
        seconds = time.monotonic() - t0

    final = pred.final_routes[:, :topk]
    assert final.shape == (requests, topk, kg.config.gamma_prime)
    return {
        "requests": int(requests),
        "topk": int(topk),
        "scenario": scenario,
        "seconds": seconds,
        "per_request_ms": seconds / requests * 1e3,
        "predictions_per_second": requests / seconds if seconds > 0 else float("inf"),
        "single_thread": bool(single_thread),
        "chunk": int(chunk),
    }
