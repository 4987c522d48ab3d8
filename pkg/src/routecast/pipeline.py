"""End-to-end batched prediction: per-step tail queries, tree expansion
into candidates, reranking, top-1 refinement, and final list assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .kgmodel import GOAL, KgModel, query_tail_batch, resolve_direction_classes
from .network import DirectionMatrix, NaeMatrix
from .refine import (
    RankModel,
    assemble_final_topk_batch,
    candidate_dirs_batch,
    rank_candidates_batch,
    refine_top1_batch,
)
from .spanning import choose_branching, spanning_route_batch

DEFAULT_CHUNK = 1024


@dataclass
class PredictionBatch:
    final_routes: np.ndarray   # (B, K, Γ′) final ranked lists
    rank_probs: np.ndarray     # (B, K) descending, aligned to slots
    dir_classes: np.ndarray    # (B,) direction class fed to the query
    candidates: np.ndarray     # (B, K, Γ′) pre-rerank tree expansion output
    refined: np.ndarray        # (B, Γ′) refined top-1 routes

    def __len__(self) -> int:
        return self.final_routes.shape[0]


def corpus_batch(corpus, idx) -> dict:
    idx = np.asarray(idx, dtype=np.int64)
    return {
        "observed": corpus.observed[idx],
        "future": corpus.future[idx],
        "observed_dirs": corpus.observed_dirs[idx],
        "goal_dirs": corpus.goal_dirs[idx],
        "goal_edges": corpus.goal_edges[idx],
    }


def predict_routes(kg: KgModel, rank: RankModel, D: DirectionMatrix, A: NaeMatrix,
                   scenario: str, observed: np.ndarray, observed_dirs: np.ndarray,
                   goal_dirs: np.ndarray | None = None,
                   goal_edges: np.ndarray | None = None,
                   k: int | None = None, n: int | None = None,
                   dir_override: np.ndarray | None = None,
                   use_true_dirs: bool = False, refine: bool = True,
                   chunk: int = DEFAULT_CHUNK) -> PredictionBatch:
    """Full inference for (B, Γ) observed windows, chunked to bound the
    size of the per-step probability tensors."""
    observed = np.asarray(observed, dtype=np.int64)
    observed_dirs = np.asarray(observed_dirs, dtype=np.int64)
    if observed.ndim != 2:
        raise UsageError("observed windows must be a (B, gamma) array")
    B = observed.shape[0]
    gp = kg.config.gamma_prime
    k = rank.config.k if k is None else int(k)
    if k != rank.config.k:
        raise UsageError(
            f"reranker was built for K={rank.config.k}, got K={k}"
        )
    n = choose_branching(k, gp) if n is None else int(n)

    outs = []
    for lo in range(0, B, max(chunk, 1)):
        hi = min(lo + max(chunk, 1), B)
        sl = slice(lo, hi)
        outs.append(_predict_chunk(
            kg, rank, D, A, scenario,
            observed[sl], observed_dirs[sl],
            None if goal_dirs is None else np.asarray(goal_dirs)[sl],
            None if goal_edges is None else np.asarray(goal_edges)[sl],
            k, n,
            None if dir_override is None else np.asarray(dir_override)[sl],
            use_true_dirs, refine,
        ))
    return PredictionBatch(
        final_routes=np.concatenate([o.final_routes for o in outs]),
        rank_probs=np.concatenate([o.rank_probs for o in outs]),
        dir_classes=np.concatenate([o.dir_classes for o in outs]),
        candidates=np.concatenate([o.candidates for o in outs]),
        refined=np.concatenate([o.refined for o in outs]),
    )


def _predict_chunk(kg, rank, D, A, scenario, observed, observed_dirs,
                   goal_dirs, goal_edges, k, n, dir_override,
                   use_true_dirs, refine) -> PredictionBatch:
    classes = resolve_direction_classes(
        kg, scenario, observed, observed_dirs, goal_dirs, dir_override,
        use_true=use_true_dirs,
    )
    last = observed[:, -1]
    step_probs, _ = query_tail_batch(
        kg, last, classes, goal_edges if scenario == GOAL else None
    )
    cands = spanning_route_batch(step_probs, A.edge_end[last], A, n, k)

    probs, dirs, _ = rank_candidates_batch(kg, rank, cands.routes, last, D)
    order = np.argsort(-probs, axis=1, kind="stable")
    ranked = np.take_along_axis(cands.routes, order[:, :, None], axis=1)
    ranked_dirs = np.take_along_axis(dirs, order[:, :, None], axis=1)
    rank_probs = np.take_along_axis(probs, order, axis=1)

    if refine:
        refined = refine_top1_batch(
            kg, rank, A, last, observed_dirs[:, -1], classes,
            ranked[:, 0], ranked_dirs[:, 0], A.edge_end[last],
        )
        final = assemble_final_topk_batch(ranked, refined)
    else:
        refined = ranked[:, 0]
        final = ranked
    return PredictionBatch(final, rank_probs, classes, cands.routes, refined)
