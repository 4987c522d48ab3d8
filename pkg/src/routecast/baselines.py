"""Classical reference predictors: a first-order Markov transition model
and a shortest-path predictor for the goal-aware setting."""

from __future__ import annotations

import numpy as np
from scipy.sparse import csr_array

from .corpus import RouteCorpus, _PathFinder
from .errors import DataError, UsageError
from .network import NaeMatrix, RoadNetwork
from .spanning import CandidateBatch, spanning_route_batch


class MarkovPredictor:
    """Link-to-link transition model with add-one smoothing over each
    link's real successors. Step-γ distributions are the γ-step transition
    mass started from the last observed link, which the tree expansion
    consumes directly."""

    def __init__(self, transition: csr_array, A: NaeMatrix, gamma_prime: int):
        self.transition = transition
        self.A = A
        self.gamma_prime = gamma_prime
        self.n_edges = A.pad

    def step_distributions(self, last_edges: np.ndarray) -> np.ndarray:
        """(B,) last observed links → (B, Γ′, |E|+1) per-step distributions
        (the final slot is the padding column, always zero mass)."""
        last = np.asarray(last_edges, dtype=np.int64)
        B = last.shape[0]
        out = np.zeros((B, self.gamma_prime, self.n_edges + 1))
        cur = np.asarray(self.transition[last].todense())
        for g in range(self.gamma_prime):
            out[:, g, : self.n_edges] = cur
            if g + 1 < self.gamma_prime:
                cur = cur @ self.transition
        return out

    def predict_topk(self, last_edges: np.ndarray, n: int, k: int) -> CandidateBatch:
        last = np.asarray(last_edges, dtype=np.int64)
        probs = self.step_distributions(last)
        starts = self.A.edge_end[last]
        return spanning_route_batch(probs, starts, self.A, n, k)


def markov_baseline(corpus: RouteCorpus, A: NaeMatrix) -> MarkovPredictor:
    """Fit transition counts on the training split's full windows."""
    train = corpus.split["train"]
    if train.size == 0:
        raise DataError("markov baseline needs a nonempty training split")
    windows = np.concatenate(
        [corpus.observed[train], corpus.future[train]], axis=1
    )
    heads = windows[:, :-1].reshape(-1)
    tails = windows[:, 1:].reshape(-1)
    n_e = A.pad

    counts = csr_array(
        (np.ones(heads.size), (heads, tails)), shape=(n_e, n_e)
    )
    dense = np.asarray(counts.todense())

    succ_table = A.table[A.edge_end]               # (|E|, n_a) successor ids
    real = succ_table != A.pad
    deg = real.sum(axis=1)
    head_flat = np.repeat(np.arange(n_e), deg)
    succ_flat = succ_table[real]
    c = dense[head_flat, succ_flat]
    p = (c + 1.0) / (dense.sum(axis=1)[head_flat] + deg[head_flat])
    transition = csr_array((p, (head_flat, succ_flat)), shape=(n_e, n_e))
    return MarkovPredictor(transition, A, corpus.gamma_prime)


# ---------------------------------------------------------------------- #
# shortest-path predictor (goal edge known)


def dijkstra_routes(network: RoadNetwork, last_edges, goal_edges, gamma_prime: int):
    """Length-weighted shortest path from the end of each last observed
    link to the start of its goal link, the goal link appended, truncated
    or padded (by repeating the goal link) to Γ′ positions.

    Returns (routes (B, Γ′), errors: list of None or message per sample).
    """
    last = np.asarray(last_edges, dtype=np.int64)
    goals = np.asarray(goal_edges, dtype=np.int64)
    if last.shape != goals.shape:
        raise UsageError("last/goal edge arrays must align")
    finder = _PathFinder(network)
    weights = network.edge_length
    sources = network.edge_end[last]
    targets = network.edge_start[goals]

    routes = np.zeros((last.shape[0], gamma_prime), dtype=np.int64)
    errors: list[str | None] = [None] * last.shape[0]
    for src in np.unique(sources):
        idx = np.nonzero(sources == src)[0]
        dist, pred, chosen = finder.shortest_tree(int(src), weights)
        for b in idx:
            try:
                path = finder.path_edges(int(src), int(targets[b]), pred, chosen)
            except DataError as exc:
                errors[b] = str(exc)
                continue
            full = path + [int(goals[b])]
            if len(full) >= gamma_prime:
                routes[b] = full[:gamma_prime]
            else:
                routes[b] = full + [int(goals[b])] * (gamma_prime - len(full))
    return routes, errors


def dijkstra_baseline(network: RoadNetwork, sample) -> np.ndarray:
    """Single-sample wrapper; raises when the goal is unreachable."""
    gp = len(sample.future)
    routes, errors = dijkstra_routes(
        network, [sample.observed[-1]], [sample.goal_edge], gp
    )
    if errors[0] is not None:
        raise DataError(errors[0])
    return routes[0]
