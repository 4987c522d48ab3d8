"""Top-K future-route generation by n-ary tree expansion.

Starting from the end node of the last observed link, each tree level γ
expands every leaf into its top-n outgoing edges ranked by that step's
probability distribution (descending probability, ties toward the lower
edge id). After Γ′ levels the leaves — read in pre-order, which for this
complete tree is simply left-to-right construction order — are emitted
root-to-leaf and the first K distinct routes form the candidate set.

Nodes with fewer than n outgoing edges duplicate their lowest-probability
real child to keep the tree complete (leaf count stays n^Γ′, which keeps
the batch form a fixed-shape lockstep computation); duplicates are removed
stably before the top-K cut. A node with no outgoing edges repeats its
incoming edge and flags the branch as dead-ended.

The scalar form builds an explicit node tree; the batch form runs index
arrays in lockstep. They must agree element-for-element — the test suite
holds them to that with a brute-force enumeration oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError
from .network import NaeMatrix

NIL = -1


@dataclass
class SpanNode:
    name: str
    parent: "SpanNode | None"
    end_node: int
    pred: int = NIL
    dead: bool = False


@dataclass
class CandidateSet:
    routes: np.ndarray  # (K, Γ′) edge ids
    dead: np.ndarray    # (K,) bool — route contains a dead-end repetition
    n: int
    filled: bool        # any arity shortfall happened during expansion


@dataclass
class CandidateBatch:
    routes: np.ndarray  # (B, K, Γ′)
    dead: np.ndarray    # (B, K)
    n: int


def choose_branching(k: int, gamma_prime: int) -> int:
    """Smallest n with n^Γ′ ≥ K."""
    n = 1
    while n**gamma_prime < k:
        n += 1
    return n


def _check_args(n: int, k: int, gamma_prime: int) -> None:
    if n < 1 or k < 1:
        raise UsageError("branching degree and K must be at least 1")
    if k > n**gamma_prime:
        raise UsageError(f"K={k} exceeds leaf count n^Γ′={n**gamma_prime}")


def spanning_route(dists, start_node: int, A: NaeMatrix, n: int, k: int) -> CandidateSet:
    """Scalar tree form. ``dists`` is a StepDistributions (or a bare
    (Γ′, |E|+1) probability array)."""
    probs = np.asarray(getattr(dists, "probs", dists), dtype=np.float64)
    gamma_prime = probs.shape[0]
    _check_args(n, k, gamma_prime)

    root = SpanNode("r", None, int(start_node))
    leaves = [root]
    filled = False
    for g in range(gamma_prime):
        step = probs[g]
        nxt: list[SpanNode] = []
        for leaf in leaves:
            out = [int(e) for e in A.row(leaf.end_node) if e != A.pad]
            if not out:
                if leaf.pred == NIL:
                    raise DataError(
                        f"start node {leaf.end_node} has no outgoing edges"
                    )
                filled = True
                children = [(leaf.pred, leaf.end_node, True)] * n
            else:
                ranked = sorted(out, key=lambda e: (-step[e], e))[:n]
                if len(ranked) < n:
                    filled = True
                    ranked = ranked + [ranked[-1]] * (n - len(ranked))
                children = [(e, int(A.edge_end[e]), False) for e in ranked]
            for rank, (e, end, is_dead) in enumerate(children):
                nxt.append(
                    SpanNode(
                        name=f"{leaf.name}.{rank}",
                        parent=leaf,
                        end_node=end,
                        pred=e,
                        dead=leaf.dead or is_dead,
                    )
                )
        leaves = nxt

    routes: list[tuple[int, ...]] = []
    dead_flags: list[bool] = []
    seen: set[tuple[int, ...]] = set()
    for leaf in leaves:  # construction order == pre-order for a complete tree
        path = []
        node = leaf
        while node.parent is not None:
            path.append(node.pred)
            node = node.parent
        route = tuple(reversed(path))
        if filled:
            if route in seen:
                continue
            seen.add(route)
        routes.append(route)
        dead_flags.append(leaf.dead)
        if len(routes) == k:
            break
    if len(routes) < k:
        raise DataError(
            f"only {len(routes)} distinct routes exist; cannot emit K={k}"
        )
    return CandidateSet(
        routes=np.asarray(routes, dtype=np.int64),
        dead=np.asarray(dead_flags, dtype=bool),
        n=n,
        filled=filled,
    )


def spanning_route_batch(probs: np.ndarray, start_nodes: np.ndarray,
                         A: NaeMatrix, n: int, k: int) -> CandidateBatch:
    """Lockstep batch form over ``probs`` of shape (B, Γ′, |E|+1)."""
    probs = np.asarray(probs, dtype=np.float64)
    B, gamma_prime, _ = probs.shape
    _check_args(n, k, gamma_prime)
    pad = A.pad

    ends = np.asarray(start_nodes, dtype=np.int64)[:, None]     # (B, L)
    preds = np.full((B, 1), NIL, dtype=np.int64)
    dead = np.zeros((B, 1), dtype=bool)
    fill_happened = np.zeros(B, dtype=bool)
    level_edges: list[np.ndarray] = []

    for g in range(gamma_prime):
        L = ends.shape[1]
        table = A.table[ends]                                   # (B, L, n_a)
        real = table != pad
        m = real.sum(axis=2)                                    # (B, L)
        root_dead = (m == 0) & (preds == NIL)
        if root_dead.any():
            bad = np.unique(np.nonzero(root_dead)[0])
            raise DataError(
                f"start nodes with no outgoing edges for samples {bad.tolist()}"
            )

        rows = np.arange(B)[:, None, None]
        p = probs[rows, g, table]                               # (B, L, n_a)
        p = np.where(real, p, -1.0)  # PAD sinks below every probability
        # table rows ascend by edge id, so a stable sort on -p breaks
        # probability ties toward the lower id
        order = np.argsort(-p, axis=2, kind="stable")
        sorted_edges = np.take_along_axis(table, order, axis=2)

        take = np.minimum(np.arange(n)[None, None, :], np.maximum(m, 1)[:, :, None] - 1)
        children = np.take_along_axis(sorted_edges, take, axis=2)  # (B, L, n)
        is_dead = m == 0
        children = np.where(is_dead[:, :, None], preds[:, :, None], children)
        child_ends = np.where(
            is_dead[:, :, None], ends[:, :, None], A.edge_end[children]
        )
        child_dead = np.repeat((dead | is_dead)[:, :, None], n, axis=2)
        fill_happened |= ((m < n) & (m > 0)).any(axis=1) | is_dead.any(axis=1)

        level_edges.append(children.reshape(B, L * n))
        ends = child_ends.reshape(B, L * n)
        preds = children.reshape(B, L * n)
        dead = child_dead.reshape(B, L * n)

    n_leaves = n**gamma_prime
    leaf_idx = np.arange(n_leaves)
    all_routes = np.empty((B, n_leaves, gamma_prime), dtype=np.int64)
    for g in range(gamma_prime):
        stride = n ** (gamma_prime - 1 - g)
        all_routes[:, :, g] = level_edges[g][:, leaf_idx // stride]
    leaf_dead = dead

    out_routes = np.empty((B, k, gamma_prime), dtype=np.int64)
    out_dead = np.empty((B, k), dtype=bool)
    plain = ~fill_happened
    out_routes[plain] = all_routes[plain, :k]
    out_dead[plain] = leaf_dead[plain, :k]
    for b in np.nonzero(fill_happened)[0]:
        seen: set[bytes] = set()
        got = 0
        for leaf in range(n_leaves):
            key = all_routes[b, leaf].tobytes()
            if key in seen:
                continue
            seen.add(key)
            out_routes[b, got] = all_routes[b, leaf]
            out_dead[b, got] = leaf_dead[b, leaf]
            got += 1
            if got == k:
                break
        if got < k:
            raise DataError(
                f"sample {b}: only {got} distinct routes exist; cannot emit K={k}"
            )
    return CandidateBatch(routes=out_routes, dead=out_dead, n=n)
