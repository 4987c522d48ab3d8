"""Positive/negative triplet sampling for the four spatial relation families.

Families (cardinality in parentheses):
  connect_by (1)      head's end node is tail's start node (traversable order)
  consistent_with (1) head and tail co-occur in one training route window
  distance_to (Γ′)    tail sits exactly ``hop`` links after head in a window;
                      stored relation index = hop − 1
  direction_to (n_d)  relation index is the direction class D[head][tail]

Every batch pairs negatives 1:1 with positives. connect_by negatives corrupt
one side of the positive pair (and must come out non-adjacent and non-self);
consistent_with negatives are uniform non-co-occurring pairs; distance_to
negatives corrupt the tail; direction_to negatives corrupt the class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .fileio import atomic_write_text
from .network import DirectionMatrix, RoadNetwork
from .rng import stream

FAMILIES = ("connect_by", "consistent_with", "distance_to", "direction_to")

_REJECTION_ROUNDS = 200


@dataclass(frozen=True)
class Triplet:
    head: int
    family: str
    index: int
    tail: int


@dataclass
class TripletBatch:
    family: str
    pos_head: np.ndarray
    pos_rel: np.ndarray
    pos_tail: np.ndarray
    neg_head: np.ndarray
    neg_rel: np.ndarray
    neg_tail: np.ndarray

    def __len__(self) -> int:
        return len(self.pos_head)

    @property
    def positives(self) -> list[Triplet]:
        return [
            Triplet(int(h), self.family, int(r), int(t))
            for h, r, t in zip(self.pos_head, self.pos_rel, self.pos_tail)
        ]

    @property
    def negatives(self) -> list[Triplet]:
        return [
            Triplet(int(h), self.family, int(r), int(t))
            for h, r, t in zip(self.neg_head, self.neg_rel, self.neg_tail)
        ]


def _sorted_keys(arr: np.ndarray) -> np.ndarray:
    return np.unique(arr)


def _member(keys_sorted: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Vectorized membership of query values in a sorted unique key array."""
    pos = np.searchsorted(keys_sorted, query)
    pos = np.minimum(pos, len(keys_sorted) - 1) if len(keys_sorted) else pos
    if len(keys_sorted) == 0:
        return np.zeros(query.shape, dtype=bool)
    return keys_sorted[pos] == query


class TripletSampler:
    """Precomputes per-family support structures once, then samples batches.

    ``corpus`` may be None when only connect_by/direction_to are needed.
    Training windows are the concatenated observed+future segments of the
    corpus train split.
    """

    def __init__(self, network: RoadNetwork, corpus, D: DirectionMatrix):
        self.net = network
        self.D = D
        n_e = network.n_edges
        self._pair_base = n_e

        # adjacency pairs (h, t) with end(h) = start(t)
        heads, tails = [], []
        for h in range(n_e):
            for t in network.out_edges[network.edge_end[h]]:
                heads.append(h)
                tails.append(t)
        self.adj_h = np.asarray(heads, dtype=np.int64)
        self.adj_t = np.asarray(tails, dtype=np.int64)
        self.adj_keys = _sorted_keys(self.adj_h * n_e + self.adj_t)

        self.windows = None
        if corpus is not None:
            train = corpus.split.get("train")
            if train is None or len(train) == 0:
                raise DataError("corpus has no train split for triplet sampling")
            self.windows = np.concatenate(
                [corpus.observed[train], corpus.future[train]], axis=1
            )
            self.gamma_prime = corpus.gamma_prime
            L = self.windows.shape[1]
            # unordered co-occurrence keys, self pairs included
            lo = np.minimum(self.windows[:, :, None], self.windows[:, None, :]).ravel()
            hi = np.maximum(self.windows[:, :, None], self.windows[:, None, :]).ravel()
            self.cooccur_keys = _sorted_keys(lo * n_e + hi)
            # (head, hop index, tail) keys for every in-window hop
            hk = []
            for g in range(self.gamma_prime):
                hop = g + 1
                if hop >= L:
                    continue
                h = self.windows[:, : L - hop].ravel()
                t = self.windows[:, hop:].ravel()
                hk.append((h * self.gamma_prime + g) * n_e + t)
            self.hop_keys = _sorted_keys(np.concatenate(hk)) if hk else np.empty(0, dtype=np.int64)

    # ------------------------------------------------------------------ #
    # defining predicates (exposed for exhaustive re-checking in tests)

    def is_adjacent(self, h: int, t: int) -> bool:
        return int(self.net.edge_end[h]) == int(self.net.edge_start[t])

    def cooccurs(self, h: int, t: int) -> bool:
        lo, hi = (h, t) if h <= t else (t, h)
        return bool(_member(self.cooccur_keys, np.asarray([lo * self.net.n_edges + hi]))[0])

    def at_hop(self, h: int, index: int, t: int) -> bool:
        key = (h * self.gamma_prime + index) * self.net.n_edges + t
        return bool(_member(self.hop_keys, np.asarray([key]))[0])

    # ------------------------------------------------------------------ #

    def sample(self, family: str, batch_size: int, seed: int, tag: int = 0) -> TripletBatch:
        rng = stream(seed, f"triplets.{family}", tag)
        if family == "connect_by":
            return self._sample_connect(batch_size, rng)
        if family == "consistent_with":
            return self._sample_consistent(batch_size, rng)
        if family == "distance_to":
            return self._sample_distance(batch_size, rng)
        if family == "direction_to":
            return self._sample_direction(batch_size, rng)
        raise DataError(f"unknown relation family: {family}")

    def _sample_connect(self, B: int, rng) -> TripletBatch:
        n_e = self.net.n_edges
        if len(self.adj_h) == 0:
            raise DataError("connect_by has empty positive support (no adjacent edge pairs)")
        pick = rng.integers(len(self.adj_h), size=B)
        ph, pt = self.adj_h[pick], self.adj_t[pick]
        nh, nt = ph.copy(), pt.copy()
        invalid = np.ones(B, dtype=bool)
        for _ in range(_REJECTION_ROUNDS):
            k = int(invalid.sum())
            if k == 0:
                break
            side = rng.integers(2, size=k)
            repl = rng.integers(n_e, size=k)
            nh[invalid] = np.where(side == 0, repl, ph[invalid])
            nt[invalid] = np.where(side == 1, repl, pt[invalid])
            invalid = (_member(self.adj_keys, nh * n_e + nt) | (nh == nt)) & invalid
        if invalid.any():
            raise DataError(
                "connect_by: no valid negative exists for some positives "
                f"({int(invalid.sum())} of {B} unresolved)"
            )
        zeros = np.zeros(B, dtype=np.int64)
        return TripletBatch("connect_by", ph, zeros, pt, nh, zeros.copy(), nt)

    def _require_corpus(self, family: str):
        if self.windows is None:
            raise DataError(f"{family} sampling requires a route corpus")

    def _sample_consistent(self, B: int, rng) -> TripletBatch:
        self._require_corpus("consistent_with")
        n_e = self.net.n_edges
        W = self.windows
        L = W.shape[1]
        w = rng.integers(W.shape[0], size=B)
        a = rng.integers(L, size=B)
        b = rng.integers(L - 1, size=B)
        b = b + (b >= a)
        i, j = np.minimum(a, b), np.maximum(a, b)
        ph, pt = W[w, i], W[w, j]

        nh = rng.integers(n_e, size=B)
        nt = rng.integers(n_e, size=B)
        lo, hi = np.minimum(nh, nt), np.maximum(nh, nt)
        invalid = _member(self.cooccur_keys, lo * n_e + hi)
        for _ in range(_REJECTION_ROUNDS):
            if not invalid.any():
                break
            k = int(invalid.sum())
            nh[invalid] = rng.integers(n_e, size=k)
            nt[invalid] = rng.integers(n_e, size=k)
            lo, hi = np.minimum(nh, nt), np.maximum(nh, nt)
            invalid = _member(self.cooccur_keys, lo * n_e + hi)
        if invalid.any():
            raise DataError("consistent_with: could not find non-co-occurring negative pairs")
        zeros = np.zeros(B, dtype=np.int64)
        return TripletBatch("consistent_with", ph, zeros, pt, nh, zeros.copy(), nt)

    def _sample_distance(self, B: int, rng) -> TripletBatch:
        self._require_corpus("distance_to")
        n_e = self.net.n_edges
        W = self.windows
        L = W.shape[1]
        gp = self.gamma_prime
        w = rng.integers(W.shape[0], size=B)
        g = rng.integers(gp, size=B)  # relation index; hop = g + 1
        hop = g + 1
        if np.any(hop >= L):
            raise DataError(
                f"distance_to: window length {L} cannot support hop {gp} "
                "(gamma + gamma_prime too small)"
            )
        j = (rng.random(B) * (L - hop)).astype(np.int64)
        ph = W[w, j]
        pt = W[w, j + hop]

        nt = rng.integers(n_e, size=B)
        keys = (ph * gp + g) * n_e + nt
        invalid = _member(self.hop_keys, keys)
        for _ in range(_REJECTION_ROUNDS):
            if not invalid.any():
                break
            k = int(invalid.sum())
            nt[invalid] = rng.integers(n_e, size=k)
            keys = (ph * gp + g) * n_e + nt
            invalid = _member(self.hop_keys, keys)
        if invalid.any():
            raise DataError("distance_to: could not find off-hop negative tails")
        return TripletBatch("distance_to", ph, g, pt, ph.copy(), g.copy(), nt)

    def _sample_direction(self, B: int, rng) -> TripletBatch:
        n_e = self.net.n_edges
        if n_e < 2:
            raise DataError("direction_to has empty positive support (need at least 2 edges)")
        h = rng.integers(n_e, size=B)
        t = rng.integers(n_e - 1, size=B)
        t = t + (t >= h)
        rel = self.D.get_many(h, t).astype(np.int64)
        off = rng.integers(1, self.D.n_d, size=B)
        neg_rel = (rel + off) % self.D.n_d
        return TripletBatch("direction_to", h, rel, t, h.copy(), neg_rel, t.copy())


def sample_triplets(
    family: str,
    batch_size: int,
    network: RoadNetwork,
    corpus,
    D: DirectionMatrix,
    seed: int,
) -> TripletBatch:
    """One-shot sampling entry point; builds support structures per call."""
    return TripletSampler(network, corpus, D).sample(family, batch_size, seed)


def dump_triplets(batch: TripletBatch, path: str) -> None:
    lines = []
    for kind, trips in (("pos", batch.positives), ("neg", batch.negatives)):
        for t in trips:
            lines.append(
                json.dumps(
                    {"kind": kind, "head": t.head, "family": t.family, "index": t.index, "tail": t.tail}
                )
            )
    atomic_write_text(path, "\n".join(lines) + "\n")
