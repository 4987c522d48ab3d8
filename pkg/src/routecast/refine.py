"""Candidate reranking and top-1 refinement.

Reranking embeds each of the K candidate routes (entity embeddings plus
direction-relation embeddings of the per-step turn labels recomputed from
the direction matrix), projects the route embeddings onto the connect_by
and consistent_with hyperplanes, takes the mean of consecutive projected
differences as two margin vectors per candidate, and scores

    logits = MLP_r([margins_c ‖ margins_s ‖ MLP_f(route/direction embs)])

softmaxed over the K candidates. Top-1 refinement feeds the winning route
through MLP_x into MLP_k to produce fresh per-step logits over all edges,
decoded with the n=1 tree expansion so the refined route stays connected.

These are the Θ_r parameters of the training loop's second update: their
losses treat all embeddings as detached inputs, so gradients returned here
cover only the four MLPs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .kgmodel import KgModel, hyperplane_project
from .network import DirectionMatrix, NaeMatrix
from .nn import mlp_backward, mlp_forward, mlp_init, softmax, softmax_cross_entropy_batch
from .rng import stream
from .spanning import spanning_route_batch


@dataclass
class RankConfig:
    n_edges: int
    k: int
    gamma_prime: int
    n_d: int = 8
    emb_dim: int = 64
    hidden: int = 64


class RankModel:
    """Θ_r: the four reranking/refinement MLPs, in one flat params dict."""

    def __init__(self, config: RankConfig, seed: int = 0):
        d = config.emb_dim
        k, gp = config.k, config.gamma_prime
        h = config.hidden
        self.config = config
        self.mlp_f = mlp_init("mlp_f", [2 * k * gp * d, h, h], stream(seed, "init.mlp_f"))
        self.mlp_r = mlp_init("mlp_r", [2 * k * d + h, h, k], stream(seed, "init.mlp_r"))
        self.mlp_x = mlp_init("mlp_x", [2 * gp * d, h, h], stream(seed, "init.mlp_x"))
        self.mlp_k = mlp_init(
            "mlp_k", [3 * d + h, h, gp * config.n_edges], stream(seed, "init.mlp_k")
        )
        self.params: dict[str, np.ndarray] = {}
        for mlp in (self.mlp_f, self.mlp_r, self.mlp_x, self.mlp_k):
            self.params.update(dict(mlp.param_items()))

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


@dataclass
class RankedCandidates:
    routes: np.ndarray      # (K, Γ′) in descending-probability order
    rank_probs: np.ndarray  # (K,) descending
    order: np.ndarray       # permutation applied to the input candidates
    dirs: np.ndarray        # (K, Γ′) direction labels, same order as routes
    dead: np.ndarray | None = None
    cache: object = field(default=None, repr=False)


def candidate_dirs_batch(D: DirectionMatrix, last_obs: np.ndarray, routes: np.ndarray) -> np.ndarray:
    """Per-step turn labels along each candidate: label j is the direction
    class from the previous link (the last observed link for j = 0)."""
    B, K, gp = routes.shape
    prev = np.concatenate(
        [np.broadcast_to(last_obs[:, None, None], (B, K, 1)), routes[:, :, :-1]], axis=2
    )
    return D.get_many(prev, routes).astype(np.int64)


def _rank_forward(kg: KgModel, rank: RankModel, routes: np.ndarray, dirs: np.ndarray):
    cfg = rank.config
    B, K, gp = routes.shape
    d = cfg.emb_dim
    E = kg.params["W_E"]
    Rd = kg.params["R.direction_to"]
    p_c = kg.params["P.connect_by"][0]
    p_s = kg.params["P.consistent_with"][0]

    route_emb = E[routes]                      # (B, K, Γ′, δ)
    dir_emb = Rd[dirs]                         # (B, K, Γ′, δ)
    proj_c = hyperplane_project(route_emb, p_c)
    proj_s = hyperplane_project(route_emb, p_s)
    if gp > 1:
        margin_c = np.diff(proj_c, axis=2).mean(axis=2)   # (B, K, δ)
        margin_s = np.diff(proj_s, axis=2).mean(axis=2)
    else:
        margin_c = np.zeros((B, K, d))
        margin_s = np.zeros((B, K, d))

    x_f = np.concatenate(
        [route_emb.reshape(B, -1), dir_emb.reshape(B, -1)], axis=1
    )
    rank.mlp_f.load_params(rank.params)
    f_out, f_cache = mlp_forward(rank.mlp_f, x_f)
    x_r = np.concatenate([margin_c.reshape(B, -1), margin_s.reshape(B, -1), f_out], axis=1)
    rank.mlp_r.load_params(rank.params)
    logits, r_cache = mlp_forward(rank.mlp_r, x_r)
    probs = softmax(logits)
    return probs, logits, (f_cache, r_cache)


def rank_candidates_batch(kg: KgModel, rank: RankModel, routes: np.ndarray,
                          last_obs: np.ndarray, D: DirectionMatrix):
    """Returns (probs (B, K) in input candidate order, dirs (B, K, Γ′), cache)."""
    dirs = candidate_dirs_batch(D, last_obs, routes)
    probs, logits, caches = _rank_forward(kg, rank, routes, dirs)
    return probs, dirs, caches


def rank_candidates(cands, sample, kg: KgModel, refine: RankModel, D: DirectionMatrix) -> RankedCandidates:
    """Single-sample wrapper. ``cands`` is a CandidateSet (or bare routes)."""
    routes = np.asarray(getattr(cands, "routes", cands), dtype=np.int64)[None]
    dead = getattr(cands, "dead", None)
    last_obs = np.asarray([sample.observed[-1]], dtype=np.int64)
    probs, dirs, caches = rank_candidates_batch(kg, refine, routes, last_obs, D)
    order = np.argsort(-probs[0], kind="stable")
    return RankedCandidates(
        routes=routes[0][order],
        rank_probs=probs[0][order],
        order=order,
        dirs=dirs[0][order],
        dead=None if dead is None else np.asarray(dead)[order],
        cache=(probs, dirs, caches, routes),
    )


def find_truth_index(routes: np.ndarray, future: np.ndarray) -> np.ndarray:
    """First index of the exact true route among candidates, −1 if absent.
    routes (B, K, Γ′), future (B, Γ′) → (B,)."""
    hit = np.all(routes == future[:, None, :], axis=2)
    idx = np.argmax(hit, axis=1)
    return np.where(hit.any(axis=1), idx, -1)


def rank_loss_batch(rank: RankModel, probs: np.ndarray, caches, routes: np.ndarray,
                    future: np.ndarray):
    """Cross-entropy of the rank distribution against the true route's
    candidate index; samples whose candidates miss the truth are skipped.
    Returns (loss, grads over Θ_r, n_skipped)."""
    f_cache, r_cache = caches
    truth = find_truth_index(routes, future)
    hit = truth >= 0
    n_skipped = int((~hit).sum())
    B, K = probs.shape
    dlogits = np.zeros((B, K))
    if hit.any():
        rows = np.nonzero(hit)[0]
        pt = probs[rows, truth[rows]]
        loss = float(-np.sum(np.log(np.maximum(pt, 1e-300)))) if np.all(pt > 0) else np.inf
        dlogits[rows] = probs[rows]
        dlogits[rows, truth[rows]] -= 1.0
    else:
        loss = 0.0
    r_grads, dx_r = mlp_backward(rank.mlp_r, r_cache, dlogits)
    h = rank.config.hidden
    f_grads, _ = mlp_backward(rank.mlp_f, f_cache, dx_r[:, -h:])
    grads = {**r_grads, **f_grads}
    return loss, grads, n_skipped


def rank_loss(ranked: RankedCandidates, sample, rank: RankModel):
    """Per-sample wrapper over ``rank_loss_batch``."""
    probs, dirs, caches, routes = ranked.cache
    future = np.asarray([sample.future], dtype=np.int64)
    return rank_loss_batch(rank, probs, caches, routes, future)


# ---------------------------------------------------------------------- #
# top-1 refinement


def refine_logits_batch(kg: KgModel, rank: RankModel, last_edges: np.ndarray,
                        last_dirs: np.ndarray, dir_classes: np.ndarray,
                        top1_routes: np.ndarray, top1_dirs: np.ndarray):
    """Fresh per-step logits (B, Γ′, |E|) for the refined prediction."""
    cfg = rank.config
    B = last_edges.shape[0]
    E = kg.params["W_E"]
    Rd = kg.params["R.direction_to"]
    x_x = np.concatenate(
        [E[top1_routes].reshape(B, -1), Rd[top1_dirs].reshape(B, -1)], axis=1
    )
    rank.mlp_x.load_params(rank.params)
    x_out, x_cache = mlp_forward(rank.mlp_x, x_x)
    x_k = np.concatenate(
        [E[last_edges], Rd[last_dirs], Rd[dir_classes], x_out], axis=1
    )
    rank.mlp_k.load_params(rank.params)
    flat, k_cache = mlp_forward(rank.mlp_k, x_k)
    logits = flat.reshape(B, cfg.gamma_prime, cfg.n_edges)
    return logits, (x_cache, k_cache)


def refine_loss_batch(rank: RankModel, logits: np.ndarray, caches, future: np.ndarray):
    """Summed per-step cross-entropy of the refinement logits. Returns
    (loss, grads over Θ_r)."""
    x_cache, k_cache = caches
    B, gp, n_e = logits.shape
    losses, _, dl = softmax_cross_entropy_batch(
        logits.reshape(B * gp, n_e), future.reshape(-1)
    )
    loss = float(np.sum(losses))
    k_grads, dx_k = mlp_backward(rank.mlp_k, k_cache, dl.reshape(B, gp * n_e))
    h = rank.config.hidden
    x_grads, _ = mlp_backward(rank.mlp_x, x_cache, dx_k[:, -h:])
    return loss, {**k_grads, **x_grads}


def refine_top1_batch(kg: KgModel, rank: RankModel, A: NaeMatrix,
                      last_edges, last_dirs, dir_classes, top1_routes, top1_dirs,
                      start_nodes):
    """Decode the refinement logits into one connected route per sample."""
    logits, _ = refine_logits_batch(
        kg, rank, last_edges, last_dirs, dir_classes, top1_routes, top1_dirs
    )
    B, gp, n_e = logits.shape
    full = np.concatenate([logits, np.full((B, gp, 1), -np.inf)], axis=2)
    probs = softmax(full)
    out = spanning_route_batch(probs, start_nodes, A, 1, 1)
    return out.routes[:, 0, :]


def refine_top1(sample, ranked: RankedCandidates, kg: KgModel, refine: RankModel,
                A: NaeMatrix, dir_class: int | None = None) -> np.ndarray:
    """Single-sample refined route (Γ′,). ``dir_class`` defaults to the
    sample's true goal direction; pass the estimated class when no goal
    information is available."""
    cls = sample.goal_dir if dir_class is None else int(dir_class)
    if not 0 <= cls < refine.config.n_d:
        raise UsageError(f"direction class out of range 0..{refine.config.n_d - 1}")
    last = np.asarray([sample.observed[-1]], dtype=np.int64)
    start = A.edge_end[last]
    return refine_top1_batch(
        kg, refine, A,
        last, np.asarray([sample.observed_dirs[-1]]), np.asarray([cls]),
        ranked.routes[0:1], ranked.dirs[0:1],
        start,
    )[0]


# ---------------------------------------------------------------------- #
# final list assembly


def assemble_final_topk(ranked_routes: np.ndarray, refined: np.ndarray) -> np.ndarray:
    """Place the refined route at rank 1: the old rank-K entry is dropped,
    everything else shifts down one slot in order, any candidate identical
    to the refined route is removed first, and the dropped entry backfills
    if the list comes up short. Output is always exactly K rows."""
    routes = np.asarray(ranked_routes)
    refined = np.asarray(refined)
    K = routes.shape[0]
    dup = np.all(routes == refined[None, :], axis=1)
    kept = [routes[j] for j in range(K - 1) if not dup[j]]
    out = [refined] + kept
    if len(out) < K and not dup[K - 1]:
        out.append(routes[K - 1])
    if len(out) != K:
        raise UsageError("candidate routes must be distinct to assemble a final top-K list")
    return np.stack(out)


def assemble_final_topk_batch(ranked_routes: np.ndarray, refined: np.ndarray) -> np.ndarray:
    """(B, K, Γ′), (B, Γ′) → (B, K, Γ′) final lists."""
    return np.stack(
        [assemble_final_topk(ranked_routes[b], refined[b]) for b in range(ranked_routes.shape[0])]
    )
