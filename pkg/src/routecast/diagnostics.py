"""Self-contained gradient-check battery over every trainable loss.

Builds a small synthetic world and, for each loss (triplet representation,
direction estimator, per-step prediction, candidate ranking, top-1
refinement), verifies analytic gradients against central finite
differences on several independently drawn instances. Instances that sit
on a relu or hinge kink — where finite differences are invalid — are
redrawn, never skipped silently.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .kgmodel import (
    GOAL,
    GOAL_D,
    KgConfig,
    KgModel,
    direction_loss_batch,
    direction_logits_batch,
    hyperplane_project,
    pred_loss_batch,
    query_tail_batch,
    rep_loss,
)
from .network import NaeMatrix, build_direction_matrix, generate_grid_network
from .corpus import generate_routes, split_corpus
from .nn import grad_check, min_preactivation_margin
from .refine import (
    RankConfig,
    RankModel,
    candidate_dirs_batch,
    rank_candidates_batch,
    rank_loss_batch,
    refine_logits_batch,
    refine_loss_batch,
)
from .rng import stream
from .spanning import spanning_route_batch
from .triplets import FAMILIES, TripletSampler

KINK_MARGIN = 1e-3
MAX_ATTEMPTS_PER_INSTANCE = 20

_GAMMA, _GP, _DIM, _HID, _K = 2, 2, 8, 8, 4


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    losses: dict[str, dict] = field(default_factory=dict)
    ok: bool = False
    seconds: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "step": self.step,
            "losses": self.losses,
            "ok": self.ok,
            "seconds": self.seconds,
        }


def _build_world(seed: int):
    net = generate_grid_network(5, seed=seed)
    D = build_direction_matrix(net)
    A = NaeMatrix(net)
    routes = generate_routes(net, 30, min_len=_GAMMA + _GP + 2, seed=seed + 1)
    corpus = split_corpus(routes, _GAMMA, _GP, 8, D, seed=seed + 2)
    sampler = TripletSampler(net, corpus, D)
    cfg = KgConfig(n_edges=net.n_edges, gamma=_GAMMA, gamma_prime=_GP,
                   emb_dim=_DIM, hidden=_HID)
    return net, D, A, corpus, sampler, cfg


def _fresh_kg(cfg: KgConfig, seed: int) -> KgModel:
    return KgModel(cfg, seed=seed)


def _fresh_rank(n_edges: int, seed: int) -> RankModel:
    return RankModel(
        RankConfig(n_edges=n_edges, k=_K, gamma_prime=_GP, emb_dim=_DIM, hidden=_HID),
        seed=seed,
    )


def _candidates(world, n_samples: int, seed: int):
    net, D, A, corpus, *_ = world
    rng = stream(seed, "gradcheck.cands")
    obs = corpus.observed[:n_samples]
    probs = rng.random((n_samples, _GP, net.n_edges + 1))
    probs[:, :, -1] = 0.0
    cands = spanning_route_batch(probs, net.edge_end[obs[:, -1]], A, 3, _K)
    return obs, cands.routes


def _rep_instance(world, attempt: int):
    net, D, A, corpus, sampler, cfg = world
    family = FAMILIES[attempt % len(FAMILIES)]
    model = _fresh_kg(cfg, seed=100 + attempt)
    batch = sampler.sample(family, 4, seed=200 + attempt)
    E = model.params["W_E"]
    R, P = model.params[f"R.{family}"], model.params[f"P.{family}"]

    def terms(heads, rels, tails):
        u = hyperplane_project(E[heads], P[rels]) + R[rels] \
            - hyperplane_project(E[tails], P[rels])
        return u, np.abs(u).sum(1)

    u_p, phi_p = terms(batch.pos_head, batch.pos_rel, batch.pos_tail)
    u_n, phi_n = terms(batch.neg_head, batch.neg_rel, batch.neg_tail)
    hinge_gap = np.min(np.abs(phi_p + cfg.margin - phi_n))
    kink = min(np.min(np.abs(u_p)), np.min(np.abs(u_n)))
    if hinge_gap < KINK_MARGIN or kink < KINK_MARGIN:
        return None

    def loss_fn(params):
        model.params = params
        return rep_loss(batch, model)

    return loss_fn, model.params


def _dir_instance(world, attempt: int):
    net, D, A, corpus, sampler, cfg = world
    model = _fresh_kg(cfg, seed=300 + attempt)
    lo = attempt % max(len(corpus) - 3, 1)
    obs = corpus.observed[lo:lo + 3]
    dirs = corpus.observed_dirs[lo:lo + 3]
    targets = corpus.goal_dirs[lo:lo + 3]
    _, (mcache, *_rest) = direction_logits_batch(model, obs, dirs)
    if min_preactivation_margin(mcache) < KINK_MARGIN:
        return None

    def loss_fn(params):
        model.params = params
        return direction_loss_batch(model, obs, dirs, targets)

    return loss_fn, model.params


def _pred_instance(world, attempt: int):
    net, D, A, corpus, sampler, cfg = world
    model = _fresh_kg(cfg, seed=400 + attempt)
    scenario = (GOAL_D, GOAL)[attempt % 2]
    lo = attempt % max(len(corpus) - 3, 1)
    obs = corpus.observed[lo:lo + 3]
    future = corpus.future[lo:lo + 3]
    classes = corpus.goal_dirs[lo:lo + 3]
    goal = corpus.goal_edges[lo:lo + 3] if scenario == GOAL else None

    def loss_fn(params):
        model.params = params
        _, cache = query_tail_batch(model, obs[:, -1], classes, goal)
        return pred_loss_batch(model, cache, future)

    return loss_fn, model.params


def _rank_instance(world, attempt: int):
    net, D, A, corpus, sampler, cfg = world
    kg = _fresh_kg(cfg, seed=500 + attempt)
    rank = _fresh_rank(net.n_edges, seed=600 + attempt)
    obs, routes = _candidates(world, 3, seed=700 + attempt)
    routes = routes.copy()
    routes[0, 1] = np.asarray(corpus.sample(0).future)  # one sample holds a truth
    future = corpus.future[:3]
    _, _, caches = rank_candidates_batch(kg, rank, routes, obs[:, -1], D)
    if min(min_preactivation_margin(c) for c in caches) < KINK_MARGIN:
        return None

    def loss_fn(params):
        rank.params = params
        p, _, cch = rank_candidates_batch(kg, rank, routes, obs[:, -1], D)
        loss, grads, _ = rank_loss_batch(rank, p, cch, routes, future)
        return loss, grads

    return loss_fn, rank.params


def _refine_instance(world, attempt: int):
    net, D, A, corpus, sampler, cfg = world
    kg = _fresh_kg(cfg, seed=800 + attempt)
    rank = _fresh_rank(net.n_edges, seed=900 + attempt)
    obs, routes = _candidates(world, 3, seed=1000 + attempt)
    last_dirs = corpus.observed_dirs[:3, -1]
    classes = corpus.goal_dirs[:3]
    future = corpus.future[:3]
    top1_dirs = candidate_dirs_batch(D, obs[:, -1], routes)[:, 0]
    _, caches = refine_logits_batch(
        kg, rank, obs[:, -1], last_dirs, classes, routes[:, 0], top1_dirs
    )
    if min(min_preactivation_margin(c) for c in caches) < KINK_MARGIN:
        return None

    def loss_fn(params):
        rank.params = params
        lg, cch = refine_logits_batch(
            kg, rank, obs[:, -1], last_dirs, classes, routes[:, 0], top1_dirs
        )
        return refine_loss_batch(rank, lg, cch, future)

    return loss_fn, rank.params


_INSTANCE_BUILDERS = {
    "representation": _rep_instance,
    "direction": _dir_instance,
    "prediction": _pred_instance,
    "rank": _rank_instance,
    "refine": _refine_instance,
}


def run_gradient_checks(seed: int = 0, instances: int = 5,
                        tol: float = 1e-4, h: float = 1e-4) -> GradCheckReport:
    """Check every loss on ``instances`` kink-free random instances each."""
    world = _build_world(seed)
    report = GradCheckReport(tolerance=tol, step=h)
    t0 = time.monotonic()
    all_ok = True
    for name, builder in _INSTANCE_BUILDERS.items():
        checked = 0
        worst = 0.0
        ok = True
        for attempt in range(instances * MAX_ATTEMPTS_PER_INSTANCE):
            inst = builder(world, attempt)
            if inst is None:
                continue
            loss_fn, params = inst
            res = grad_check(loss_fn, dict(params), tol=tol, h=h, seed=attempt)
            worst = max(worst, res["max_rel_err"])
            ok = ok and res["ok"]
            checked += 1
            if checked >= instances:
                break
        if checked < instances:
            raise NumericError(
                f"gradient check for {name!r}: only {checked} kink-free "
                f"instances found in {instances * MAX_ATTEMPTS_PER_INSTANCE} attempts"
            )
        report.losses[name] = {
            "instances": checked,
            "max_rel_err": worst,
            "ok": ok,
        }
        all_ok = all_ok and ok
    report.ok = all_ok
    report.seconds = time.monotonic() - t0
    return report
