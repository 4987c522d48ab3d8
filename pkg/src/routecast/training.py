"""Joint training of the embedding block and the reranking block.

Each iteration samples one triplet batch per relation family and one route
minibatch, then applies two decoupled AdamW updates: the embedding
parameters Θ_kg on the weighted representation, direction, and prediction
losses, and the reranking parameters Θ_r on the weighted reranking and
refinement losses (whose inputs treat embeddings as detached). Hyperplane
rows are re-normalized to unit length immediately after the step, so every
forward pass — and every post-iteration state — sees exact unit norms.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericError, UsageError
from .kgmodel import (
    GOAL,
    GOAL_D,
    NO_GOAL,
    SCENARIOS,
    KgConfig,
    KgModel,
    accumulate,
    direction_loss_batch,
    normalize_hyperplanes,
    pred_loss_batch,
    query_tail_batch,
    rep_loss,
)
from .metrics import EvalReport, compute_metrics
from .network import DirectionMatrix, NaeMatrix, RoadNetwork
from .nn import adamw_init, adamw_step
from .pipeline import corpus_batch, predict_routes
from .refine import (
    RankConfig,
    RankModel,
    rank_candidates_batch,
    rank_loss_batch,
    refine_logits_batch,
    refine_loss_batch,
)
from .rng import stream
from .spanning import choose_branching, spanning_route_batch
from .triplets import FAMILIES, TripletSampler

SCENARIO_WEIGHTS = {
    NO_GOAL: {"w_rep": 1.0, "w_rank": 1.0, "w_pred": 1.0, "w_d": 2.4},
    GOAL_D: {"w_rep": 1.0, "w_rank": 1.0, "w_pred": 1.0, "w_d": 0.0},
    GOAL: {"w_rep": 2.4, "w_rank": 2.2, "w_pred": 2.8, "w_d": 0.0},
}


@dataclass
class TrainConfig:
    scenario: str = NO_GOAL
    gamma: int | None = None          # adopted from the corpus when None
    gamma_prime: int | None = None
    n_d: int = 8
    k: int = 10
    n: int | None = None              # branching factor; smallest feasible when None
    w_rep: float = 1.0
    w_d: float = 1.0
    w_pred: float = 1.0
    w_rank: float = 1.0
    lr: float = 1e-3
    weight_decay: float = 1e-2
    batch_size: int = 2048            # triplets per family per iteration
    route_batch_size: int = 256
    max_iterations: int = 300
    patience: int = 100               # iterations without validation improvement
    eval_every: int = 10
    margin: float = 1.0
    emb_dim: int = 64
    hidden: int = 64
    score_norm: str = "l1"
    seed: int = 0

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise UsageError(f"unknown scenario: {self.scenario}")
        for name in ("w_rep", "w_d", "w_pred", "w_rank"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be >= 0")
        if self.lr <= 0 or self.weight_decay < 0:
            raise UsageError("lr must be > 0 and weight_decay >= 0")
        for name in ("batch_size", "route_batch_size", "patience",
                     "eval_every", "k", "n_d", "emb_dim", "hidden"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.max_iterations < 0:
            raise UsageError("max_iterations must be >= 0")


def config_for_scenario(scenario: str, **overrides) -> TrainConfig:
    """TrainConfig with the published per-scenario loss weights."""
    if scenario not in SCENARIO_WEIGHTS:
        raise UsageError(f"unknown scenario: {scenario}")
    merged = {**SCENARIO_WEIGHTS[scenario], "scenario": scenario, **overrides}
    return TrainConfig(**merged)


def _resolved(config: TrainConfig, corpus) -> TrainConfig:
    cfg = config
    if cfg.gamma is None or cfg.gamma_prime is None:
        cfg = replace(cfg, gamma=corpus.gamma, gamma_prime=corpus.gamma_prime)
    if cfg.gamma != corpus.gamma or cfg.gamma_prime != corpus.gamma_prime:
        raise UsageError(
            f"config window ({cfg.gamma}, {cfg.gamma_prime}) does not match "
            f"corpus ({corpus.gamma}, {corpus.gamma_prime})"
        )
    if cfg.n is None:
        cfg = replace(cfg, n=choose_branching(cfg.k, cfg.gamma_prime))
    cfg.validate()
    return cfg


def evaluate_corpus(kg: KgModel, rank: RankModel, corpus, D: DirectionMatrix,
                    A: NaeMatrix, scenario: str, split: str = "test",
                    k_list=(1, 5, 10), refine: bool = True,
                    keep_records: bool = False) -> EvalReport:
    """Predict the given split end-to-end and score it."""
    idx = corpus.split[split] if isinstance(split, str) else np.asarray(split)
    if len(idx) == 0:
        raise UsageError(f"split {split!r} is empty")
    batch = corpus_batch(corpus, idx)
    pred = predict_routes(
        kg, rank, D, A, scenario,
        batch["observed"], batch["observed_dirs"],
        goal_dirs=batch["goal_dirs"], goal_edges=batch["goal_edges"],
        refine=refine,
    )
    k_list = tuple(k for k in k_list if k <= rank.config.k)
    return compute_metrics(pred.final_routes, batch["future"], k_list,
                           keep_records=keep_records)


def _step_if_signal(state, params, grads):
    """Skip the update entirely on no-signal iterations so that zero loss
    weights leave parameters untouched (decay is tied to a gradient)."""
    if any(np.any(g) for g in grads.values()):
        adamw_step(params, grads, state)
        return True
    return False


def train(corpus, network: RoadNetwork, D: DirectionMatrix, A: NaeMatrix,
          config: TrainConfig, iteration_callback=None):
    """Returns (kg_model, rank_model, history). ``iteration_callback``, when
    given, is invoked as callback(iteration, kg, rank) after each iteration's
    update and normalization."""
    cfg = _resolved(config, corpus)
    kg = KgModel(
        KgConfig(n_edges=network.n_edges, gamma=cfg.gamma,
                 gamma_prime=cfg.gamma_prime, n_d=cfg.n_d,
                 emb_dim=cfg.emb_dim, hidden=cfg.hidden,
                 margin=cfg.margin, score_norm=cfg.score_norm),
        seed=cfg.seed,
    )
    rank = RankModel(
        RankConfig(n_edges=network.n_edges, k=cfg.k, gamma_prime=cfg.gamma_prime,
                   n_d=cfg.n_d, emb_dim=cfg.emb_dim, hidden=cfg.hidden),
        seed=cfg.seed,
    )
    sampler = TripletSampler(network, corpus, D)
    opt_kg = adamw_init(kg.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    opt_r = adamw_init(rank.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    train_idx = corpus.split["train"]
    val_idx = corpus.split["val"]
    if train_idx.size == 0:
        raise UsageError("training split is empty")

    history: list[dict] = []
    best = None
    best_r1 = -np.inf
    last_improve = 0

    for it in range(cfg.max_iterations):
        kg_grads = kg.zero_grads()
        r_grads = rank.zero_grads()
        l_rep = l_dir = l_pred = l_rank = l_refine = 0.0

        if cfg.w_rep > 0:
            for fam in FAMILIES:
                tb = sampler.sample(fam, cfg.batch_size, cfg.seed, tag=it)
                loss, grads = rep_loss(tb, kg)
                accumulate(kg_grads, grads, cfg.w_rep)
                l_rep += loss

        rng = stream(cfg.seed, "train.minibatch", it)
        take = min(cfg.route_batch_size, train_idx.size)
        mb = corpus_batch(corpus, rng.choice(train_idx, size=take, replace=False))
        obs, fut = mb["observed"], mb["future"]
        last = obs[:, -1]

        if cfg.scenario == NO_GOAL and cfg.w_d > 0:
            loss, grads = direction_loss_batch(
                kg, obs, mb["observed_dirs"], mb["goal_dirs"]
            )
            accumulate(kg_grads, grads, cfg.w_d)
            l_dir = loss

        need_query = cfg.w_pred > 0 or cfg.w_rank > 0
        if need_query:
            # teacher forcing: the true direction class drives the query
            # during training in every scenario
            classes = mb["goal_dirs"]
            goal = mb["goal_edges"] if cfg.scenario == GOAL else None
            step_probs, qcache = query_tail_batch(kg, last, classes, goal)

        if cfg.w_pred > 0:
            loss, grads = pred_loss_batch(kg, qcache, fut)
            accumulate(kg_grads, grads, cfg.w_pred)
            l_pred = loss

        if cfg.w_rank > 0:
            cands = spanning_route_batch(step_probs, A.edge_end[last], A, cfg.n, cfg.k)
            probs, dirs, caches = rank_candidates_batch(kg, rank, cands.routes, last, D)
            loss, grads, _ = rank_loss_batch(rank, probs, caches, cands.routes, fut)
            accumulate(r_grads, grads, cfg.w_rank)
            l_rank = loss

            order = np.argsort(-probs, axis=1, kind="stable")
            top = order[:, 0]
            rows = np.arange(obs.shape[0])
            logits, rcaches = refine_logits_batch(
                kg, rank, last, mb["observed_dirs"][:, -1], classes,
                cands.routes[rows, top], dirs[rows, top],
            )
            loss, grads = refine_loss_batch(rank, logits, rcaches, fut)
            accumulate(r_grads, grads, cfg.w_rank)
            l_refine = loss

        total = (cfg.w_rep * l_rep + cfg.w_d * l_dir + cfg.w_pred * l_pred
                 + cfg.w_rank * (l_rank + l_refine))
        if not np.isfinite(total):
            raise NumericError(f"training diverged at iteration {it}: loss={total}")

        kg_stepped = _step_if_signal(opt_kg, kg.params, kg_grads)
        _step_if_signal(opt_r, rank.params, r_grads)
        if kg_stepped:
            normalize_hyperplanes(kg.params, stream(cfg.seed, "train.renorm", it))

        entry = {
            "iteration": it, "loss": float(total),
            "loss_rep": float(l_rep), "loss_dir": float(l_dir),
            "loss_pred": float(l_pred), "loss_rank": float(l_rank),
            "loss_refine": float(l_refine),
        }

        if val_idx.size and (it + 1) % cfg.eval_every == 0:
            report = evaluate_corpus(kg, rank, corpus, D, A, cfg.scenario,
                                     split="val", k_list=(1,))
            r1 = report.route_recall[1]
            entry["val_route_r1"] = r1
            if r1 > best_r1:
                best_r1 = r1
                best = (
                    {k: v.copy() for k, v in kg.params.items()},
                    {k: v.copy() for k, v in rank.params.items()},
                )
                last_improve = it
        history.append(entry)
        if iteration_callback is not None:
            iteration_callback(it, kg, rank)
        if val_idx.size and it - last_improve >= cfg.patience:
            break

    if best is not None:
        for k_, v in best[0].items():
            kg.params[k_][...] = v
        for k_, v in best[1].items():
            rank.params[k_][...] = v
    return kg, rank, history
