"""Hyperplane-translation knowledge-graph model and route-step queries.

Entities are directed edges; relations come in four families (connect_by,
consistent_with, distance_to, direction_to), each with its own translation
vectors and unit hyperplane normals. Scoring projects entities onto a
relation's hyperplane and measures ‖h⊥ + r − t⊥‖.

Route prediction queries the tail distribution for each future step γ:
    q_γ = (e_last⊥ [+ e_goal⊥] + r_dir) ⊙ r_dist[γ]
    logits_γ = project(W_E) · q_γ     (PAD slot masked to −∞)
with the hyperplane taken from the direction class in use — estimated by the
direction MLP when no goal information is available, the true class
otherwise. All gradients are hand-derived; ``grad_check`` in tests is the
authority that they stay correct.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .nn import (
    Mlp,
    mlp_backward,
    mlp_forward,
    mlp_init,
    softmax,
    softmax_cross_entropy_batch,
)
from .rng import stream
from .triplets import FAMILIES, TripletBatch

NO_GOAL = "no_goal"
GOAL_D = "goal_d"
GOAL = "goal"
SCENARIOS = (NO_GOAL, GOAL_D, GOAL)


@dataclass
class KgConfig:
    n_edges: int
    gamma: int
    gamma_prime: int
    n_d: int = 8
    emb_dim: int = 64
    hidden: int = 64
    margin: float = 1.0
    score_norm: str = "l1"  # "l1" or "l2"

    def family_cardinality(self, family: str) -> int:
        return {
            "connect_by": 1,
            "consistent_with": 1,
            "distance_to": self.gamma_prime,
            "direction_to": self.n_d,
        }[family]


class KgModel:
    """Parameter container: embeddings, hyperplanes, direction estimator.

    ``params`` is the single source of truth; the ``mlp_d`` object rebinds
    to the dict before every forward so external code may swap or perturb
    arrays freely (the gradient checker does).
    """

    def __init__(self, config: KgConfig, seed: int = 0):
        if config.score_norm not in ("l1", "l2"):
            raise UsageError(f"unknown score norm: {config.score_norm}")
        self.config = config
        d = config.emb_dim
        bound = 6.0 / np.sqrt(d)
        rng = stream(seed, "init.kg")
        params: dict[str, np.ndarray] = {
            "W_E": rng.uniform(-bound, bound, size=(config.n_edges, d))
        }
        for fam in FAMILIES:
            card = config.family_cardinality(fam)
            params[f"R.{fam}"] = rng.uniform(-bound, bound, size=(card, d))
            params[f"P.{fam}"] = rng.uniform(-bound, bound, size=(card, d))
        self.mlp_d = mlp_init(
            "mlp_d",
            [2 * config.gamma * d, config.hidden, config.n_d],
            stream(seed, "init.mlp_d"),
        )
        params.update(dict(self.mlp_d.param_items()))
        self.params = params
        normalize_hyperplanes(self.params, stream(seed, "init.norm"))

    @property
    def pad(self) -> int:
        return self.config.n_edges

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def accumulate(dst: dict[str, np.ndarray], src: dict[str, np.ndarray], weight: float = 1.0) -> None:
    """dst += weight · src for every key present in src."""
    for k, g in src.items():
        dst[k] += weight * g


# ---------------------------------------------------------------------- #
# hyperplane algebra


def hyperplane_project(vec: np.ndarray, p: np.ndarray) -> np.ndarray:
    """vec − (pᵀvec)p along the last axis; p rows must be unit length."""
    coef = np.sum(vec * p, axis=-1, keepdims=True)
    return vec - coef * p


def transh_score(h: np.ndarray, r: np.ndarray, t: np.ndarray, p: np.ndarray,
                 norm: str = "l1") -> float:
    u = hyperplane_project(h, p) + r - hyperplane_project(t, p)
    if norm == "l1":
        return float(np.sum(np.abs(u)))
    return float(np.sqrt(np.sum(u * u)))


def normalize_hyperplanes(params: dict[str, np.ndarray], rng: np.random.Generator | None = None):
    """Rescale every hyperplane row to unit ℓ2 norm, in place.

    Rows that collapsed below 1e-12 are re-randomized first (from ``rng``,
    or a fixed generator when none is supplied, keeping runs reproducible).
    """
    for key in params:
        if not key.startswith("P."):
            continue
        P = params[key]
        norms = np.linalg.norm(P, axis=1)
        dead = norms < 1e-12
        if dead.any():
            if rng is None:
                rng = np.random.default_rng(0)
            P[dead] = rng.standard_normal((int(dead.sum()), P.shape[1]))
            norms = np.linalg.norm(P, axis=1)
        P /= norms[:, None]
    return params


def hyperplane_norms(params: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate(
        [np.linalg.norm(v, axis=1) for k, v in sorted(params.items()) if k.startswith("P.")]
    )


# ---------------------------------------------------------------------- #
# representation loss (margin hinge over paired triplets)


def rep_loss(batch: TripletBatch, model: KgModel):
    """Sum over pairs of [score(pos) + ψ − score(neg)]₊ with gradients.

    Hand-derived chain rule through the projections:
      u = h⊥ + r − t⊥,  s = ∂‖u‖/∂u
      ∂/∂h = s − (sᵀp)p          ∂/∂t = −(s − (sᵀp)p)        ∂/∂r = s
      ∂/∂p = −[(sᵀp)(h−t) + (pᵀ(h−t))s]
    """
    cfg = model.config
    params = model.params
    E = params["W_E"]
    R = params[f"R.{batch.family}"]
    P = params[f"P.{batch.family}"]

    def score_terms(heads, rels, tails):
        h = E[heads]
        t = E[tails]
        r = R[rels]
        p = P[rels]
        u = hyperplane_project(h, p) + r - hyperplane_project(t, p)
        if cfg.score_norm == "l1":
            phi = np.sum(np.abs(u), axis=1)
            s = np.sign(u)
        else:
            phi = np.sqrt(np.sum(u * u, axis=1))
            s = u / np.maximum(phi[:, None], 1e-300)
        return phi, s, h, t, p

    phi_p, s_p, h_p, t_p, p_p = score_terms(batch.pos_head, batch.pos_rel, batch.pos_tail)
    phi_n, s_n, h_n, t_n, p_n = score_terms(batch.neg_head, batch.neg_rel, batch.neg_tail)
    margin_terms = phi_p + cfg.margin - phi_n
    active = margin_terms > 0.0
    loss = float(np.sum(margin_terms[active]))

    grads = {
        "W_E": np.zeros_like(E),
        f"R.{batch.family}": np.zeros_like(R),
        f"P.{batch.family}": np.zeros_like(P),
    }

    def backprop(sign, s, h, t, p, heads, rels, tails):
        s = s[active] * sign
        h, t, p = h[active], t[active], p[active]
        heads, rels, tails = heads[active], rels[active], tails[active]
        sp = np.sum(s * p, axis=1, keepdims=True)
        dh = s - sp * p
        w = h - t
        pw = np.sum(p * w, axis=1, keepdims=True)
        dp = -(sp * w + pw * s)
        np.add.at(grads["W_E"], heads, dh)
        np.add.at(grads["W_E"], tails, -dh)
        np.add.at(grads[f"R.{batch.family}"], rels, s)
        np.add.at(grads[f"P.{batch.family}"], rels, dp)

    backprop(+1.0, s_p, h_p, t_p, p_p, batch.pos_head, batch.pos_rel, batch.pos_tail)
    backprop(-1.0, s_n, h_n, t_n, p_n, batch.neg_head, batch.neg_rel, batch.neg_tail)
    return loss, grads


# ---------------------------------------------------------------------- #
# direction estimation


def direction_logits_batch(model: KgModel, obs_edges: np.ndarray, obs_dirs: np.ndarray):
    """MLP over [Γ observed edge embeddings ‖ Γ observed direction-relation
    embeddings]; returns (logits (B, n_d), cache)."""
    params = model.params
    B = obs_edges.shape[0]
    e_part = params["W_E"][obs_edges].reshape(B, -1)
    r_part = params["R.direction_to"][obs_dirs].reshape(B, -1)
    x = np.concatenate([e_part, r_part], axis=1)
    model.mlp_d.load_params(params)
    logits, mcache = mlp_forward(model.mlp_d, x)
    return logits, (mcache, obs_edges, obs_dirs)


def predict_direction(sample, model: KgModel):
    """(class index, logits) for one sample; ties break to the lower class."""
    obs = np.asarray([sample.observed], dtype=np.int64)
    dirs = np.asarray([sample.observed_dirs], dtype=np.int64)
    logits, _ = direction_logits_batch(model, obs, dirs)
    return int(np.argmax(logits[0])), logits[0]


def direction_loss_batch(model: KgModel, obs_edges, obs_dirs, targets):
    """Summed cross-entropy of the direction estimator; full backprop into
    the MLP, the observed edge embeddings, and the direction relations."""
    cfg = model.config
    logits, (mcache, obs_e, obs_d) = direction_logits_batch(model, obs_edges, obs_dirs)
    losses, _, dlogits = softmax_cross_entropy_batch(logits, targets)
    loss = float(np.sum(losses))
    mlp_grads, dx = mlp_backward(model.mlp_d, mcache, dlogits)
    B = obs_e.shape[0]
    d = cfg.emb_dim
    half = cfg.gamma * d
    de = dx[:, :half].reshape(B, cfg.gamma, d)
    dr = dx[:, half:].reshape(B, cfg.gamma, d)
    grads = dict(mlp_grads)
    grads["W_E"] = np.zeros_like(model.params["W_E"])
    grads["R.direction_to"] = np.zeros_like(model.params["R.direction_to"])
    np.add.at(grads["W_E"], obs_e, de)
    np.add.at(grads["R.direction_to"], obs_d, dr)
    return loss, grads


def direction_loss(sample, model: KgModel):
    obs = np.asarray([sample.observed], dtype=np.int64)
    dirs = np.asarray([sample.observed_dirs], dtype=np.int64)
    targets = np.asarray([sample.goal_dir], dtype=np.int64)
    return direction_loss_batch(model, obs, dirs, targets)


# ---------------------------------------------------------------------- #
# step-wise tail queries


@dataclass
class QueryCache:
    last_edges: np.ndarray      # (B,)
    goal_edges: np.ndarray | None
    dir_classes: np.ndarray     # (B,)
    p: np.ndarray               # (B, δ) hyperplane rows used
    base: np.ndarray            # (B, δ) projected head (+ goal) sum
    q: np.ndarray               # (B, Γ′, δ)
    probs: np.ndarray           # (B, Γ′, |E|+1)
    Ep: np.ndarray              # (B, |E|)


@dataclass
class StepDistributions:
    probs: np.ndarray           # (Γ′, |E|+1); PAD slot always 0
    cache: QueryCache = field(repr=False, default=None)


def query_tail_batch(model: KgModel, last_edges: np.ndarray,
                     dir_classes: np.ndarray, goal_edges: np.ndarray | None):
    """Step distributions for a batch. Returns (probs (B, Γ′, |E|+1), cache)."""
    cfg = model.config
    params = model.params
    E = params["W_E"]
    Ra = params["R.distance_to"]
    p = params["P.direction_to"][dir_classes]
    r_d = params["R.direction_to"][dir_classes]

    base = hyperplane_project(E[last_edges], p)
    if goal_edges is not None:
        base = base + hyperplane_project(E[goal_edges], p)
    mix = base + r_d                                   # (B, δ)
    q = mix[:, None, :] * Ra[None, :, :]               # (B, Γ′, δ)

    Ep = p @ E.T                                       # (B, |E|)
    B = last_edges.shape[0]
    flatq = q.reshape(B * cfg.gamma_prime, -1)
    raw = (flatq @ E.T).reshape(B, cfg.gamma_prime, -1)
    pq = np.sum(p[:, None, :] * q, axis=2)             # (B, Γ′)
    logits = raw - pq[:, :, None] * Ep[:, None, :]
    full = np.concatenate(
        [logits, np.full((B, cfg.gamma_prime, 1), -np.inf)], axis=2
    )
    probs = softmax(full)
    cache = QueryCache(
        last_edges=np.asarray(last_edges),
        goal_edges=None if goal_edges is None else np.asarray(goal_edges),
        dir_classes=np.asarray(dir_classes),
        p=p, base=base, q=q, probs=probs, Ep=Ep,
    )
    return probs, cache


def resolve_direction_classes(model: KgModel, scenario: str, obs_edges, obs_dirs,
                              goal_dirs, dir_override=None, use_true: bool = False):
    """Direction class per sample: override > true label (goal scenarios or
    teacher forcing) > estimator argmax."""
    if scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario: {scenario}")
    if dir_override is not None:
        classes = np.broadcast_to(
            np.asarray(dir_override, dtype=np.int64), (obs_edges.shape[0],)
        ).copy()
        if np.any((classes < 0) | (classes >= model.config.n_d)):
            raise UsageError(f"direction override out of range 0..{model.config.n_d - 1}")
        return classes
    if scenario == NO_GOAL and not use_true:
        logits, _ = direction_logits_batch(model, obs_edges, obs_dirs)
        return np.argmax(logits, axis=1).astype(np.int64)
    return np.asarray(goal_dirs, dtype=np.int64)


def query_tail(sample, model: KgModel, scenario: str, dir_override=None) -> StepDistributions:
    """Single-sample wrapper; see ``query_tail_batch`` for the math."""
    obs = np.asarray([sample.observed], dtype=np.int64)
    dirs = np.asarray([sample.observed_dirs], dtype=np.int64)
    classes = resolve_direction_classes(
        model, scenario, obs, dirs, np.asarray([sample.goal_dir]), dir_override
    )
    last = obs[:, -1]
    goal = np.asarray([sample.goal_edge], dtype=np.int64) if scenario == GOAL else None
    probs, cache = query_tail_batch(model, last, classes, goal)
    return StepDistributions(probs=probs[0], cache=cache)


def pred_loss_batch(model: KgModel, cache: QueryCache, future: np.ndarray):
    """−Σ_γ log p_γ[true edge], summed over the batch, with gradients.

    Backward through logits = E·q − (E·p)(pᵀq), the elementwise relation
    mix, and both hyperplane projections; see the derivative comments
    inline. Gradient keys: W_E, R.direction_to, R.distance_to,
    P.direction_to.
    """
    cfg = model.config
    params = model.params
    E = params["W_E"]
    Ra = params["R.distance_to"]
    B, gp, _ = cache.probs.shape

    rows = np.arange(B)[:, None]
    steps = np.arange(gp)[None, :]
    pt = cache.probs[rows, steps, future]
    if np.any(pt <= 0.0):
        loss = np.inf
    else:
        loss = float(-np.sum(np.log(pt)))

    dl = cache.probs[:, :, : cfg.n_edges].copy()       # PAD column carries no grad
    np.subtract.at(dl, (rows, steps, future), 1.0)

    p = cache.p
    q = cache.q
    Ep = cache.Ep
    pq = np.sum(p[:, None, :] * q, axis=2)             # (B, Γ′)

    flat_dl = dl.reshape(B * gp, -1)
    # dE (logits path): Σ outer(dl, q − (pᵀq)p)
    qprime = q - pq[:, :, None] * p[:, None, :]
    dE = flat_dl.T @ qprime.reshape(B * gp, -1)

    # dq = Eᵀdl − ((Ep)·dl) p
    dLE = (flat_dl @ E).reshape(B, gp, -1)
    epdl = np.sum(Ep[:, None, :] * dl, axis=2)          # (B, Γ′)
    dq = dLE - epdl[:, :, None] * p[:, None, :]

    # dp (logits path): −Σ_γ [(pᵀq)(Eᵀdl) + (dlᵀEp) q]
    dp = -np.sum(pq[:, :, None] * dLE + epdl[:, :, None] * q, axis=1)

    # through q = mix ⊙ r_a[γ]
    dmix = np.sum(dq * Ra[None, :, :], axis=1)          # (B, δ)
    dRa = np.einsum("bgd,bd->gd", dq, cache.base + params["R.direction_to"][cache.dir_classes])

    # mix = base + r_d;  base = Σ projections v − (pᵀv)p
    dbase = dmix
    dr_d = dmix
    grads = {
        "W_E": dE,
        "R.direction_to": np.zeros_like(params["R.direction_to"]),
        "R.distance_to": dRa,
        "P.direction_to": np.zeros_like(params["P.direction_to"]),
    }
    np.add.at(grads["R.direction_to"], cache.dir_classes, dr_d)

    gb_p = np.sum(dbase * p, axis=1, keepdims=True)
    for edge_ids in ([cache.last_edges] if cache.goal_edges is None
                     else [cache.last_edges, cache.goal_edges]):
        v = E[edge_ids]
        dv = dbase - gb_p * p
        np.add.at(grads["W_E"], edge_ids, dv)
        pv = np.sum(p * v, axis=1, keepdims=True)
        dp += -(gb_p * v + pv * dbase)

    np.add.at(grads["P.direction_to"], cache.dir_classes, dp)
    return loss, grads


def pred_loss(sample, dists: StepDistributions, model: KgModel):
    """Per-sample wrapper over ``pred_loss_batch``."""
    future = np.asarray([sample.future], dtype=np.int64)
    return pred_loss_batch(model, dists.cache, future)
