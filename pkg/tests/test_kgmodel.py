import math

import numpy as np
import pytest

from routecast.corpus import generate_routes, split_corpus
from routecast.kgmodel import (
    GOAL,
    GOAL_D,
    NO_GOAL,
    KgConfig,
    KgModel,
    direction_logits_batch,
    direction_loss,
    direction_loss_batch,
    hyperplane_norms,
    hyperplane_project,
    normalize_hyperplanes,
    pred_loss,
    pred_loss_batch,
    predict_direction,
    query_tail,
    query_tail_batch,
    rep_loss,
    transh_score,
)
from routecast.network import build_direction_matrix, generate_grid_network
from routecast.nn import grad_check, min_preactivation_margin, mlp_forward
from routecast.rng import stream
from routecast.triplets import TripletSampler


@pytest.fixture(scope="module")
def world():
    net = generate_grid_network(5, spacing=100.0, seed=0)
    D = build_direction_matrix(net, n_d=8)
    routes = generate_routes(net, count=30, min_len=5, sigma=0.1, seed=1)
    corpus = split_corpus(routes, gamma=3, gamma_prime=2, n_d=8, D=D, seed=0)
    sampler = TripletSampler(net, corpus, D)
    cfg = KgConfig(n_edges=net.n_edges, gamma=3, gamma_prime=2, n_d=8, emb_dim=8, hidden=8)
    return net, D, corpus, sampler, cfg


def fresh_model(cfg, seed=0):
    return KgModel(cfg, seed=seed)


# ---------------------------------------------------------------------- #
# projection and scoring


def test_project_parallel_vector_vanishes():
    p = np.array([0.6, 0.8])
    v = 3.0 * p
    np.testing.assert_allclose(hyperplane_project(v, p), np.zeros(2), atol=1e-15)


def test_project_orthogonal_vector_unchanged():
    p = np.array([0.0, 1.0])
    v = np.array([2.5, 0.0])
    np.testing.assert_allclose(hyperplane_project(v, p), v)


def test_project_component_removal():
    out = hyperplane_project(np.array([1.0, 2.0]), np.array([0.0, 1.0]))
    np.testing.assert_allclose(out, [1.0, 0.0])


def test_transh_score_trivial_cases():
    p = np.array([0.0, 1.0])
    h = np.array([1.0, 2.0])
    assert transh_score(h, np.zeros(2), h, p) == 0.0
    # both entities parallel to p project to zero
    assert transh_score(2 * p, np.zeros(2), -3 * p, p) == 0.0
    assert transh_score(np.array([1.0, 2.0]), np.zeros(2), np.zeros(2), p) == 1.0


def test_transh_score_invariant_to_normal_component():
    rng = np.random.default_rng(0)
    p = rng.standard_normal(6)
    p /= np.linalg.norm(p)
    h, r, t = rng.standard_normal((3, 6))
    base = transh_score(h, r, t, p)
    for alpha in (-3.0, 0.7, 12.0):
        assert transh_score(h + alpha * p, r, t, p) == pytest.approx(base, abs=1e-9)
        assert transh_score(h, r, t + alpha * p, p) == pytest.approx(base, abs=1e-9)


# ---------------------------------------------------------------------- #
# hyperplane normalization


def test_normalize_rescales_rows():
    params = {"P.direction_to": np.array([[3.0, 4.0], [0.0, 2.0]])}
    normalize_hyperplanes(params)
    np.testing.assert_allclose(params["P.direction_to"][0], [0.6, 0.8])
    np.testing.assert_allclose(params["P.direction_to"][1], [0.0, 1.0])


def test_normalize_rerandomizes_dead_rows():
    params = {"P.connect_by": np.array([[0.0, 0.0, 0.0]])}
    normalize_hyperplanes(params, stream(0, "norm"))
    assert np.linalg.norm(params["P.connect_by"][0]) == pytest.approx(1.0, abs=1e-12)


def test_model_init_hyperplanes_unit(world):
    *_, cfg = world
    model = fresh_model(cfg)
    norms = hyperplane_norms(model.params)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)


# ---------------------------------------------------------------------- #
# representation loss


def test_rep_loss_inactive_hinge_zero(world):
    net, D, corpus, sampler, cfg = world
    model = fresh_model(cfg)
    batch = sampler.sample("connect_by", 8, seed=0)
    # force scores: make positives perfect (h==t after proj impossible); instead
    # scale margin to -inf equivalent: use margin 0 and identical pos/neg -> loss 0?
    # Simplest honest check: compute scores and verify hinge arithmetic.
    loss, _ = rep_loss(batch, model)
    E, R, P = model.params["W_E"], model.params["R.connect_by"], model.params["P.connect_by"]
    want = 0.0
    for pos, neg in zip(batch.positives, batch.negatives):
        sp = transh_score(E[pos.head], R[pos.index], E[pos.tail], P[pos.index])
        sn = transh_score(E[neg.head], R[neg.index], E[neg.tail], P[neg.index])
        want += max(sp + cfg.margin - sn, 0.0)
    assert loss == pytest.approx(want, rel=1e-12)
    assert loss >= 0.0


def test_rep_loss_equal_scores_cost_margin(world):
    net, D, corpus, sampler, cfg = world
    model = fresh_model(cfg)
    batch = sampler.sample("direction_to", 6, seed=1)
    # same triplet as pos and neg -> equal scores -> pair loss = margin each
    batch.neg_head = batch.pos_head.copy()
    batch.neg_rel = batch.pos_rel.copy()
    batch.neg_tail = batch.pos_tail.copy()
    loss, _ = rep_loss(batch, model)
    assert loss == pytest.approx(6 * cfg.margin, rel=1e-12)


def _rep_instance(world, norm, attempt):
    """Draw a rep_loss instance away from hinge and sign kinks."""
    net, D, corpus, sampler, cfg0 = world
    cfg = KgConfig(**{**cfg0.__dict__, "score_norm": norm})
    model = fresh_model(cfg, seed=100 + attempt)
    batch = sampler.sample("distance_to", 4, seed=200 + attempt)
    E, R, P = model.params["W_E"], model.params[f"R.{batch.family}"], model.params[f"P.{batch.family}"]

    def terms(heads, rels, tails):
        h, t = E[heads], E[tails]
        p, r = P[rels], R[rels]
        u = hyperplane_project(h, p) + r - hyperplane_project(t, p)
        phi = np.abs(u).sum(1) if norm == "l1" else np.sqrt((u * u).sum(1))
        return u, phi

    u_p, phi_p = terms(batch.pos_head, batch.pos_rel, batch.pos_tail)
    u_n, phi_n = terms(batch.neg_head, batch.neg_rel, batch.neg_tail)
    margin_gap = np.min(np.abs(phi_p + cfg.margin - phi_n))
    kink = min(np.min(np.abs(u_p)), np.min(np.abs(u_n))) if norm == "l1" else 1.0
    if margin_gap < 1e-3 or kink < 1e-3:
        return None
    return model, batch


@pytest.mark.parametrize("norm", ["l1", "l2"])
def test_rep_loss_gradients(world, norm):
    for attempt in range(20):
        inst = _rep_instance(world, norm, attempt)
        if inst is None:
            continue
        model, batch = inst

        def loss_fn(params):
            model.params = params
            return rep_loss(batch, model)

        report = grad_check(loss_fn, model.params, tol=1e-4, seed=attempt)
        assert report["ok"], report
        return
    pytest.fail("no kink-free instance found in 20 attempts")


# ---------------------------------------------------------------------- #
# direction estimator


def test_zero_mlp_gives_uniform_logits_and_class_zero(world):
    *_, cfg = world
    model = fresh_model(cfg)
    for i in range(2):
        model.params[f"mlp_d.W{i}"][:] = 0.0
        model.params[f"mlp_d.b{i}"][:] = 0.0
    s = _one_sample(world)
    cls, logits = predict_direction(s, model)
    np.testing.assert_array_equal(logits, np.zeros(cfg.n_d))
    assert cls == 0  # tie broken toward the lower class


def _one_sample(world):
    net, D, corpus, *_ = world
    return corpus.sample(0)


def test_direction_loss_uniform_is_log_nd(world):
    *_, cfg = world
    model = fresh_model(cfg)
    for i in range(2):
        model.params[f"mlp_d.W{i}"][:] = 0.0
        model.params[f"mlp_d.b{i}"][:] = 0.0
    s = _one_sample(world)
    loss, _ = direction_loss(s, model)
    assert loss == pytest.approx(math.log(cfg.n_d), rel=1e-12)


def test_direction_loss_gradients(world):
    net, D, corpus, sampler, cfg = world
    obs = corpus.observed[:3]
    dirs = corpus.observed_dirs[:3]
    targets = corpus.goal_dirs[:3]
    for attempt in range(20):
        model = fresh_model(cfg, seed=300 + attempt)
        logits, (mcache, *_rest) = direction_logits_batch(model, obs, dirs)
        if min_preactivation_margin(mcache) < 1e-3:
            continue

        def loss_fn(params):
            model.params = params
            return direction_loss_batch(model, obs, dirs, targets)

        report = grad_check(loss_fn, model.params, tol=1e-4, seed=attempt)
        assert report["ok"], report
        return
    pytest.fail("no kink-free instance found")


# ---------------------------------------------------------------------- #
# tail queries


def test_query_uniform_when_entities_zero(world):
    net, D, corpus, sampler, cfg = world
    model = fresh_model(cfg)
    model.params["W_E"][:] = 0.0
    s = _one_sample(world)
    dists = query_tail(s, model, GOAL_D)
    n_e = cfg.n_edges
    assert dists.probs.shape == (cfg.gamma_prime, n_e + 1)
    np.testing.assert_allclose(dists.probs[:, :n_e], 1.0 / n_e, atol=1e-12)
    np.testing.assert_array_equal(dists.probs[:, n_e], 0.0)


def test_query_rows_sum_to_one_pad_zero(world):
    net, D, corpus, sampler, cfg = world
    model = fresh_model(cfg, seed=4)
    for i in range(min(6, len(corpus))):
        s = corpus.sample(i)
        for scenario in (NO_GOAL, GOAL_D, GOAL):
            dists = query_tail(s, model, scenario)
            sums = dists.probs.sum(axis=1)
            np.testing.assert_allclose(sums, 1.0, atol=1e-6)
            assert np.all(dists.probs[:, -1] == 0.0)


def test_query_dir_override_transparent(world):
    net, D, corpus, sampler, cfg = world
    model = fresh_model(cfg, seed=5)
    s = _one_sample(world)
    a = query_tail(s, model, GOAL_D)
    b = query_tail(s, model, GOAL_D, dir_override=s.goal_dir)
    np.testing.assert_array_equal(a.probs, b.probs)


def test_query_invalid_override_rejected(world):
    net, D, corpus, sampler, cfg = world
    model = fresh_model(cfg)
    s = _one_sample(world)
    from routecast.errors import UsageError

    with pytest.raises(UsageError, match="override"):
        query_tail(s, model, GOAL_D, dir_override=cfg.n_d)


def test_query_matches_scalar_oracle(world):
    """Independent loop-based recomputation of the full query pipeline."""
    net, D, corpus, sampler, cfg = world
    model = fresh_model(cfg, seed=6)
    s = _one_sample(world)
    dists = query_tail(s, model, GOAL)

    E = model.params["W_E"]
    Ra = model.params["R.distance_to"]
    cls = s.goal_dir
    p = model.params["P.direction_to"][cls]
    r_d = model.params["R.direction_to"][cls]

    def proj(v):
        return [v[i] - sum(v[j] * p[j] for j in range(len(p))) * p[i] for i in range(len(v))]

    base = proj(E[s.observed[-1]])
    gproj = proj(E[s.goal_edge])
    base = [base[i] + gproj[i] for i in range(len(base))]
    for g in range(cfg.gamma_prime):
        q = [(base[i] + r_d[i]) * Ra[g][i] for i in range(cfg.emb_dim)]
        logits = []
        for e in range(cfg.n_edges):
            pe = proj(E[e])
            logits.append(sum(pe[i] * q[i] for i in range(cfg.emb_dim)))
        m = max(logits)
        exps = [math.exp(x - m) for x in logits]
        Z = sum(exps)
        for e in range(cfg.n_edges):
            assert dists.probs[g, e] == pytest.approx(exps[e] / Z, rel=1e-9, abs=1e-12)


def test_no_goal_uses_estimated_class(world):
    net, D, corpus, sampler, cfg = world
    model = fresh_model(cfg, seed=7)
    s = _one_sample(world)
    est, _ = predict_direction(s, model)
    a = query_tail(s, model, NO_GOAL)
    b = query_tail(s, model, GOAL_D, dir_override=est)
    np.testing.assert_array_equal(a.probs, b.probs)


# ---------------------------------------------------------------------- #
# prediction loss


def test_pred_loss_uniform_value(world):
    net, D, corpus, sampler, cfg = world
    model = fresh_model(cfg)
    model.params["W_E"][:] = 0.0
    s = _one_sample(world)
    dists = query_tail(s, model, GOAL_D)
    loss, _ = pred_loss(s, dists, model)
    assert loss == pytest.approx(cfg.gamma_prime * math.log(cfg.n_edges), rel=1e-12)


@pytest.mark.parametrize("scenario", [GOAL_D, GOAL])
def test_pred_loss_gradients(world, scenario):
    net, D, corpus, sampler, cfg = world
    model = fresh_model(cfg, seed=8)
    obs = corpus.observed[:3]
    future = corpus.future[:3]
    classes = corpus.goal_dirs[:3]
    goal = corpus.goal_edges[:3] if scenario == GOAL else None

    def loss_fn(params):
        model.params = params
        _, cache = query_tail_batch(model, obs[:, -1], classes, goal)
        return pred_loss_batch(model, cache, future)

    report = grad_check(loss_fn, model.params, tol=1e-4, seed=0)
    # mlp_d params are untouched by this loss; their gradient must be absent
    assert report["ok"], report


def test_pred_loss_gradient_keys_cover_touched_blocks(world):
    net, D, corpus, sampler, cfg = world
    model = fresh_model(cfg, seed=9)
    _, cache = query_tail_batch(model, corpus.observed[:2, -1], corpus.goal_dirs[:2], None)
    _, grads = pred_loss_batch(model, cache, corpus.future[:2])
    assert set(grads) == {"W_E", "R.direction_to", "R.distance_to", "P.direction_to"}
