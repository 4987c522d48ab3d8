"""End-to-end tests of the HTTP service over in-process ASGI.

A single small world (6x6 grid, 300 routes, one quick GoalD training run)
is built once per module through the actual endpoints; every test then
talks to the same app the CLI uses.
"""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from routecast import __version__
from routecast.checkpoint import save_checkpoint, load_models
from routecast.corpus import load_routes
from routecast.network import load_network
from routecast.service import create_app

SIDE = 6
GAMMA, GAMMA_PRIME = 2, 3
K = 8

TRAIN_OVERRIDES = {
    "k": K, "n": 2, "emb_dim": 16, "hidden": 16,
    "batch_size": 256, "route_batch_size": 64,
    "lr": 0.01, "max_iterations": 40, "eval_every": 8,
    "patience": 1000, "seed": 0,
}


class World:
    def __init__(self, root):
        self.root = root
        self.client = TestClient(create_app())
        self.network = str(root / "net.json")
        self.routes = str(root / "routes.jsonl")
        self.pre = str(root / "pre.json")
        self.ckpt = str(root / "model.ckpt")
        self.responses = {}

    def post(self, url, payload):
        r = self.client.post(url, json=payload)
        assert r.status_code == 200, f"{url}: {r.status_code} {r.text}"
        return r.json()


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    w = World(tmp_path_factory.mktemp("svc"))
    w.responses["grid"] = w.post("/network/grid", {
        "side": SIDE, "seed": 0, "out": w.network,
    })
    w.responses["routes"] = w.post("/routes/generate", {
        "network": w.network, "count": 300, "min_len": 6, "seed": 1,
        "out": w.routes,
    })
    w.responses["pre"] = w.post("/precompute", {
        "network": w.network, "n_d": 8, "out": w.pre,
    })
    w.responses["train"] = w.post("/train", {
        "network": w.network, "routes": w.routes, "out": w.ckpt,
        "scenario": "GoalD",
        "corpus": {"gamma": GAMMA, "gamma_prime": GAMMA_PRIME, "sliding": True},
        "precomputed": w.pre,
        "overrides": TRAIN_OVERRIDES,
    })
    return w


def _assert_connected(net, window, edges):
    path = list(window[-1:]) + list(edges)
    for a, b in zip(path[:-1], path[1:]):
        assert net.edge_end[a] == net.edge_start[b], (path, a, b)


def test_health(world):
    r = world.client.get("/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert body["version"] == __version__


def test_grid_and_routes_summaries(world):
    grid = world.responses["grid"]
    assert grid["n_nodes"] == SIDE * SIDE
    assert grid["n_edges"] == 4 * SIDE * (SIDE - 1)  # both directions, both axes
    assert len(grid["edge_hash"]) == 64
    routes = world.responses["routes"]
    assert routes["count"] == 300
    assert routes["mean_edges"] >= 6


def test_train_summary(world):
    t = world.responses["train"]
    assert t["scenario"] == "goal_d"
    assert t["iterations"] == TRAIN_OVERRIDES["max_iterations"]
    assert t["n_train"] > t["n_val"] > 0 and t["n_test"] > 0
    assert t["seconds"] > 0
    assert {"loss", "loss_rep", "loss_dir", "loss_pred", "loss_rank",
            "loss_refine"} <= set(t["final_losses"])
    assert t["best_val_route_r1"] is not None
    assert 0.0 <= t["best_val_route_r1"] <= 1.0


def test_predict_single_query(world):
    net = load_network(world.network)
    window = [int(e) for e in load_routes(world.routes)[0].edges[:GAMMA]]
    body = world.post("/predict", {
        "network": world.network, "checkpoint": world.ckpt,
        "window": window, "scenario": "GoalD", "dir_class": 2, "topk": 5,
    })
    assert body["window"] == window
    assert body["scenario"] == "goal_d"
    assert body["dir_class"] == 2
    assert len(body["routes"]) == 5
    probs = [r["probability"] for r in body["routes"]]
    assert all(p >= q for p, q in zip(probs[:-1], probs[1:]))  # descending
    assert all(0.0 <= p <= 1.0 for p in probs)
    for route in body["routes"]:
        assert len(route["edges"]) == GAMMA_PRIME
        _assert_connected(net, window, route["edges"])


def test_predict_goal_scenario(world):
    window = [int(e) for e in load_routes(world.routes)[1].edges[:GAMMA]]
    goal = int(load_routes(world.routes)[1].edges[-1])
    # goal_edge missing -> usage error
    r = world.client.post("/predict", json={
        "network": world.network, "checkpoint": world.ckpt,
        "window": window, "scenario": "Goal",
    })
    assert r.status_code == 400
    assert r.json()["detail"]["category"] == "usage"
    # with a goal the direction class is derived server-side
    body = world.post("/predict", {
        "network": world.network, "checkpoint": world.ckpt,
        "window": window, "scenario": "Goal", "goal_edge": goal,
    })
    assert 0 <= body["dir_class"] < 8


def test_predict_nogoal_window_contract(world):
    routes = load_routes(world.routes)
    window3 = [int(e) for e in routes[2].edges[:3]]  # wrong length for gamma=2
    r = world.client.post("/predict", json={
        "network": world.network, "checkpoint": world.ckpt,
        "window": window3, "scenario": "NoGoal",
    })
    assert r.status_code == 400
    assert "dir_class" in r.json()["detail"]["message"]
    # explicit dir_class overrides the length requirement
    body = world.post("/predict", {
        "network": world.network, "checkpoint": world.ckpt,
        "window": window3, "scenario": "NoGoal", "dir_class": 0,
    })
    assert body["dir_class"] == 0
    # exact-length window uses the learned direction estimator
    body = world.post("/predict", {
        "network": world.network, "checkpoint": world.ckpt,
        "window": window3[:GAMMA], "scenario": "NoGoal",
    })
    assert 0 <= body["dir_class"] < 8


def test_scenario_aliases(world):
    window = [int(e) for e in load_routes(world.routes)[3].edges[:GAMMA]]
    for name in ("GoalD", "goal-d", "GOAL_D", "goald"):
        body = world.post("/predict", {
            "network": world.network, "checkpoint": world.ckpt,
            "window": window, "scenario": name, "dir_class": 1, "topk": 1,
        })
        assert body["scenario"] == "goal_d"
    r = world.client.post("/predict", json={
        "network": world.network, "checkpoint": world.ckpt,
        "window": window, "scenario": "teleport", "dir_class": 1,
    })
    assert r.status_code == 400
    assert "NoGoal, GoalD, Goal" in r.json()["detail"]["message"]


def test_predict_batch_inline(world):
    body = world.post("/predict/batch", {
        "network": world.network, "checkpoint": world.ckpt,
        "routes": world.routes, "split": "test", "limit": 4, "topk": 3,
    })
    assert body["n_samples"] == 4
    assert body["scenario"] == "goal_d"  # adopted from the checkpoint
    arr = np.asarray(body["predictions"])
    assert arr.shape == (4, 3, GAMMA_PRIME)


def test_predict_batch_to_file(world):
    out = str(world.root / "batch.json")
    body = world.post("/predict/batch", {
        "network": world.network, "checkpoint": world.ckpt,
        "routes": world.routes, "split": "val", "limit": 2, "out": out,
    })
    assert body["out"] == out and body["predictions"] is None
    with open(out) as fh:
        payload = json.load(fh)
    assert np.asarray(payload["predictions"]).shape == (2, K, GAMMA_PRIME)
    assert np.asarray(payload["rank_probs"]).shape == (2, K)


def test_eval_endpoint(world):
    out = str(world.root / "eval.json")
    body = world.post("/eval", {
        "network": world.network, "checkpoint": world.ckpt,
        "routes": world.routes, "k_list": [1, 5, 8], "out": out,
    })
    assert body["k_list"] == [1, 5, 8]
    assert body["n_samples"] > 0
    for metric in ("link_recall", "route_recall", "mrr"):
        vals = [body[metric][str(k)] for k in (1, 5, 8)]
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert vals == sorted(vals)  # recall/MRR grow with k
    with open(out) as fh:
        assert json.load(fh)["scenario"] == "goal_d"


def test_eval_k_above_checkpoint_capacity(world):
    r = world.client.post("/eval", json={
        "network": world.network, "checkpoint": world.ckpt,
        "routes": world.routes, "k_list": [1, 99],
    })
    assert r.status_code == 400
    assert "k_list" in r.json()["detail"]["message"]


def test_flow_endpoint(world):
    body = world.post("/flow", {
        "network": world.network, "checkpoint": world.ckpt,
        "routes": world.routes, "repeats": 3, "seed": 4,
    })
    assert body["repeats"] == 3 and body["tau"] == pytest.approx(0.1)
    assert body["total_true"] == body["n_samples"] * GAMMA_PRIME
    # sampling one route per window conserves the total edge count
    assert body["total_estimated"] == pytest.approx(body["total_true"])
    assert body["mae"] >= 0 and body["rmse"] >= body["mae"]
    assert body["r2"] <= 1.0


def test_gradcheck_endpoint(world):
    body = world.post("/gradcheck", {"instances": 1, "seed": 3})
    assert body["ok"] is True
    assert body["tolerance"] == pytest.approx(1e-4)
    assert set(body["losses"]) == {
        "representation", "direction", "prediction", "rank", "refine",
    }


def test_bench_endpoint(world):
    body = world.post("/bench", {
        "network": world.network, "checkpoint": world.ckpt,
        "requests": 50, "topk": 4,
    })
    assert body["requests"] == 50 and body["topk"] == 4
    assert body["scenario"] == "goal_d" and body["single_thread"] is True
    assert body["seconds"] > 0
    assert body["per_request_ms"] == pytest.approx(body["seconds"] / 50 * 1e3)


def test_unknown_train_override_rejected(world):
    r = world.client.post("/train", json={
        "network": world.network, "routes": world.routes,
        "out": str(world.root / "nope.ckpt"),
        "overrides": {"learning_rate": 0.1},
    })
    assert r.status_code == 400
    assert "unknown config keys" in r.json()["detail"]["message"]


def test_topk_above_checkpoint_capacity(world):
    window = [int(e) for e in load_routes(world.routes)[0].edges[:GAMMA]]
    r = world.client.post("/predict", json={
        "network": world.network, "checkpoint": world.ckpt,
        "window": window, "scenario": "GoalD", "dir_class": 0, "topk": 99,
    })
    assert r.status_code == 400


def test_data_errors_map_to_422(world):
    # route generation that cannot satisfy min_len on this network
    r = world.client.post("/routes/generate", json={
        "network": world.network, "count": 30, "min_len": 50,
        "out": str(world.root / "nope.jsonl"),
    })
    assert r.status_code == 422
    assert r.json()["detail"]["category"] == "data"
    # checkpoint evaluated against a different network
    other = str(world.root / "other_net.json")
    world.post("/network/grid", {"side": SIDE, "jitter": 5.0, "seed": 9, "out": other})
    r = world.client.post("/predict", json={
        "network": other, "checkpoint": world.ckpt,
        "window": [0, 1], "scenario": "GoalD", "dir_class": 0,
    })
    assert r.status_code == 422
    assert "different network" in r.json()["detail"]["message"]


def test_missing_artifacts_map_to_400(world):
    r = world.client.post("/predict", json={
        "network": world.network, "checkpoint": str(world.root / "missing.ckpt"),
        "window": [0, 1], "scenario": "GoalD", "dir_class": 0,
    })
    assert r.status_code == 400
    assert r.json()["detail"]["category"] == "usage"


def test_checkpoint_without_corpus_options(world):
    net = load_network(world.network)
    kg, rank, _ = load_models(world.ckpt, network=net)
    bare = str(world.root / "bare.ckpt")
    save_checkpoint(bare, kg, rank, net, {})
    r = world.client.post("/eval", json={
        "network": world.network, "checkpoint": bare,
        "routes": world.routes, "scenario": "GoalD", "k_list": [1],
    })
    assert r.status_code == 422
    assert "corpus options" in r.json()["detail"]["message"]
