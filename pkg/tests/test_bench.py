"""Throughput measurement: window synthesis and report integrity."""

import numpy as np
import pytest

from routecast.bench import random_windows, run_bench
from routecast.errors import UsageError
from routecast.kgmodel import GOAL, KgConfig, KgModel
from routecast.network import NaeMatrix, build_direction_matrix, generate_grid_network
from routecast.refine import RankConfig, RankModel


@pytest.fixture(scope="module")
def world():
    net = generate_grid_network(5, seed=0)
    D = build_direction_matrix(net)
    A = NaeMatrix(net)
    kg = KgModel(KgConfig(n_edges=net.n_edges, gamma=2, gamma_prime=2,
                          emb_dim=8, hidden=8), seed=0)
    rank = RankModel(RankConfig(n_edges=net.n_edges, k=4, gamma_prime=2,
                                emb_dim=8, hidden=8), seed=0)
    return net, D, A, kg, rank


def test_random_windows_are_connected(world):
    net, D, A, kg, rank = world
    obs, dirs = random_windows(net, A, D, 200, gamma=3, seed=1)
    assert obs.shape == dirs.shape == (200, 3)
    assert np.all(net.edge_end[obs[:, :-1]] == net.edge_start[obs[:, 1:]])
    np.testing.assert_array_equal(dirs[:, 0], D.intra[obs[:, 0]])
    np.testing.assert_array_equal(dirs[:, 1:], D.get_many(obs[:, :-1], obs[:, 1:]))


def test_random_windows_deterministic(world):
    net, D, A, kg, rank = world
    a, _ = random_windows(net, A, D, 50, gamma=2, seed=5)
    b, _ = random_windows(net, A, D, 50, gamma=2, seed=5)
    c, _ = random_windows(net, A, D, 50, gamma=2, seed=6)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_report_fields_and_scenarios(world):
    net, D, A, kg, rank = world
    rep = run_bench(net, kg, rank, D, A, requests=64, topk=4,
                    scenario=GOAL, seed=2, single_thread=False)
    assert rep["requests"] == 64 and rep["topk"] == 4
    assert rep["seconds"] > 0
    assert rep["per_request_ms"] == pytest.approx(rep["seconds"] / 64 * 1e3)
    assert rep["predictions_per_second"] == pytest.approx(64 / rep["seconds"])


def test_single_thread_limits_blas(world):
    net, D, A, kg, rank = world
    rep = run_bench(net, kg, rank, D, A, requests=32, topk=2, single_thread=True)
    assert rep["single_thread"] is True


def test_bad_arguments(world):
    net, D, A, kg, rank = world
    with pytest.raises(UsageError, match="topk"):
        run_bench(net, kg, rank, D, A, requests=8, topk=99)
    with pytest.raises(UsageError, match="requests"):
        run_bench(net, kg, rank, D, A, requests=0, topk=2)
    with pytest.raises(UsageError, match="scenario"):
        run_bench(net, kg, rank, D, A, requests=8, topk=2, scenario="teleport")
