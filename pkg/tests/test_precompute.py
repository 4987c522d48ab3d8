"""Precomputed table artifacts: fidelity and refusal behavior."""

import json

import numpy as np
import pytest

from routecast.errors import DataError, UsageError
from routecast.network import NaeMatrix, build_direction_matrix, generate_grid_network
from routecast.precompute import load_precomputed, save_precomputed


@pytest.fixture(scope="module")
def net():
    return generate_grid_network(6, seed=3, jitter=0.2)


def test_round_trip_matches_fresh_build(net, tmp_path):
    path = str(tmp_path / "pre.json")
    info = save_precomputed(path, net)
    assert info["dense"] and info["n_edges"] == net.n_edges
    D, A = load_precomputed(path, net)
    D2, A2 = build_direction_matrix(net), NaeMatrix(net)
    np.testing.assert_array_equal(D.intra, D2.intra)
    np.testing.assert_array_equal(D.dense, D2.dense)
    np.testing.assert_array_equal(A.table, A2.table)
    assert A.pad == A2.pad and A.n_a == A2.n_a
    # lookups behave identically
    rng = np.random.default_rng(0)
    h = rng.integers(0, net.n_edges, size=50)
    t = rng.integers(0, net.n_edges, size=50)
    np.testing.assert_array_equal(D.get_many(h, t), D2.get_many(h, t))


def test_sparse_mode_without_dense_table(net, tmp_path):
    path = str(tmp_path / "pre.json")
    save_precomputed(path, net, dense_cap=0)
    D, A = load_precomputed(path, net)
    assert D.dense is None
    D2 = build_direction_matrix(net)
    rng = np.random.default_rng(1)
    h = rng.integers(0, net.n_edges, size=30)
    t = rng.integers(0, net.n_edges, size=30)
    np.testing.assert_array_equal(D.get_many(h, t), D2.get_many(h, t))


def test_wrong_network_refused(net, tmp_path):
    path = str(tmp_path / "pre.json")
    save_precomputed(path, net)
    other = generate_grid_network(6, seed=4)
    with pytest.raises(DataError, match="different network"):
        load_precomputed(path, other)


def test_missing_and_corrupt_files(net, tmp_path):
    with pytest.raises(UsageError, match="not found"):
        load_precomputed(str(tmp_path / "absent.json"), net)
    path = str(tmp_path / "bad.json")
    open(path, "w").write("{not json")
    with pytest.raises(DataError, match="truncated or corrupt"):
        load_precomputed(path, net)


def test_truncated_table_refused(net, tmp_path):
    path = str(tmp_path / "pre.json")
    save_precomputed(path, net)
    doc = json.load(open(path))
    doc["nae"]["table"]["data"] = doc["nae"]["table"]["data"][:16]
    json.dump(doc, open(path, "w"))
    with pytest.raises(DataError, match="truncated|malformed"):
        load_precomputed(path, net)
