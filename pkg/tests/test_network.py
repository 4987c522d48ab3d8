import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bearing_scalar, discretize_scalar
from routecast.errors import DataError, UsageError
from routecast.network import (
    DirectionMatrix,
    NaeMatrix,
    RoadNetwork,
    bearing_deg,
    build_direction_matrix,
    build_nae_matrix,
    discretize_bearing,
    edge_direction,
    generate_grid_network,
    load_network,
    network_from_records,
    save_network,
)


def tiny_two_edge(stack_north=True):
    """Two east-heading edges, the second one stacked 100 m north of the first."""
    nodes = [
        {"id": 0, "lat": 30.0, "lon": 104.0},
        {"id": 1, "lat": 30.0, "lon": 104.001},
        {"id": 2, "lat": 30.0009, "lon": 104.0},
        {"id": 3, "lat": 30.0009, "lon": 104.001},
    ]
    edges = [
        {"id": 0, "u": 0, "v": 1, "key": 0, "length": 96.0},
        {"id": 1, "u": 2, "v": 3, "key": 0, "length": 96.0},
    ]
    return nodes, edges


def make_network(nodes, edges):
    node_recs = [(i, n, i + 1) for i, n in enumerate(nodes)]
    edge_recs = [(i, e, i + 1) for i, e in enumerate(edges)]
    return network_from_records(node_recs, edge_recs, where="inline")


# ---------------------------------------------------------------------- #
# bearings and discretization


def test_bearing_cardinal_directions():
    assert bearing_deg(30.0, 104.0, 30.001, 104.0) == pytest.approx(0.0)       # north
    assert bearing_deg(30.0, 104.0, 30.0, 104.001) == pytest.approx(90.0)      # east
    assert bearing_deg(30.0, 104.0, 29.999, 104.0) == pytest.approx(180.0)     # south
    assert bearing_deg(30.0, 104.0, 30.0, 103.999) == pytest.approx(270.0)     # west


def test_bearing_coincident_points_is_zero():
    assert bearing_deg(30.0, 104.0, 30.0, 104.0) == 0.0


@given(
    lat1=st.floats(-60, 60), lon1=st.floats(-179, 179),
    dlat=st.floats(-0.01, 0.01), dlon=st.floats(-0.01, 0.01),
)
@settings(max_examples=200, deadline=None)
def test_bearing_matches_scalar_oracle(lat1, lon1, dlat, dlon):
    lat2, lon2 = lat1 + dlat, lon1 + dlon
    got = bearing_deg(lat1, lon1, lat2, lon2)
    want = bearing_scalar(lat1, lon1, lat2, lon2)
    assert got == pytest.approx(want, abs=1e-9)
    assert 0.0 <= got < 360.0


def test_discretize_sector_conventions():
    # sector 0 is centered on north
    assert discretize_bearing(0.0, 8) == 0
    assert discretize_bearing(359.0, 8) == 0
    assert discretize_bearing(90.0, 8) == 2
    assert discretize_bearing(180.0, 8) == 4
    assert discretize_bearing(270.0, 8) == 6
    # boundary: 22.5 is the first angle past sector 0
    assert discretize_bearing(22.5, 8) == 1
    assert discretize_bearing(22.5 - 1e-9, 8) == 0
    assert discretize_bearing(337.5, 8) == 0


def test_discretize_partitions_circle():
    rng = np.random.default_rng(0)
    thetas = rng.uniform(0.0, 360.0, size=10_000)
    for n_d in (4, 8, 12):
        classes = np.array([discretize_bearing(t, n_d) for t in thetas])
        assert classes.min() >= 0 and classes.max() < n_d
        # periodicity
        for k in (-2, 1, 3):
            shifted = np.array([discretize_bearing(t + 360.0 * k, n_d) for t in thetas[:200]])
            np.testing.assert_array_equal(shifted, classes[:200])
        # oracle agreement
        want = np.array([discretize_scalar(t, n_d) for t in thetas[:500]])
        np.testing.assert_array_equal(classes[:500], want)


# ---------------------------------------------------------------------- #
# grid generation


def test_grid_counts():
    for n, n_edges in ((2, 8), (3, 24), (20, 1520)):
        net = generate_grid_network(n, spacing=100.0, seed=0)
        assert net.n_nodes == n * n
        assert net.n_edges == n_edges
        assert n_edges == 2 * 2 * n * (n - 1)


def test_grid_max_out_degree():
    net = generate_grid_network(20, spacing=100.0, seed=0)
    degs = [len(net.out_edges[v]) for v in range(net.n_nodes)]
    assert max(degs) == 4
    assert min(degs) == 2  # corners


def test_grid_requires_n_at_least_two():
    with pytest.raises(UsageError):
        generate_grid_network(1, spacing=100.0, seed=0)
    with pytest.raises(UsageError):
        generate_grid_network(3, spacing=0.0, seed=0)


def test_grid_deterministic_and_jitter_seeded():
    a = generate_grid_network(4, spacing=80.0, seed=5, jitter=0.1)
    b = generate_grid_network(4, spacing=80.0, seed=5, jitter=0.1)
    c = generate_grid_network(4, spacing=80.0, seed=6, jitter=0.1)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()


def test_grid_edge_lengths_near_spacing(grid3):
    # jitter-free grid: every edge is ~100 m (equirectangular, not exact)
    assert np.all(np.abs(grid3.edge_length - 100.0) < 1.0)


def test_grid_edges_paired_two_way(grid3):
    # consecutive ids are the two directions of one undirected lattice edge
    for e in range(0, grid3.n_edges, 2):
        a, b = grid3.edges[e], grid3.edges[e + 1]
        assert (a.start_node, a.end_node) == (b.end_node, b.start_node)


# ---------------------------------------------------------------------- #
# direction matrix


def test_edge_direction_stacked_parallel_edges():
    nodes, edges = tiny_two_edge()
    net = make_network(nodes, edges)
    assert edge_direction(0, 1, net, 8) == 0  # upper edge is due north of lower
    assert edge_direction(1, 0, net, 8) == 4  # and vice versa, south


def test_edge_direction_intra_is_own_heading():
    nodes, edges = tiny_two_edge()
    net = make_network(nodes, edges)
    assert edge_direction(0, 0, net, 8) == 2  # east-heading edge


def test_direction_matrix_matches_bruteforce(grid3):
    D = build_direction_matrix(grid3, n_d=8)
    mids = grid3.midpoints()
    for h in range(grid3.n_edges):
        for t in range(grid3.n_edges):
            if h == t:
                want = discretize_scalar(
                    bearing_scalar(
                        grid3.node_lat[grid3.edge_start[h]],
                        grid3.node_lon[grid3.edge_start[h]],
                        grid3.node_lat[grid3.edge_end[h]],
                        grid3.node_lon[grid3.edge_end[h]],
                    ),
                    8,
                )
            else:
                lat1, lon1 = mids[h]
                lat2, lon2 = mids[t]
                if lat1 == lat2 and lon1 == lon2:
                    want = int(D.intra[h])
                else:
                    want = discretize_scalar(bearing_scalar(lat1, lon1, lat2, lon2), 8)
            assert D.get(h, t) == want, (h, t)


def test_direction_matrix_dense_sparse_agree(grid3):
    dense = DirectionMatrix(grid3, n_d=8, dense_cap=10_000)
    lazy = DirectionMatrix(grid3, n_d=8, dense_cap=1)
    assert dense.dense is not None and lazy.dense is None
    rng = np.random.default_rng(3)
    h = rng.integers(0, grid3.n_edges, size=300)
    t = rng.integers(0, grid3.n_edges, size=300)
    np.testing.assert_array_equal(dense.get_many(h, t), lazy.get_many(h, t))


def test_direction_matrix_coincident_midpoints_use_intra():
    # two anti-parallel edges over the same geometry share a midpoint
    nodes = [
        {"id": 0, "lat": 30.0, "lon": 104.0},
        {"id": 1, "lat": 30.0, "lon": 104.001},
    ]
    edges = [
        {"id": 0, "u": 0, "v": 1, "key": 0, "length": 96.0},
        {"id": 1, "u": 1, "v": 0, "key": 0, "length": 96.0},
    ]
    net = make_network(nodes, edges)
    D = build_direction_matrix(net, n_d=8)
    assert D.get(0, 1) == D.intra[0] == 2  # east
    assert D.get(1, 0) == D.intra[1] == 6  # west


def test_direction_defined_for_all_adjacent_pairs(grid5):
    D = build_direction_matrix(grid5, n_d=8)
    for e in range(grid5.n_edges):
        for nxt in grid5.out_edges[grid5.edge_end[e]]:
            c = D.get(e, nxt)
            assert 0 <= c < 8


# ---------------------------------------------------------------------- #
# next-adjacent-edge matrix


def test_nae_shape_and_padding(grid3):
    A = build_nae_matrix(grid3)
    assert A.n_a == 4
    assert A.pad == grid3.n_edges
    center = 4  # node (1,1) in a 3x3 grid
    row = A.table[center]
    assert np.all(row != A.pad)
    corner_row = A.table[0]
    assert np.sum(corner_row != A.pad) == 2
    assert np.all(corner_row[2:] == A.pad)


def test_nae_rows_match_out_edges(grid5):
    A = build_nae_matrix(grid5)
    total_real = 0
    for v in range(grid5.n_nodes):
        real = [int(e) for e in A.table[v] if e != A.pad]
        assert real == list(grid5.out_edges[v])
        # real entries first, PAD after
        k = len(real)
        assert np.all(A.table[v][k:] == A.pad)
        total_real += k
    assert total_real == grid5.n_edges


# ---------------------------------------------------------------------- #
# loading / saving


def test_load_minimal_json(tmp_path):
    doc = {
        "nodes": [{"id": 0, "lat": 1.0, "lon": 2.0}, {"id": 1, "lat": 1.001, "lon": 2.0}],
        "edges": [{"id": 0, "u": 0, "v": 1, "key": 0, "length": 111.0}],
    }
    p = tmp_path / "net.json"
    p.write_text(json.dumps(doc))
    net = load_network(str(p))
    assert net.n_nodes == 2 and net.n_edges == 1
    assert list(net.out_edges[0]) == [0]
    assert list(net.out_edges[1]) == []


def test_load_dangling_reference_reports_line(tmp_path):
    doc = {
        "nodes": [{"id": 0, "lat": 1.0, "lon": 2.0}],
        "edges": [{"id": 0, "u": 0, "v": 9, "key": 0, "length": 5.0}],
    }
    p = tmp_path / "net.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="dangling node reference"):
        load_network(str(p))


def test_load_nonpositive_length_rejected(tmp_path):
    doc = {
        "nodes": [{"id": 0, "lat": 1.0, "lon": 2.0}, {"id": 1, "lat": 1.1, "lon": 2.0}],
        "edges": [{"id": 0, "u": 0, "v": 1, "key": 0, "length": 0.0}],
    }
    p = tmp_path / "net.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="length"):
        load_network(str(p))


def test_load_csv_pair_with_line_numbers(tmp_path):
    d = tmp_path / "net"
    d.mkdir()
    (d / "nodes.csv").write_text("id,lat,lon\n0,30.0,104.0\n1,30.001,104.0\n")
    (d / "edges.csv").write_text("id,u,v,key,length\n0,0,1,0,111.0\n1,1,0,0,-3\n")
    with pytest.raises(DataError, match="line 3"):
        load_network(str(d))
    (d / "edges.csv").write_text("id,u,v,key,length\n0,0,1,0,111.0\n1,1,0,0,111.0\n")
    net = load_network(str(d))
    assert net.n_edges == 2


def test_load_reindexes_sparse_ids(tmp_path):
    doc = {
        "nodes": [{"id": 10, "lat": 0.0, "lon": 0.0}, {"id": 20, "lat": 0.001, "lon": 0.0}],
        "edges": [{"id": 5, "u": 10, "v": 20, "key": 0, "length": 111.0}],
    }
    p = tmp_path / "net.json"
    p.write_text(json.dumps(doc))
    net = load_network(str(p))
    assert [n.id for n in net.nodes] == [0, 1]
    assert net.edges[0].start_node == 0 and net.edges[0].end_node == 1


def test_save_load_round_trip(tmp_path, grid3):
    p = tmp_path / "grid.json"
    save_network(grid3, str(p))
    back = load_network(str(p))
    assert back.fingerprint() == grid3.fingerprint()


def test_duplicate_edge_key_rejected(tmp_path):
    doc = {
        "nodes": [{"id": 0, "lat": 0.0, "lon": 0.0}, {"id": 1, "lat": 0.001, "lon": 0.0}],
        "edges": [
            {"id": 0, "u": 0, "v": 1, "key": 0, "length": 111.0},
            {"id": 1, "u": 0, "v": 1, "key": 0, "length": 112.0},
        ],
    }
    p = tmp_path / "net.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="duplicate"):
        load_network(str(p))


def test_is_connected_route(grid3):
    e0 = grid3.out_edges[0][0]
    nxt = grid3.out_edges[grid3.edge_end[e0]][0]
    assert grid3.is_connected_route([e0, nxt])
    bad = [e for e in range(grid3.n_edges) if grid3.edge_start[e] != grid3.edge_end[e0]][0]
    assert not grid3.is_connected_route([e0, bad])
