"""Road-network data model, bearing geometry, and the two precomputed tables.

The network is a multi-directed graph: every direction of travel is its own
``DirectedEdge`` (a two-way street contributes two edges with opposite
headings). Downstream modules consume two derived structures:

* the direction table ``DirectionMatrix`` — discretized link-to-link bearing
  classes (``n_d`` sectors, sector 0 centered on north, clockwise), and
* the padded adjacency table ``NaeMatrix`` — per-node outgoing edge ids padded
  to the max out-degree with the sentinel ``PAD = |E|`` so adjacency lookups
  batch as plain array indexing.

Bearings use a planar equirectangular approximation (Δlon scaled by the
cosine of the two points' mean latitude), measured clockwise from north.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError

# Meters per degree of latitude (spherical-earth constant used throughout).
M_PER_DEG = 111_320.0

DEFAULT_N_D = 8
# |E| <= cap keeps the direction table dense; above it labels are computed
# on demand (the full table for a city-scale network would be |E|^2 cells).
DEFAULT_DENSE_CAP = 3000


@dataclass(frozen=True)
class Node:
    id: int
    lat: float
    lon: float


@dataclass(frozen=True)
class DirectedEdge:
    id: int
    start_node: int
    end_node: int
    key: int
    length: float


class RoadNetwork:
    """Immutable multi-directed road graph with cached coordinate arrays."""

    def __init__(self, nodes: list[Node], edges: list[DirectedEdge]):
        self.nodes = nodes
        self.edges = edges
        self.n_nodes = len(nodes)
        self.n_edges = len(edges)

        self.node_lat = np.array([nd.lat for nd in nodes], dtype=np.float64)
        self.node_lon = np.array([nd.lon for nd in nodes], dtype=np.float64)
        self.edge_start = np.array([e.start_node for e in edges], dtype=np.int64)
        self.edge_end = np.array([e.end_node for e in edges], dtype=np.int64)
        self.edge_length = np.array([e.length for e in edges], dtype=np.float64)

        out_edges: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for e in edges:  # edge ids are dense and ordered, so rows stay sorted
            out_edges[e.start_node].append(e.id)
        self.out_edges = out_edges

        self._mid: np.ndarray | None = None
        self._intra: np.ndarray | None = None

    # ------------------------------------------------------------------ #
    # geometry caches

    @property
    def pad(self) -> int:
        """Sentinel edge id used to pad adjacency rows."""
        return self.n_edges

    def midpoints(self) -> np.ndarray:
        """(|E|, 2) array of (lat, lon) edge midpoints."""
        if self._mid is None:
            lat = 0.5 * (self.node_lat[self.edge_start] + self.node_lat[self.edge_end])
            lon = 0.5 * (self.node_lon[self.edge_start] + self.node_lon[self.edge_end])
            self._mid = np.stack([lat, lon], axis=1)
        return self._mid

    def intra_bearings(self) -> np.ndarray:
        """Per-edge heading (degrees clockwise from north), start → end node."""
        if self._intra is None:
            self._intra = bearing_deg(
                self.node_lat[self.edge_start],
                self.node_lon[self.edge_start],
                self.node_lat[self.edge_end],
                self.node_lon[self.edge_end],
            )
        return self._intra

    # ------------------------------------------------------------------ #
    # integrity helpers

    def fingerprint(self) -> dict:
        """Stable identity of the network: sizes plus a hash of the edge list."""
        h = hashlib.sha256()
        for e in self.edges:
            h.update(f"{e.start_node},{e.end_node},{e.key},{e.length!r};".encode())
        return {"n_nodes": self.n_nodes, "n_edges": self.n_edges, "edge_hash": h.hexdigest()}

    def is_connected_route(self, edge_ids) -> bool:
        """True iff consecutive edges share a node (end of one = start of next)."""
        ids = np.asarray(edge_ids, dtype=np.int64)
        if ids.size == 0:
            return False
        if ids.min() < 0 or ids.max() >= self.n_edges:
            return False
        return bool(np.all(self.edge_end[ids[:-1]] == self.edge_start[ids[1:]]))


# ---------------------------------------------------------------------- #
# bearings and discretization


def bearing_deg(lat1, lon1, lat2, lon2):
    """Bearing from point 1 to point 2, degrees clockwise from north.

    Planar equirectangular approximation; inputs in degrees, scalars or
    arrays. Coincident points yield 0.0 (callers that care detect
    coincidence themselves).
    """
    mean_lat = np.radians(0.5 * (np.asarray(lat1, dtype=np.float64) + lat2))
    dx = np.radians(np.asarray(lon2, dtype=np.float64) - lon1) * np.cos(mean_lat)
    dy = np.radians(np.asarray(lat2, dtype=np.float64) - lat1)
    theta = np.degrees(np.arctan2(dx, dy))
    wrapped = np.mod(theta, 360.0)
    # float mod of a tiny negative can return exactly 360.0; fold it back
    return np.where(wrapped >= 360.0, 0.0, wrapped)[()]


def discretize_bearing(theta, n_d: int):
    """Map bearing(s) in degrees to sector indices 0..n_d-1.

    Sector 0 is centered on north; sectors advance clockwise with width
    360/n_d. Any real input is accepted (wraparound via mod 360).
    """
    width = 360.0 / n_d
    shifted = np.mod(np.asarray(theta, dtype=np.float64) + 0.5 * width, 360.0)
    cls = np.floor(shifted / width).astype(np.int64)
    # a float rounding at exactly 360 - width/2 could land on n_d
    return np.minimum(cls, n_d - 1)


def edge_direction(from_edge: int, to_edge: int, network: RoadNetwork, n_d: int = DEFAULT_N_D) -> int:
    """Discretized direction class from one edge to another.

    Inter-edge bearings connect the two edge midpoints; the intra case
    (``from_edge == to_edge``) uses the edge's own start → end heading.
    Coincident midpoints fall back to the intra class of ``from_edge``.
    """
    if not (0 <= from_edge < network.n_edges and 0 <= to_edge < network.n_edges):
        raise UsageError(f"edge id out of range: ({from_edge}, {to_edge})")
    if from_edge == to_edge:
        return int(discretize_bearing(network.intra_bearings()[from_edge], n_d))
    mid = network.midpoints()
    a, b = mid[from_edge], mid[to_edge]
    if a[0] == b[0] and a[1] == b[1]:
        return int(discretize_bearing(network.intra_bearings()[from_edge], n_d))
    return int(discretize_bearing(bearing_deg(a[0], a[1], b[0], b[1]), n_d))


# ---------------------------------------------------------------------- #
# direction matrix


class DirectionMatrix:
    """Link-to-link direction classes; dense under a size cap, lazy above it.

    ``get``/``get_many`` return classes in 0..n_d-1 for any ordered edge pair;
    the diagonal holds each edge's intra heading class.
    """

    def __init__(self, network: RoadNetwork, n_d: int = DEFAULT_N_D, dense_cap: int = DEFAULT_DENSE_CAP):
        self.n_d = int(n_d)
        if self.n_d < 2:
            raise UsageError(f"n_d must be >= 2, got {n_d}")
        self._net = network
        self.intra = discretize_bearing(network.intra_bearings(), self.n_d).astype(np.int16)
        self.dense: np.ndarray | None = None
        if network.n_edges <= dense_cap:
            self.dense = self._compute_block(
                np.arange(network.n_edges), np.arange(network.n_edges), cross=True
            )

    def _compute_block(self, heads: np.ndarray, tails: np.ndarray, cross: bool = False) -> np.ndarray:
        """Classes for pairs; ``cross=True`` computes the full heads×tails grid."""
        mid = self._net.midpoints()
        h_lat, h_lon = mid[heads, 0], mid[heads, 1]
        t_lat, t_lon = mid[tails, 0], mid[tails, 1]
        if cross:
            h_lat, h_lon = h_lat[:, None], h_lon[:, None]
            t_lat, t_lon = t_lat[None, :], t_lon[None, :]
        theta = bearing_deg(h_lat, h_lon, t_lat, t_lon)
        cls = discretize_bearing(theta, self.n_d).astype(np.int16)
        # coincident midpoints (including the diagonal) -> intra class of head
        coincident = (h_lat == t_lat) & (h_lon == t_lon)
        if cross:
            cls = np.where(coincident, self.intra[heads][:, None], cls)
        else:
            cls = np.where(coincident, self.intra[heads], cls)
        return cls

    def get(self, head: int, tail: int) -> int:
        if self.dense is not None:
            return int(self.dense[head, tail])
        return int(self._compute_block(np.asarray([head]), np.asarray([tail]))[0])

    def get_many(self, heads, tails) -> np.ndarray:
        """Vectorized lookup for aligned head/tail id arrays (any shape)."""
        heads = np.asarray(heads, dtype=np.int64)
        tails = np.asarray(tails, dtype=np.int64)
        if self.dense is not None:
            return self.dense[heads, tails].astype(np.int64)
        shape = heads.shape
        cls = self._compute_block(heads.ravel(), tails.ravel())
        return cls.reshape(shape).astype(np.int64)


def build_direction_matrix(
    network: RoadNetwork, n_d: int = DEFAULT_N_D, dense_cap: int = DEFAULT_DENSE_CAP
) -> DirectionMatrix:
    return DirectionMatrix(network, n_d=n_d, dense_cap=dense_cap)


# ---------------------------------------------------------------------- #
# padded adjacency table


class NaeMatrix:
    """|V| × n_a table of outgoing edge ids, padded with ``PAD = |E|``."""

    def __init__(self, network: RoadNetwork):
        self.pad = network.pad
        self.n_a = max((len(row) for row in network.out_edges), default=0)
        table = np.full((network.n_nodes, max(self.n_a, 1)), self.pad, dtype=np.int64)
        for v, row in enumerate(network.out_edges):
            table[v, : len(row)] = row
        self.table = table
        # edge id -> end node, so tree expansion needs no separate network ref
        self.edge_end = network.edge_end.copy()
        self.edge_start = network.edge_start.copy()

    def row(self, node: int) -> np.ndarray:
        return self.table[node]


def build_nae_matrix(network: RoadNetwork) -> NaeMatrix:
    return NaeMatrix(network)


# ---------------------------------------------------------------------- #
# generators and file I/O


def generate_grid_network(n: int, spacing: float = 100.0, seed: int = 0, jitter: float = 0.0) -> RoadNetwork:
    """n×n lattice with two directed edges per undirected lattice edge.

    Node (i, j) sits at row i (northwards) / column j (eastwards), id i·n+j.
    ``jitter`` displaces nodes by a centered gaussian of that fraction of the
    spacing (deterministic in ``seed``).
    """
    if n < 2:
        raise UsageError(f"grid side must be >= 2, got {n}")
    if spacing <= 0:
        raise UsageError(f"spacing must be positive, got {spacing}")

    base_lat, base_lon = 30.0, 104.0
    dlat = spacing / M_PER_DEG
    dlon = spacing / (M_PER_DEG * math.cos(math.radians(base_lat)))

    lat = base_lat + dlat * np.repeat(np.arange(n), n)
    lon = base_lon + dlon * np.tile(np.arange(n), n)
    if jitter > 0.0:
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x67726964)))
        lat = lat + rng.normal(0.0, jitter, n * n) * dlat
        lon = lon + rng.normal(0.0, jitter, n * n) * dlon

    nodes = [Node(i, float(lat[i]), float(lon[i])) for i in range(n * n)]

    def meters(u: int, v: int) -> float:
        mean_lat = math.radians(0.5 * (lat[u] + lat[v]))
        dx = (lon[v] - lon[u]) * M_PER_DEG * math.cos(mean_lat)
        dy = (lat[v] - lat[u]) * M_PER_DEG
        return math.hypot(dx, dy)

    edges: list[DirectedEdge] = []
    for i in range(n):
        for j in range(n):
            u = i * n + j
            for v in ((i, j + 1), (i + 1, j)):
                if v[0] < n and v[1] < n:
                    w = v[0] * n + v[1]
                    length = meters(u, w)
                    edges.append(DirectedEdge(len(edges), u, w, 0, length))
                    edges.append(DirectedEdge(len(edges), w, u, 0, length))
    return RoadNetwork(nodes, edges)


def network_to_dict(network: RoadNetwork) -> dict:
    """JSON-ready form matching the external network schema."""
    return {
        "nodes": [{"id": nd.id, "lat": nd.lat, "lon": nd.lon} for nd in network.nodes],
        "edges": [
            {"id": e.id, "u": e.start_node, "v": e.end_node, "key": e.key, "length": e.length}
            for e in network.edges
        ],
    }


def network_from_records(node_records, edge_records, where: str = "network") -> RoadNetwork:
    """Build a network from raw records, reindexing ids to dense ranges.

    Records are dicts with keys (id, lat, lon) and (id, u, v, key, length);
    ``where`` labels error messages with the record's origin (file line or
    record index).
    """
    seen_nodes: dict[int, tuple[float, float]] = {}
    for pos, rec, line in node_records:
        try:
            nid = int(rec["id"])
            nlat = float(rec["lat"])
            nlon = float(rec["lon"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{where}: malformed node record at line {line}: {exc}") from None
        if nid < 0:
            raise DataError(f"{where}: negative node id at line {line}")
        if nid in seen_nodes:
            raise DataError(f"{where}: duplicate node id {nid} at line {line}")
        if not (math.isfinite(nlat) and math.isfinite(nlon)):
            raise DataError(f"{where}: non-finite coordinate at line {line}")
        seen_nodes[nid] = (nlat, nlon)

    node_order = sorted(seen_nodes)
    node_index = {orig: dense for dense, orig in enumerate(node_order)}
    nodes = [Node(node_index[orig], seen_nodes[orig][0], seen_nodes[orig][1]) for orig in node_order]

    raw_edges: dict[int, tuple[int, int, int, float, int]] = {}
    for pos, rec, line in edge_records:
        try:
            eid = int(rec["id"])
            u = int(rec["u"])
            v = int(rec["v"])
            key = int(rec.get("key", 0) or 0)
            length = float(rec["length"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{where}: malformed edge record at line {line}: {exc}") from None
        if eid < 0:
            raise DataError(f"{where}: negative edge id at line {line}")
        if eid in raw_edges:
            raise DataError(f"{where}: duplicate edge id {eid} at line {line}")
        if u not in node_index or v not in node_index:
            raise DataError(f"{where}: dangling node reference at line {line}")
        if not (length > 0.0 and math.isfinite(length)):
            raise DataError(f"{where}: nonpositive length at line {line}")
        raw_edges[eid] = (u, v, key, length, line)

    edges: list[DirectedEdge] = []
    seen_keys: set[tuple[int, int, int]] = set()
    for dense, orig in enumerate(sorted(raw_edges)):
        u, v, key, length, line = raw_edges[orig]
        triple = (node_index[u], node_index[v], key)
        if triple in seen_keys:
            raise DataError(f"{where}: duplicate (u, v, key) triple at line {line}")
        seen_keys.add(triple)
        edges.append(DirectedEdge(dense, triple[0], triple[1], key, length))

    if not nodes:
        raise DataError(f"{where}: no nodes")
    return RoadNetwork(nodes, edges)


def load_network(path: str) -> RoadNetwork:
    """Load a network from a JSON file or a nodes.csv/edges.csv pair.

    ``path`` may be the JSON file, a directory holding the CSV pair, or the
    nodes CSV itself (the edges CSV is found by name substitution).
    """
    if os.path.isdir(path):
        return _load_csv_pair(os.path.join(path, "nodes.csv"), os.path.join(path, "edges.csv"))
    if path.endswith(".json"):
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"network file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict) or "nodes" not in doc or "edges" not in doc:
            raise DataError(f"{path}: expected object with 'nodes' and 'edges'")
        node_records = [(i, rec, i) for i, rec in enumerate(doc["nodes"])]
        edge_records = [(i, rec, i) for i, rec in enumerate(doc["edges"])]
        return network_from_records(node_records, edge_records, where=path)
    if path.endswith(".csv"):
        edges_path = path.replace("nodes", "edges")
        if edges_path == path:
            raise UsageError(f"cannot infer edges CSV from {path}; pass the directory instead")
        return _load_csv_pair(path, edges_path)
    raise UsageError(f"unrecognized network file type: {path}")


def _load_csv_pair(nodes_path: str, edges_path: str) -> RoadNetwork:
    def read(path: str):
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
        except FileNotFoundError:
            raise DataError(f"network file not found: {path}") from None
        # DictReader consumes the header; data starts at file line 2
        return [(i, row, i + 2) for i, row in enumerate(rows)]

    return network_from_records(read(nodes_path), read(edges_path), where=nodes_path)


def save_network(network: RoadNetwork, path: str) -> None:
    from .fileio import atomic_write_json

    atomic_write_json(path, network_to_dict(network))
