"""Route corpus: synthetic generation, observed/future splitting, labeling.

A route is a connected sequence of directed-edge ids. Training samples take
the first Γ edges as the observed segment and the next Γ′ as the future
segment; each sample carries per-step observed direction labels, the goal
direction (bearing class from the last observed link to the last future
link) and the goal edge itself.

Synthetic routes are shortest paths between random OD pairs under
log-normally perturbed edge weights (weight = length · exp(σ·gauss)), which
yields loop-free, mostly-geodesic trajectories with controllable diversity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as csgraph_dijkstra

from .errors import DataError
from .fileio import atomic_write_text
from .network import DirectionMatrix, RoadNetwork
from .rng import stream


@dataclass(frozen=True)
class Route:
    edges: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class RouteSample:
    observed: tuple[int, ...]
    future: tuple[int, ...]
    observed_dirs: tuple[int, ...]
    goal_dir: int
    goal_edge: int


@dataclass
class RouteCorpus:
    """Column-oriented sample store with a train/val/test index split."""

    observed: np.ndarray       # (N, gamma) edge ids
    future: np.ndarray         # (N, gamma_prime) edge ids
    observed_dirs: np.ndarray  # (N, gamma) direction classes
    goal_dirs: np.ndarray      # (N,)
    goal_edges: np.ndarray     # (N,)
    gamma: int
    gamma_prime: int
    n_d: int
    split: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.observed.shape[0]

    def sample(self, i: int) -> RouteSample:
        return RouteSample(
            observed=tuple(int(e) for e in self.observed[i]),
            future=tuple(int(e) for e in self.future[i]),
            observed_dirs=tuple(int(d) for d in self.observed_dirs[i]),
            goal_dir=int(self.goal_dirs[i]),
            goal_edge=int(self.goal_edges[i]),
        )

    @property
    def samples(self) -> list[RouteSample]:
        return [self.sample(i) for i in range(len(self))]

    def subset(self, name: str) -> np.ndarray:
        if name not in self.split:
            raise DataError(f"corpus has no '{name}' split")
        return self.split[name]


# ---------------------------------------------------------------------- #
# synthetic generation


class _PathFinder:
    """Per-network scaffolding for repeated single-source shortest paths.

    Parallel edges are collapsed per (u, v) pair to the min-weight
    representative for the node-path search, then re-expanded to edge ids,
    which preserves multigraph shortest paths.
    """

    def __init__(self, network: RoadNetwork):
        self.net = network
        order = np.lexsort((network.edge_end, network.edge_start))
        self.edge_order = order
        starts = network.edge_start[order]
        ends = network.edge_end[order]
        new_group = np.ones(len(order), dtype=bool)
        if len(order) > 1:
            new_group[1:] = (np.diff(starts) != 0) | (np.diff(ends) != 0)
        self.group_of_sorted = np.cumsum(new_group) - 1
        self.n_groups = int(self.group_of_sorted[-1]) + 1 if len(order) else 0
        first = np.flatnonzero(new_group)
        self.group_u = starts[first]
        self.group_v = ends[first]
        self.pair_index = {(int(u), int(v)): g for g, (u, v) in enumerate(zip(self.group_u, self.group_v))}

    def shortest_tree(self, source: int, weights: np.ndarray):
        """Dijkstra from ``source``; returns (dist, predecessors, chosen edge per group)."""
        w_sorted = weights[self.edge_order]
        group_w = np.full(self.n_groups, np.inf)
        np.minimum.at(group_w, self.group_of_sorted, w_sorted)
        # lowest edge id among weight-ties within each group
        is_min = w_sorted == group_w[self.group_of_sorted]
        chosen = np.full(self.n_groups, self.net.n_edges, dtype=np.int64)
        np.minimum.at(chosen, self.group_of_sorted[is_min], self.edge_order[is_min])

        graph = csr_matrix(
            (group_w, (self.group_u, self.group_v)), shape=(self.net.n_nodes, self.net.n_nodes)
        )
        dist, pred = csgraph_dijkstra(
            graph, directed=True, indices=source, return_predecessors=True
        )
        return dist, pred, chosen

    def path_edges(self, source: int, target: int, pred: np.ndarray, chosen: np.ndarray) -> list[int]:
        nodes = [target]
        while nodes[-1] != source:
            p = pred[nodes[-1]]
            if p < 0:
                raise DataError(f"no path from {source} to {target}")
            nodes.append(int(p))
        nodes.reverse()
        return [int(chosen[self.pair_index[(nodes[i], nodes[i + 1])]]) for i in range(len(nodes) - 1)]


def generate_routes(
    network: RoadNetwork,
    count: int,
    min_len: int = 10,
    sigma: float = 0.1,
    seed: int = 0,
    max_attempts_per_route: int = 60,
) -> list[Route]:
    """Sample ``count`` shortest-path routes of at least ``min_len`` edges.

    Each route draws its own OD pair and its own weight perturbation from a
    per-(route, attempt) RNG stream, so results are independent of generation
    order. Raises ``DataError`` when a route slot exhausts its retries (e.g.
    the network's diameter cannot support ``min_len``).
    """
    finder = _PathFinder(network)
    lengths = network.edge_length
    routes: list[Route] = []
    for i in range(count):
        got = None
        for attempt in range(max_attempts_per_route):
            rng = stream(seed, "route", i, attempt)
            o, d = rng.choice(network.n_nodes, size=2, replace=False)
            if sigma > 0.0:
                weights = lengths * np.exp(sigma * rng.standard_normal(network.n_edges))
            else:
                weights = lengths.astype(np.float64)
            dist, pred, chosen = finder.shortest_tree(int(o), weights)
            if not np.isfinite(dist[d]):
                continue
            edges = finder.path_edges(int(o), int(d), pred, chosen)
            if len(edges) < min_len:
                continue
            got = Route(tuple(edges))
            break
        if got is None:
            raise DataError(
                f"could not generate route {i}: no OD pair reached min_len={min_len} "
                f"in {max_attempts_per_route} attempts"
            )
        routes.append(got)
    return routes


# ---------------------------------------------------------------------- #
# splitting and labeling


def split_corpus(
    routes: list[Route],
    gamma: int,
    gamma_prime: int,
    n_d: int,
    D: DirectionMatrix,
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
    sliding: bool = False,
    observed_dir_mode: str = "inter",
) -> RouteCorpus:
    """Cut route prefixes into (observed, future) samples and split them.

    One sample per route by default (the prefix window); ``sliding=True``
    emits every window offset instead. ``observed_dir_mode`` selects how the
    observed direction labels are built: ``"inter"`` uses the turn class from
    the previous link (the first link falls back to its own heading),
    ``"intra"`` uses each link's own heading class.
    """
    if observed_dir_mode not in ("inter", "intra"):
        raise DataError(f"unknown observed_dir_mode: {observed_dir_mode}")
    horizon = gamma + gamma_prime
    windows: list[tuple[int, ...]] = []
    rejected = 0
    for route in routes:
        edges = route.edges
        if len(edges) < horizon:
            rejected += 1
            continue
        offsets = range(len(edges) - horizon + 1) if sliding else (0,)
        for off in offsets:
            windows.append(edges[off : off + horizon])
    if rejected:
        raise DataError(f"{rejected} routes shorter than gamma+gamma_prime={horizon}")
    if not windows:
        raise DataError("no routes to split")

    win = np.asarray(windows, dtype=np.int64)
    observed = win[:, :gamma]
    future = win[:, gamma:]

    dirs = np.empty_like(observed)
    if observed_dir_mode == "inter":
        dirs[:, 0] = D.intra[observed[:, 0]]
        if gamma > 1:
            dirs[:, 1:] = D.get_many(observed[:, :-1], observed[:, 1:])
    else:
        dirs = D.intra[observed].astype(np.int64)

    goal_edges = future[:, -1]
    goal_dirs = D.get_many(observed[:, -1], goal_edges)

    n = win.shape[0]
    order = stream(seed, "split").permutation(n)
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    split = {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train : n_train + n_val]),
        "test": np.sort(order[n_train + n_val :]),
    }
    return RouteCorpus(
        observed=observed,
        future=future,
        observed_dirs=dirs,
        goal_dirs=goal_dirs.astype(np.int64),
        goal_edges=goal_edges.astype(np.int64),
        gamma=gamma,
        gamma_prime=gamma_prime,
        n_d=n_d,
        split=split,
    )


# ---------------------------------------------------------------------- #
# file I/O (JSON Lines, one route per line)


def save_routes(routes: list[Route], path: str) -> None:
    lines = [json.dumps({"edges": list(r.edges)}) for r in routes]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_routes(path: str) -> list[Route]:
    routes: list[Route] = []
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"routes file not found: {path}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                edges = tuple(int(e) for e in doc["edges"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: malformed route at line {lineno}: {exc}") from None
            if not edges:
                raise DataError(f"{path}: empty route at line {lineno}")
            routes.append(Route(edges))
    if not routes:
        raise DataError(f"{path}: no routes")
    return routes
