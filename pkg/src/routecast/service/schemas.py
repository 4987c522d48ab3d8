"""Request/response models for the HTTP surface.

All artifact parameters are file paths interpreted relative to the server
process's working directory; the server performs the file I/O (atomically
for writes) and the wire carries JSON summaries plus small result
payloads.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class GridRequest(BaseModel):
    side: int = Field(ge=2, le=200)
    spacing: float = Field(default=100.0, gt=0)
    jitter: float = Field(default=0.0, ge=0)
    seed: int = 0
    out: str


class NetworkInfo(BaseModel):
    out: str
    n_nodes: int
    n_edges: int
    edge_hash: str


class RoutesRequest(BaseModel):
    network: str
    count: int = Field(ge=1)
    min_len: int = Field(default=10, ge=1)
    sigma: float = Field(default=0.1, ge=0)
    seed: int = 0
    out: str


class RoutesInfo(BaseModel):
    out: str
    count: int
    mean_edges: float


class PrecomputeRequest(BaseModel):
    network: str
    n_d: int = Field(default=8, ge=2)
    out: str


class PrecomputeInfo(BaseModel):
    out: str
    n_d: int
    dense: bool
    n_a: int
    n_edges: int


class CorpusOptions(BaseModel):
    """How routes are cut into (observed, future) windows and split."""

    gamma: int = Field(default=3, ge=1)
    gamma_prime: int = Field(default=4, ge=1)
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    split_seed: int = 0
    sliding: bool = False
    observed_dir_mode: str = "inter"


class TrainRequest(BaseModel):
    network: str
    routes: str
    out: str
    scenario: str = "no_goal"
    corpus: CorpusOptions = CorpusOptions()
    precomputed: str | None = None
    overrides: dict[str, float | int | str | None] = {}


class TrainResponse(BaseModel):
    out: str
    scenario: str
    iterations: int
    n_train: int
    n_val: int
    n_test: int
    seconds: float
    final_losses: dict[str, float]
    best_val_route_r1: float | None = None


class PredictRequest(BaseModel):
    """Single ad-hoc query: a window of recent edge ids plus goal info."""

    network: str
    checkpoint: str
    window: list[int] = Field(min_length=1)
    scenario: str = "goal_d"
    dir_class: int | None = None
    goal_edge: int | None = None
    topk: int = Field(default=5, ge=1)
    refine: bool = True


class RouteOut(BaseModel):
    edges: list[int]
    probability: float


class PredictResponse(BaseModel):
    window: list[int]
    scenario: str
    dir_class: int
    routes: list[RouteOut]


class PredictBatchRequest(BaseModel):
    network: str
    checkpoint: str
    routes: str
    split: str = "test"
    scenario: str | None = None   # default: the scenario the model was trained for
    topk: int | None = None
    refine: bool = True
    limit: int | None = Field(default=None, ge=1)
    out: str | None = None


class PredictBatchResponse(BaseModel):
    n_samples: int
    scenario: str
    topk: int
    out: str | None = None
    predictions: list[list[list[int]]] | None = None  # (B, topk, Γ′) when not written to a file


class EvalRequest(BaseModel):
    network: str
    checkpoint: str
    routes: str
    split: str = "test"
    scenario: str | None = None
    k_list: list[int] = [1, 5, 10]
    refine: bool = True
    out: str | None = None


class EvalResponse(BaseModel):
    scenario: str
    split: str
    n_samples: int
    k_list: list[int]
    link_recall: dict[int, float]
    route_recall: dict[int, float]
    mrr: dict[int, float]
    out: str | None = None


class FlowRequest(BaseModel):
    network: str
    checkpoint: str
    routes: str
    split: str = "test"
    scenario: str | None = None
    tau: float = Field(default=0.1, gt=0)
    repeats: int = Field(default=10, ge=1)
    seed: int = 0
    out: str | None = None


class FlowResponse(BaseModel):
    scenario: str
    split: str
    n_samples: int
    tau: float
    repeats: int
    mae: float
    mae_std: float
    rmse: float
    rmse_std: float
    r2: float
    r2_std: float
    total_true: float
    total_estimated: float
    out: str | None = None


class GradCheckRequest(BaseModel):
    seed: int = 0
    instances: int = Field(default=5, ge=1)
    tolerance: float = Field(default=1e-4, gt=0)


class GradCheckResponse(BaseModel):
    ok: bool
    tolerance: float
    losses: dict[str, dict]
    seconds: float


class BenchRequest(BaseModel):
    network: str | None = None    # default: a fresh 20x20 grid
    checkpoint: str | None = None  # default: untrained models (same arithmetic)
    side: int = Field(default=20, ge=2)
    requests: int = Field(default=10_000, ge=1)
    topk: int = Field(default=10, ge=1)
    scenario: str = "goal_d"
    gamma: int = Field(default=3, ge=1)
    gamma_prime: int = Field(default=4, ge=1)
    seed: int = 0
    single_thread: bool = True


class BenchResponse(BaseModel):
    requests: int
    topk: int
    scenario: str
    seconds: float
    per_request_ms: float
    predictions_per_second: float
    single_thread: bool
