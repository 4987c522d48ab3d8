"""HTTP application: every pipeline stage as a one-shot POST endpoint.

The service wraps the core package. Artifacts (networks, route files,
precomputed tables, checkpoints, reports) live on the server's
filesystem and are referenced by path; every write is atomic, so a
failed request never leaves a partial file behind.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..bench import run_bench
from ..checkpoint import load_models, save_checkpoint
from ..corpus import load_routes, save_routes, generate_routes, split_corpus
from ..diagnostics import run_gradient_checks
from ..errors import DataError, NumericError, UsageError
from ..fileio import atomic_write_json
from ..flows import estimate_flows
from ..kgmodel import GOAL, GOAL_D, NO_GOAL, KgConfig, KgModel
from ..network import (
    NaeMatrix,
    build_direction_matrix,
    generate_grid_network,
    load_network,
    save_network,
)
from ..pipeline import corpus_batch, predict_routes
from ..precompute import load_precomputed, save_precomputed
from ..refine import RankConfig, RankModel
from ..training import TrainConfig, config_for_scenario, train
from ..training import evaluate_corpus
from . import schemas as S

_SCENARIO_ALIASES = {
    "nogoal": NO_GOAL, "no_goal": NO_GOAL,
    "goald": GOAL_D, "goal_d": GOAL_D,
    "goal": GOAL,
}


def normalize_scenario(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key not in _SCENARIO_ALIASES:
        raise UsageError(
            f"unknown scenario {name!r}; expected one of NoGoal, GoalD, Goal"
        )
    return _SCENARIO_ALIASES[key]


def _tables(network, n_d: int, precomputed: str | None):
    if precomputed is not None:
        D, A = load_precomputed(precomputed, network)
        if D.n_d != n_d:
            raise UsageError(
                f"precomputed tables use n_d={D.n_d}, run requires n_d={n_d}"
            )
        return D, A
    return build_direction_matrix(network, n_d=n_d), NaeMatrix(network)


def _corpus_from(req_routes: str, opts: S.CorpusOptions, n_d: int, D):
    routes = load_routes(req_routes)
    return split_corpus(
        routes, opts.gamma, opts.gamma_prime, n_d, D,
        ratios=tuple(opts.ratios), seed=opts.split_seed,
        sliding=opts.sliding, observed_dir_mode=opts.observed_dir_mode,
    )


def _load_run_context(network_path: str, checkpoint_path: str):
    """(network, kg, rank, ckpt, D, A) for every model-consuming endpoint."""
    network = load_network(network_path)
    kg, rank, ckpt = load_models(checkpoint_path, network=network)
    D = build_direction_matrix(network, n_d=kg.config.n_d)
    A = NaeMatrix(network)
    return network, kg, rank, ckpt, D, A


def _ckpt_corpus_options(ckpt) -> S.CorpusOptions:
    stored = ckpt.config.get("corpus")
    if not isinstance(stored, dict):
        raise DataError(
            "checkpoint does not record its corpus options; "
            "it was not written by the train endpoint"
        )
    return S.CorpusOptions(**stored)


def _ckpt_scenario(ckpt, override: str | None) -> str:
    if override is not None:
        return normalize_scenario(override)
    stored = ckpt.config.get("train", {}).get("scenario") or ckpt.config.get("scenario")
    if stored is None:
        raise DataError("checkpoint does not record a scenario; pass one explicitly")
    return normalize_scenario(stored)


def create_app() -> FastAPI:
    app = FastAPI(title="routecast", version=__version__)

    @app.exception_handler(UsageError)
    async def _usage(_: Request, exc: UsageError):
        return JSONResponse(status_code=400,
                            content={"detail": {"category": "usage", "message": str(exc)}})

    @app.exception_handler(DataError)
    async def _data(_: Request, exc: DataError):
        return JSONResponse(status_code=422,
                            content={"detail": {"category": "data", "message": str(exc)}})

    @app.exception_handler(NumericError)
    async def _numeric(_: Request, exc: NumericError):
        return JSONResponse(status_code=500,
                            content={"detail": {"category": "numeric", "message": str(exc)}})

    @app.get("/health", response_model=S.HealthResponse)
    def health() -> S.HealthResponse:
        return S.HealthResponse(status="ok", version=__version__)

    @app.post("/network/grid", response_model=S.NetworkInfo)
    def network_grid(req: S.GridRequest) -> S.NetworkInfo:
        net = generate_grid_network(req.side, spacing=req.spacing,
                                    jitter=req.jitter, seed=req.seed)
        save_network(net, req.out)
        fp = net.fingerprint()
        return S.NetworkInfo(out=req.out, n_nodes=fp["n_nodes"],
                             n_edges=fp["n_edges"], edge_hash=fp["edge_hash"])

    @app.post("/routes/generate", response_model=S.RoutesInfo)
    def routes_generate(req: S.RoutesRequest) -> S.RoutesInfo:
        net = load_network(req.network)
        routes = generate_routes(net, req.count, min_len=req.min_len,
                                 sigma=req.sigma, seed=req.seed)
        save_routes(routes, req.out)
        mean_edges = float(np.mean([len(r) for r in routes]))
        return S.RoutesInfo(out=req.out, count=len(routes), mean_edges=mean_edges)

    @app.post("/precompute", response_model=S.PrecomputeInfo)
    def precompute(req: S.PrecomputeRequest) -> S.PrecomputeInfo:
        net = load_network(req.network)
        info = save_precomputed(req.out, net, n_d=req.n_d)
        return S.PrecomputeInfo(**info)

    @app.post("/train", response_model=S.TrainResponse)
    def train_model(req: S.TrainRequest) -> S.TrainResponse:
        scenario = normalize_scenario(req.scenario)
        valid = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = sorted(set(req.overrides) - (valid - {"scenario"}))
        if unknown:
            raise UsageError(
                f"unknown config keys {unknown}; valid keys: {sorted(valid)}"
            )
        cfg = config_for_scenario(scenario, **req.overrides)
        network = load_network(req.network)
        D, A = _tables(network, cfg.n_d, req.precomputed)
        corpus = _corpus_from(req.routes, req.corpus, cfg.n_d, D)

        t0 = time.monotonic()
        kg, rank, history = train(corpus, network, D, A, cfg)
        seconds = time.monotonic() - t0

        save_checkpoint(req.out, kg, rank, network, {
            "train": dataclasses.asdict(cfg),
            "corpus": req.corpus.model_dump(),
        })
        final = history[-1] if history else {}
        vals = [h["val_route_r1"] for h in history if "val_route_r1" in h]
        return S.TrainResponse(
            out=req.out, scenario=scenario, iterations=len(history),
            n_train=len(corpus.split["train"]), n_val=len(corpus.split["val"]),
            n_test=len(corpus.split["test"]), seconds=seconds,
            final_losses={k: v for k, v in final.items() if k.startswith("loss")},
            best_val_route_r1=max(vals) if vals else None,
        )

    @app.post("/predict", response_model=S.PredictResponse)
    def predict_one(req: S.PredictRequest) -> S.PredictResponse:
        scenario = normalize_scenario(req.scenario)
        network, kg, rank, ckpt, D, A = _load_run_context(req.network, req.checkpoint)
        window = np.asarray(req.window, dtype=np.int64)
        if np.any((window < 0) | (window >= network.n_edges)):
            raise UsageError(f"edge ids must be in 0..{network.n_edges - 1}")
        if req.topk > rank.config.k:
            raise UsageError(f"topk must be <= {rank.config.k} for this checkpoint")

        dir_class = req.dir_class
        goal_edges = None
        if scenario == GOAL:
            if req.goal_edge is None:
                raise UsageError("Goal scenario requires goal_edge")
            if not 0 <= req.goal_edge < network.n_edges:
                raise UsageError(f"goal_edge must be in 0..{network.n_edges - 1}")
            goal_edges = np.asarray([req.goal_edge], dtype=np.int64)
            if dir_class is None:
                dir_class = int(D.get(int(window[-1]), req.goal_edge))
        elif scenario == GOAL_D:
            if dir_class is None:
                raise UsageError("GoalD scenario requires dir_class")
        elif dir_class is None and window.size != kg.config.gamma:
            raise UsageError(
                "NoGoal direction estimation needs a window of exactly "
                f"{kg.config.gamma} edges (got {window.size}); "
                "pass dir_class to override"
            )

        obs = window[None, :]
        dirs = np.empty_like(obs)
        dirs[0, 0] = D.intra[obs[0, 0]]
        if obs.shape[1] > 1:
            dirs[0, 1:] = D.get_many(obs[0, :-1], obs[0, 1:])
        pred = predict_routes(
            kg, rank, D, A, scenario, obs, dirs,
            goal_dirs=None if dir_class is None else np.asarray([dir_class]),
            goal_edges=goal_edges,
            dir_override=None if dir_class is None else np.asarray([dir_class]),
            refine=req.refine,
        )
        routes = [
            S.RouteOut(edges=[int(e) for e in pred.final_routes[0, i]],
                       probability=float(pred.rank_probs[0, i]))
            for i in range(req.topk)
        ]
        return S.PredictResponse(
            window=[int(e) for e in window], scenario=scenario,
            dir_class=int(pred.dir_classes[0]), routes=routes,
        )

    @app.post("/predict/batch", response_model=S.PredictBatchResponse)
    def predict_batch(req: S.PredictBatchRequest) -> S.PredictBatchResponse:
        network, kg, rank, ckpt, D, A = _load_run_context(req.network, req.checkpoint)
        scenario = _ckpt_scenario(ckpt, req.scenario)
        corpus = _corpus_from(req.routes, _ckpt_corpus_options(ckpt), kg.config.n_d, D)
        if req.split not in corpus.split:
            raise UsageError(f"unknown split {req.split!r}; have {sorted(corpus.split)}")
        idx = corpus.split[req.split]
        if req.limit is not None:
            idx = idx[: req.limit]
        if idx.size == 0:
            raise DataError(f"split {req.split!r} is empty")
        topk = rank.config.k if req.topk is None else req.topk
        if not 1 <= topk <= rank.config.k:
            raise UsageError(f"topk must be in 1..{rank.config.k}")
        batch = corpus_batch(corpus, idx)
        pred = predict_routes(
            kg, rank, D, A, scenario, batch["observed"], batch["observed_dirs"],
            goal_dirs=batch["goal_dirs"], goal_edges=batch["goal_edges"],
            refine=req.refine,
        )
        final = pred.final_routes[:, :topk]
        if req.out is not None:
            atomic_write_json(req.out, {
                "scenario": scenario, "split": req.split, "topk": topk,
                "predictions": final.tolist(),
                "rank_probs": pred.rank_probs[:, :topk].tolist(),
            })
            return S.PredictBatchResponse(n_samples=int(idx.size), scenario=scenario,
                                          topk=topk, out=req.out)
        return S.PredictBatchResponse(n_samples=int(idx.size), scenario=scenario,
                                      topk=topk, predictions=final.tolist())

    @app.post("/eval", response_model=S.EvalResponse)
    def eval_model(req: S.EvalRequest) -> S.EvalResponse:
        network, kg, rank, ckpt, D, A = _load_run_context(req.network, req.checkpoint)
        scenario = _ckpt_scenario(ckpt, req.scenario)
        corpus = _corpus_from(req.routes, _ckpt_corpus_options(ckpt), kg.config.n_d, D)
        if req.split not in corpus.split:
            raise UsageError(f"unknown split {req.split!r}; have {sorted(corpus.split)}")
        k_list = tuple(sorted(set(int(k) for k in req.k_list)))
        if not k_list:
            raise UsageError("k_list must not be empty")
        if max(k_list) > rank.config.k:
            raise UsageError(f"k_list entries must be <= {rank.config.k}")
        report = evaluate_corpus(kg, rank, corpus, D, A, scenario,
                                 split=req.split, k_list=k_list, refine=req.refine)
        payload = report.to_json_dict()
        if req.out is not None:
            atomic_write_json(req.out, {"scenario": scenario, "split": req.split,
                                        **payload})
        return S.EvalResponse(
            scenario=scenario, split=req.split, n_samples=report.n_samples,
            k_list=list(k_list), link_recall=report.link_recall,
            route_recall=report.route_recall, mrr=report.mrr, out=req.out,
        )

    @app.post("/flow", response_model=S.FlowResponse)
    def flow(req: S.FlowRequest) -> S.FlowResponse:
        network, kg, rank, ckpt, D, A = _load_run_context(req.network, req.checkpoint)
        scenario = _ckpt_scenario(ckpt, req.scenario)
        corpus = _corpus_from(req.routes, _ckpt_corpus_options(ckpt), kg.config.n_d, D)
        if req.split not in corpus.split:
            raise UsageError(f"unknown split {req.split!r}; have {sorted(corpus.split)}")
        idx = corpus.split[req.split]
        if idx.size == 0:
            raise DataError(f"split {req.split!r} is empty")
        batch = corpus_batch(corpus, idx)
        pred = predict_routes(
            kg, rank, D, A, scenario, batch["observed"], batch["observed_dirs"],
            goal_dirs=batch["goal_dirs"], goal_edges=batch["goal_edges"],
        )
        report = estimate_flows(pred.final_routes, pred.rank_probs, batch["future"],
                                network.n_edges, tau=req.tau, repeats=req.repeats,
                                seed=req.seed)
        if req.out is not None:
            atomic_write_json(req.out, {"scenario": scenario, "split": req.split,
                                        **report.to_json_dict()})
        return S.FlowResponse(
            scenario=scenario, split=req.split, n_samples=int(idx.size),
            tau=report.tau, repeats=report.repeats,
            mae=report.mae, mae_std=report.mae_std,
            rmse=report.rmse, rmse_std=report.rmse_std,
            r2=report.r2, r2_std=report.r2_std,
            total_true=float(report.true_counts.sum()),
            total_estimated=float(report.estimated.sum()),
            out=req.out,
        )

    @app.post("/gradcheck", response_model=S.GradCheckResponse)
    def gradcheck(req: S.GradCheckRequest) -> S.GradCheckResponse:
        report = run_gradient_checks(seed=req.seed, instances=req.instances,
                                     tol=req.tolerance)
        return S.GradCheckResponse(ok=report.ok, tolerance=report.tolerance,
                                   losses=report.losses, seconds=report.seconds)

    @app.post("/bench", response_model=S.BenchResponse)
    def bench(req: S.BenchRequest) -> S.BenchResponse:
        if req.network is not None:
            network = load_network(req.network)
        else:
            network = generate_grid_network(req.side, seed=req.seed)
        if req.checkpoint is not None:
            kg, rank, _ = load_models(req.checkpoint, network=network)
        else:
            kg = KgModel(KgConfig(n_edges=network.n_edges, gamma=req.gamma,
                                  gamma_prime=req.gamma_prime), seed=req.seed)
            rank = RankModel(RankConfig(n_edges=network.n_edges, k=req.topk,
                                        gamma_prime=req.gamma_prime), seed=req.seed)
        D = build_direction_matrix(network, n_d=kg.config.n_d)
        A = NaeMatrix(network)
        report = run_bench(network, kg, rank, D, A, requests=req.requests,
                           topk=req.topk, scenario=normalize_scenario(req.scenario),
                           seed=req.seed, single_thread=req.single_thread)
        return S.BenchResponse(**{k: report[k] for k in S.BenchResponse.model_fields})

    return app
