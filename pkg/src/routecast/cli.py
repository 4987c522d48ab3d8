"""Command-line client for the prediction service.

Every subcommand is a thin wrapper over one HTTP endpoint. By default the
service runs in-process (no port, no daemon); ``--server URL`` points the
same commands at a remote instance instead. Structured results print as
JSON on stdout; artifacts are written server-side, atomically.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_CATEGORY_EXIT = {"usage": EXIT_USAGE, "data": EXIT_DATA, "numeric": EXIT_NUMERIC}

# config-file keys forwarded to TrainConfig (anything else must be a
# corpus key or a typo; the server validates the final set)
_TRAIN_KEYS = {
    "scenario", "n_d", "k", "n", "w_rep", "w_d", "w_pred", "w_rank",
    "lr", "weight_decay", "batch_size", "route_batch_size",
    "max_iterations", "patience", "eval_every", "margin",
    "emb_dim", "hidden", "score_norm", "seed",
}
_CORPUS_KEYS = {"gamma", "gamma_prime", "ratios", "split_seed", "sliding",
                "observed_dir_mode"}


def _parse_scalar(text: str):
    """Typed value from a config-file token: int, float, bool, or string."""
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text.strip()


def load_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; '#' comments and blank lines ignored."""
    values: dict = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise SystemExit(f"error (usage): cannot read config file: {exc}")
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(
                    f"error (usage): {path}:{lineno}: expected key = value"
                )
            key, _, raw = line.partition("=")
            key = key.strip().replace("-", "_")
            if key == "ratios":
                parts = [p for p in raw.replace(",", " ").split() if p]
                values[key] = [float(p) for p in parts]
            else:
                values[key] = _parse_scalar(raw)
    return values


def _int_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.replace(",", " ").split() if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="routecast",
        description="Short-term route prediction on road networks.",
    )
    p.add_argument("--server", default=None,
                   help="base URL of a running service (default: in-process)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=None,
                        help="master seed for this command")
        sp.add_argument("--config", default=None,
                        help="flat key=value file; command-line flags win")
        return sp

    sp = add("gen-net", "generate a grid road network")
    sp.add_argument("--side", type=int, required=True)
    sp.add_argument("--spacing", type=float, default=None)
    sp.add_argument("--jitter", type=float, default=None)
    sp.add_argument("--out", required=True)

    sp = add("gen-routes", "sample synthetic routes on a network")
    sp.add_argument("--network", required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--min-len", type=int, default=None)
    sp.add_argument("--sigma", type=float, default=None)
    sp.add_argument("--out", required=True)

    sp = add("precompute", "build direction and adjacency tables")
    sp.add_argument("--network", required=True)
    sp.add_argument("--n-d", type=int, default=None)
    sp.add_argument("--out", required=True)

    sp = add("train", "train models and write a checkpoint")
    sp.add_argument("--network", required=True)
    sp.add_argument("--routes", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--scenario", default=None)
    sp.add_argument("--precomputed", default=None)
    sp.add_argument("--gamma", type=int, default=None)
    sp.add_argument("--gamma-prime", type=int, default=None)
    sp.add_argument("--split-seed", type=int, default=None)
    sp.add_argument("--sliding", action="store_true", default=None)
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--emb-dim", type=int, default=None)
    sp.add_argument("--hidden", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--route-batch-size", type=int, default=None)
    sp.add_argument("--eval-every", type=int, default=None)
    sp.add_argument("--patience", type=int, default=None)

    sp = add("predict", "predict routes for one query or a corpus split")
    sp.add_argument("--network", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--edge", type=_int_list, default=None,
                    help="recent edge id(s), most recent last (single query)")
    sp.add_argument("--dir", type=int, default=None,
                    help="direction class toward the goal")
    sp.add_argument("--goal-edge", type=int, default=None)
    sp.add_argument("--scenario", default=None)
    sp.add_argument("--topk", type=int, default=None)
    sp.add_argument("--routes", default=None, help="corpus file (batch mode)")
    sp.add_argument("--split", default=None)
    sp.add_argument("--limit", type=int, default=None)
    sp.add_argument("--no-refine", action="store_true")
    sp.add_argument("--out", default=None)

    sp = add("eval", "score a checkpoint on a corpus split")
    sp.add_argument("--network", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--routes", required=True)
    sp.add_argument("--split", default=None)
    sp.add_argument("--scenario", default=None)
    sp.add_argument("--k-list", type=_int_list, default=None)
    sp.add_argument("--no-refine", action="store_true")
    sp.add_argument("--out", default=None)

    sp = add("flow", "estimate link flows from predictions")
    sp.add_argument("--network", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--routes", required=True)
    sp.add_argument("--split", default=None)
    sp.add_argument("--scenario", default=None)
    sp.add_argument("--tau", type=float, default=None)
    sp.add_argument("--repeats", type=int, default=None)
    sp.add_argument("--out", default=None)

    sp = add("gradcheck", "verify analytic gradients of every loss")
    sp.add_argument("--instances", type=int, default=None)
    sp.add_argument("--tolerance", type=float, default=None)

    sp = add("bench", "measure prediction throughput")
    sp.add_argument("--requests", type=int, default=None)
    sp.add_argument("--topk", type=int, default=None)
    sp.add_argument("--network", default=None)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--side", type=int, default=None)
    sp.add_argument("--scenario", default=None)
    sp.add_argument("--multi-thread", action="store_true")

    return p


def _merged(args: argparse.Namespace, keys: dict[str, str | None]) -> dict:
    """Request payload from CLI flags with config-file fallback.

    ``keys`` maps payload field -> args attribute (None: same name). A
    flag left at None falls back to the config value under the payload
    field's name, then drops out so the server default applies.
    """
    cfg = load_config_file(args.config) if args.config else {}
    payload = {}
    for field, attr in keys.items():
        value = getattr(args, attr or field)
        if value is None:
            value = cfg.get(field)
        if value is not None:
            payload[field] = value
    return payload


def _train_payload(args: argparse.Namespace) -> dict:
    cfg = load_config_file(args.config) if args.config else {}
    unknown = sorted(set(cfg) - _TRAIN_KEYS - _CORPUS_KEYS)
    if unknown:
        raise SystemExit(
            f"error (usage): unknown config keys {unknown}; "
            f"valid: {sorted(_TRAIN_KEYS | _CORPUS_KEYS)}"
        )

    corpus = {k: cfg[k] for k in _CORPUS_KEYS if k in cfg}
    overrides = {k: cfg[k] for k in _TRAIN_KEYS if k in cfg and k != "scenario"}

    for field, attr in (("gamma", "gamma"), ("gamma_prime", "gamma_prime"),
                        ("split_seed", "split_seed"), ("sliding", "sliding")):
        value = getattr(args, attr)
        if value is not None:
            corpus[field] = value
    flag_overrides = {
        "k": args.k, "max_iterations": args.iterations, "lr": args.lr,
        "emb_dim": args.emb_dim, "hidden": args.hidden,
        "batch_size": args.batch_size, "route_batch_size": args.route_batch_size,
        "eval_every": args.eval_every, "patience": args.patience,
        "seed": args.seed,
    }
    overrides.update({k: v for k, v in flag_overrides.items() if v is not None})

    scenario = args.scenario or cfg.get("scenario") or "no_goal"
    payload = {"network": args.network, "routes": args.routes, "out": args.out,
               "scenario": scenario, "overrides": overrides}
    if corpus:
        payload["corpus"] = corpus
    if args.precomputed is not None:
        payload["precomputed"] = args.precomputed
    return payload


def _request_for(args: argparse.Namespace) -> tuple[str, dict]:
    cmd = args.command
    if cmd == "gen-net":
        return "/network/grid", _merged(args, {
            "side": None, "spacing": None, "jitter": None, "seed": None, "out": None,
        })
    if cmd == "gen-routes":
        return "/routes/generate", _merged(args, {
            "network": None, "count": None, "min_len": None, "sigma": None,
            "seed": None, "out": None,
        })
    if cmd == "precompute":
        return "/precompute", _merged(args, {
            "network": None, "n_d": None, "out": None,
        })
    if cmd == "train":
        return "/train", _train_payload(args)
    if cmd == "predict":
        if args.routes is not None:
            payload = _merged(args, {
                "network": None, "checkpoint": None, "routes": None,
                "split": None, "scenario": None, "topk": None,
                "limit": None, "out": None,
            })
            if args.no_refine:
                payload["refine"] = False
            return "/predict/batch", payload
        if args.edge is None:
            raise SystemExit(
                "error (usage): predict needs --edge (single query) or --routes (batch)"
            )
        payload = _merged(args, {
            "network": None, "checkpoint": None, "scenario": None,
            "dir_class": "dir", "goal_edge": None, "topk": None,
        })
        payload["window"] = args.edge
        if args.no_refine:
            payload["refine"] = False
        return "/predict", payload
    if cmd == "eval":
        payload = _merged(args, {
            "network": None, "checkpoint": None, "routes": None, "split": None,
            "scenario": None, "k_list": None, "out": None,
        })
        if args.no_refine:
            payload["refine"] = False
        return "/eval", payload
    if cmd == "flow":
        return "/flow", _merged(args, {
            "network": None, "checkpoint": None, "routes": None, "split": None,
            "scenario": None, "tau": None, "repeats": None, "seed": None,
            "out": None,
        })
    if cmd == "gradcheck":
        return "/gradcheck", _merged(args, {
            "seed": None, "instances": None, "tolerance": None,
        })
    if cmd == "bench":
        payload = _merged(args, {
            "network": None, "checkpoint": None, "side": None,
            "requests": None, "topk": None, "scenario": None, "seed": None,
        })
        if args.multi_thread:
            payload["single_thread"] = False
        return "/bench", payload
    raise SystemExit(f"error (usage): unknown command {cmd!r}")


async def _post(server: str | None, path: str, payload: dict) -> httpx.Response:
    if server is None:
        from .service import create_app

        transport = httpx.ASGITransport(app=create_app())
        client = httpx.AsyncClient(transport=transport, base_url="http://routecast",
                                   timeout=None)
    else:
        client = httpx.AsyncClient(base_url=server, timeout=None)
    async with client:
        return await client.post(path, json=payload)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    path, payload = _request_for(args)
    try:
        response = asyncio.run(_post(args.server, path, payload))
    except httpx.HTTPError as exc:
        print(f"error (usage): cannot reach server: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if response.status_code // 100 == 2:
        print(json.dumps(response.json(), indent=2))
        return EXIT_OK

    try:
        detail = response.json().get("detail")
    except json.JSONDecodeError:
        detail = None
    if isinstance(detail, dict) and "category" in detail:
        category = detail["category"]
        message = detail.get("message", "")
    else:
        # e.g. request-body validation failures from the server framework
        category = "usage"
        message = json.dumps(detail) if detail is not None else response.text
    print(f"error ({category}): {message}", file=sys.stderr)
    return _CATEGORY_EXIT.get(category, EXIT_USAGE)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
