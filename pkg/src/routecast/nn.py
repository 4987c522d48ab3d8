"""Dense-network substrate: MLPs, losses, optimizer, gradient checking.

Everything is float64 numpy with hand-derived backward passes — small models
make precision cheaper than debugging 32-bit gradient checks. Parameters
live in flat ``{name: array}`` dicts so the optimizer and the checkpoint
format can treat the whole model uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError


@dataclass
class Mlp:
    """Affine/activation stack. ``acts[i]`` is "relu" or "identity"."""

    name: str
    Ws: list[np.ndarray]
    bs: list[np.ndarray]
    acts: list[str]

    @property
    def in_dim(self) -> int:
        return self.Ws[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.Ws[-1].shape[1]

    def param_items(self):
        for i, (W, b) in enumerate(zip(self.Ws, self.bs)):
            yield f"{self.name}.W{i}", W
            yield f"{self.name}.b{i}", b

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for i in range(len(self.Ws)):
            self.Ws[i] = params[f"{self.name}.W{i}"]
            self.bs[i] = params[f"{self.name}.b{i}"]


def mlp_init(name: str, dims: list[int], rng: np.random.Generator, acts=None) -> Mlp:
    """Glorot-uniform weights, zero biases. Hidden layers relu, last identity
    unless ``acts`` overrides."""
    if len(dims) < 2:
        raise UsageError(f"{name}: need at least input and output dims")
    if acts is None:
        acts = ["relu"] * (len(dims) - 2) + ["identity"]
    if len(acts) != len(dims) - 1:
        raise UsageError(f"{name}: {len(dims) - 1} layers but {len(acts)} activations")
    Ws, bs = [], []
    for din, dout in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (din + dout))
        Ws.append(rng.uniform(-bound, bound, size=(din, dout)))
        bs.append(np.zeros(dout))
    return Mlp(name, Ws, bs, list(acts))


def mlp_forward(mlp: Mlp, x: np.ndarray):
    """Returns (output, cache). Accepts (d,) or (B, d) input."""
    squeeze = x.ndim == 1
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != mlp.in_dim:
        raise UsageError(f"{mlp.name}: input dim {h.shape[1]} != {mlp.in_dim}")
    cache = []
    for W, b, act in zip(mlp.Ws, mlp.bs, mlp.acts):
        z = h @ W + b
        cache.append((h, z))
        h = np.maximum(z, 0.0) if act == "relu" else z
    out = h[0] if squeeze else h
    return out, cache


def mlp_backward(mlp: Mlp, cache, dout: np.ndarray):
    """Returns (grads dict keyed like param_items, dinput)."""
    dh = np.atleast_2d(np.asarray(dout, dtype=np.float64))
    grads: dict[str, np.ndarray] = {}
    for i in range(len(mlp.Ws) - 1, -1, -1):
        h_in, z = cache[i]
        dz = dh * (z > 0.0) if mlp.acts[i] == "relu" else dh
        grads[f"{mlp.name}.W{i}"] = h_in.T @ dz
        grads[f"{mlp.name}.b{i}"] = dz.sum(axis=0)
        dh = dz @ mlp.Ws[i].T
    dinput = dh[0] if np.asarray(dout).ndim == 1 else dh
    return grads, dinput


def min_preactivation_margin(cache) -> float:
    """Smallest |pre-activation| over relu layers in a forward cache.

    Used by gradient-check callers to resample instances sitting on a relu
    kink, where finite differences are invalid.
    """
    m = np.inf
    for _, z in cache:
        if z.size:
            m = min(m, float(np.min(np.abs(z))))
    return m


# ---------------------------------------------------------------------- #
# softmax cross-entropy


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis; -inf entries get probability 0."""
    z = np.asarray(logits, dtype=np.float64)
    zmax = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    e = np.where(np.isneginf(z), 0.0, e)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, target: int):
    """(loss, probs, dlogits) for one logit vector."""
    p = softmax(logits)
    loss = -np.log(p[target]) if p[target] > 0.0 else np.inf
    d = p.copy()
    d[target] -= 1.0
    return float(loss), p, d


def softmax_cross_entropy_batch(logits: np.ndarray, targets: np.ndarray):
    """Row-wise CE. Returns (losses (B,), probs (B, m), dlogits (B, m)).

    ``dlogits`` is the gradient of the SUM of the row losses.
    """
    p = softmax(logits)
    rows = np.arange(len(targets))
    pt = p[rows, targets]
    with np.errstate(divide="ignore"):
        losses = np.where(pt > 0.0, -np.log(np.maximum(pt, 1e-300)), np.inf)
    d = p.copy()
    d[rows, targets] -= 1.0
    return losses, p, d


# ---------------------------------------------------------------------- #
# optimizer: Adam with decoupled weight decay


@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_init(params: dict[str, np.ndarray], lr=1e-3, weight_decay=1e-2,
               beta1=0.9, beta2=0.999, eps=1e-8) -> OptimizerState:
    state = OptimizerState(lr=lr, weight_decay=weight_decay, beta1=beta1, beta2=beta2, eps=eps)
    for k, p in params.items():
        state.m[k] = np.zeros_like(p)
        state.v[k] = np.zeros_like(p)
    return state


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: OptimizerState) -> None:
    """In-place decoupled-weight-decay update over every key in ``params``.

    Grads must cover all keys (use zeros for untouched blocks); decay applies
    to every parameter in the call, matching dense-gradient Adam semantics.
    """
    missing = set(params) - set(grads)
    if missing:
        raise UsageError(f"gradients missing for: {sorted(missing)}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise UsageError(f"gradient shape mismatch for {k}: {g.shape} vs {p.shape}")
        m = state.m[k]
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        p -= state.lr * (mhat / (np.sqrt(vhat) + state.eps) + state.weight_decay * p)


# ---------------------------------------------------------------------- #
# finite-difference verification


def grad_check(loss_fn, params: dict[str, np.ndarray], tol: float = 1e-4,
               h: float = 1e-4, samples_per_block: int = 24, seed: int = 0):
    """Compare analytic gradients to central differences on a coordinate
    subsample.

    ``loss_fn(params) -> (loss, grads)`` must be deterministic. Relative
    error uses a small denominator floor (1e-3) so roundoff on near-zero
    coordinates does not masquerade as gradient error. Returns a report dict
    with per-block max error and an overall pass flag.
    """
    _, grads = loss_fn(params)
    rng = np.random.default_rng(seed)
    report = {"tol": tol, "h": h, "blocks": {}, "max_rel_err": 0.0, "failures": []}
    for name in sorted(params):
        p = params[name]
        # a block absent from the grads dict claims zero dependence; verify it
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        n = p.size
        idxs = np.arange(n) if n <= samples_per_block else rng.choice(n, size=samples_per_block, replace=False)
        flat = p.reshape(-1)
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = loss_fn(params)
            flat[i] = orig - h
            lm, _ = loss_fn(params)
            flat[i] = orig
            num = (lp - lm) / (2.0 * h)
            ana = g.reshape(-1)[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-3)
            worst = max(worst, rel)
        report["blocks"][name] = worst
        report["max_rel_err"] = max(report["max_rel_err"], worst)
        if worst >= tol:
            report["failures"].append(name)
    report["ok"] = not report["failures"]
    return report
