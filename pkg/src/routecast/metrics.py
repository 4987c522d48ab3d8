"""Evaluation metrics for predicted route lists and for link-flow counts.

Link-level recall at K credits the best position-wise overlap among the
first K candidates; route-level recall at K credits an exact match; the
reciprocal-rank score uses the first exact match only (duplicate candidates
never double-count).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

DEFAULT_K_LIST = (1, 5, 10)


@dataclass
class EvalReport:
    k_list: tuple[int, ...]
    link_recall: dict[int, float]
    route_recall: dict[int, float]
    mrr: dict[int, float]
    n_samples: int
    records: list[dict] = field(default_factory=list, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "k_list": list(self.k_list),
            "link_recall": {str(k): v for k, v in self.link_recall.items()},
            "route_recall": {str(k): v for k, v in self.route_recall.items()},
            "mrr": {str(k): v for k, v in self.mrr.items()},
        }


def compute_metrics(predictions, truths, k_list=DEFAULT_K_LIST,
                    keep_records: bool = False) -> EvalReport:
    """predictions (B, C, Γ′) candidate lists in rank order, truths (B, Γ′)."""
    preds = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truths, dtype=np.int64)
    if preds.ndim != 3 or truth.ndim != 2 or preds.shape[0] != truth.shape[0] \
            or preds.shape[2] != truth.shape[1]:
        raise UsageError(
            f"prediction/truth shape mismatch: {preds.shape} vs {truth.shape}"
        )
    k_list = tuple(int(k) for k in k_list)
    B, C, gp = preds.shape
    if max(k_list) > C:
        raise UsageError(
            f"requested recall at K={max(k_list)} but only {C} candidates per sample"
        )

    match = preds == truth[:, None, :]              # (B, C, Γ′)
    frac = match.mean(axis=2)                       # (B, C)
    exact = match.all(axis=2)                       # (B, C)
    any_exact = exact.any(axis=1)
    first = np.where(any_exact, np.argmax(exact, axis=1), C)  # 0-based, C if none

    link_r, route_r, mrr = {}, {}, {}
    for k in k_list:
        link_r[k] = float(np.max(frac[:, :k], axis=1).mean())
        route_r[k] = float(exact[:, :k].any(axis=1).mean())
        rr = np.where(first < k, 1.0 / (first + 1.0), 0.0)
        mrr[k] = float(rr.mean())

    records = []
    if keep_records:
        for b in range(B):
            records.append({
                "first_match_rank": int(first[b] + 1) if first[b] < C else None,
                "best_link_fraction": float(frac[b].max()),
            })
    return EvalReport(k_list, link_r, route_r, mrr, B, records)


def flow_metrics(est: np.ndarray, truth: np.ndarray):
    """(MAE, RMSE, R²) over links with at least one true or estimated
    traversal. R² follows the usual 1 − SS_res/SS_tot convention on that
    link set (degenerate constant truth gives 1.0 on a perfect fit, 0.0
    otherwise)."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise UsageError(f"flow count shape mismatch: {est.shape} vs {truth.shape}")
    mask = (est > 0) | (truth > 0)
    if not mask.any():
        return 0.0, 0.0, 1.0
    e, t = est[mask], truth[mask]
    diff = e - t
    mae = float(np.abs(diff).mean())
    rmse = float(np.sqrt(np.mean(diff * diff)))
    ss_res = float(np.sum(diff * diff))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return mae, rmse, r2
