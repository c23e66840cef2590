"""Per-filter scoring (magnitude, relevance, weighted combination) and
greedy structured prune planning.

Scores are min-max normalized to [0, 1] (per layer by default), then
combined as s = (1 - delta) * M + delta * R: delta = 0 is pure magnitude,
delta = 1 pure relevance. Lowest combined score is pruned first.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintError, InputError
from .network import Network

NORM_SCOPES = ("per-layer", "global")


@dataclass
class ScoreRow:
    layer: int
    unit: int
    raw_magnitude: float
    raw_relevance: float
    m: float = 0.0
    r: float = 0.0
    s: float = 0.0
    params_in_unit: int = 0


@dataclass
class ScoreTable:
    rows: list[ScoreRow]
    total_prunable_params: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["layer", "unit", "raw_m", "raw_r", "M", "R", "s", "params"])
            for row in self.rows:
                writer.writerow(
                    [row.layer, row.unit]
                    + [repr(v) for v in (row.raw_magnitude, row.raw_relevance, row.m, row.r, row.s)]
                    + [row.params_in_unit]
                )


@dataclass
class PrunePlan:
    units: list[tuple[int, int]]
    achieved_fraction: float
    requested_fraction: float


def magnitude_scores(net: Network) -> dict[tuple[int, int], float]:
    """Mean |w| over each active unit's active weight elements."""
    if not net.prunable_indices:
        raise InputError("network has no prunable layers")
    out = {}
    for i in net.prunable_indices:
        w = net.layers[i].params["w"]
        tr = net.trainable[i]["w"]
        for u in np.flatnonzero(net.masks[i]):
            sel = tr[u]
            vals = np.abs(w[u][sel]) if sel.any() else np.zeros(1)
            out[(i, int(u))] = float(vals.mean())
    return out


def relevance_unit_scores(net: Network, rel_w: dict[int, np.ndarray]) -> dict[tuple[int, int], float]:
    """Mean parameter relevance per active unit (same aggregation as magnitude)."""
    out = {}
    for i in net.prunable_indices:
        rw = rel_w[i].reshape(rel_w[i].shape[0], -1)
        tr = net.trainable[i]["w"].reshape(rw.shape)
        for u in np.flatnonzero(net.masks[i]):
            sel = tr[u]
            vals = rw[u][sel] if sel.any() else np.zeros(1)
            out[(i, int(u))] = float(vals.mean())
    return out


def normalize(raw: dict[tuple[int, int], float], scope: str = "per-layer") -> dict[tuple[int, int], float]:
    """Min-max normalize raw scores to [0, 1] within the chosen scope.

    A constant-valued scope maps to 0.5 everywhere, so it neither attracts
    nor repels pruning.
    """
    if scope not in NORM_SCOPES:
        raise InputError(f"normalization scope must be one of {NORM_SCOPES}")
    if not raw:
        raise InputError("nothing to normalize")
    groups: dict = {}
    for key, val in raw.items():
        gkey = key[0] if scope == "per-layer" else None
        groups.setdefault(gkey, []).append((key, val))
    out = {}
    for _, items in groups.items():
        vals = np.array([v for _, v in items])
        lo, hi = vals.min(), vals.max()
        if hi == lo:
            for key, _ in items:
                out[key] = 0.5
        else:
            for key, v in items:
                out[key] = float((v - lo) / (hi - lo))
    return out


def combine(m: float, r: float, delta: float) -> float:
    """s = (1 - delta) * M + delta * R."""
    if not 0.0 <= delta <= 1.0:
        raise InputError(f"delta {delta} outside [0, 1]")
    return (1.0 - delta) * m + delta * r


def build_score_table(
    net: Network,
    raw_magnitude: dict[tuple[int, int], float],
    raw_relevance: dict[tuple[int, int], float] | None,
    delta: float,
    scope: str = "per-layer",
) -> ScoreTable:
    """Normalize raw scores and combine them; raw_relevance may be omitted
    only when delta == 0 (pure magnitude)."""
    m_norm = normalize(raw_magnitude, scope)
    if raw_relevance is None:
        if delta != 0.0:
            raise InputError("relevance scores required when delta > 0")
        r_raw = {k: 0.0 for k in raw_magnitude}
        r_norm = {k: 0.0 for k in raw_magnitude}
    else:
        r_raw = raw_relevance
        r_norm = normalize(raw_relevance, scope)
    rows = []
    for (layer, unit) in sorted(raw_magnitude):
        m, r = m_norm[(layer, unit)], r_norm[(layer, unit)]
        rows.append(
            ScoreRow(
                layer,
                unit,
                raw_magnitude[(layer, unit)],
                r_raw[(layer, unit)],
                m,
                r,
                combine(m, r, delta),
                net.unit_param_count(layer),
            )
        )
    return ScoreTable(rows, net.total_prunable_params())


def plan_prune(scores: ScoreTable, rho: float) -> PrunePlan:
    """Greedily select lowest-score units until the removed-parameter
    fraction reaches rho, never emptying a layer.

    Ties break on (layer, unit). Skipped units (layer would empty) stay
    skipped; if the target is unreachable a ConstraintError reports the
    maximum achievable fraction.
    """
    if not 0.0 <= rho < 1.0:
        raise InputError(f"pruning factor {rho} outside [0, 1)")
    total = scores.total_prunable_params
    remaining = {}
    for row in scores.rows:
        remaining[row.layer] = remaining.get(row.layer, 0) + 1

    ordered = sorted(scores.rows, key=lambda r: (r.s, r.layer, r.unit))
    chosen: list[tuple[int, int]] = []
    removed = 0
    max_removed = 0
    for row in ordered:
        if removed / total >= rho:
            break
        if remaining[row.layer] <= 1:
            continue
        remaining[row.layer] -= 1
        chosen.append((row.layer, row.unit))
        removed += row.params_in_unit
    # what could have been removed in total, for the error message
    max_removed = sum(
        r.params_in_unit for r in scores.rows
    ) - sum(
        min(r.params_in_unit for r in scores.rows if r.layer == layer)
        for layer in remaining
    )
    achieved = removed / total
    if achieved < rho:
        raise ConstraintError(
            f"requested fraction {rho} unreachable; max achievable is "
            f"{max_removed / total:.6f} under the nonempty-layer constraint"
        )
    return PrunePlan(chosen, achieved, rho)


def apply_plan(net: Network, plan: PrunePlan) -> None:
    for layer, unit in plan.units:
        net.apply_mask(layer, unit)
