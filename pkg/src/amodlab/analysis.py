"""Structural and statistical policy analysis over episode logs.

Covers rejection-rate breakdowns by destination-zone occupancy, the
overperformance ratio measuring anticipative rejection behavior, paired
Wilcoxon signed-rank comparisons, and per-date score aggregation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .sim import EpisodeLog


class UndefinedRatio(ValueError):
    """Overperformance ratio with an empty pool; no value is defined."""


# -- rejection rates --------------------------------------------------------


@dataclass
class RejectionRates:
    """Rejection frequencies among profitable requests; None = undefined."""

    overall: float | None
    empty_destination: float | None
    crowded_destination: float | None
    n_profitable: int
    n_empty: int
    n_crowded: int

    @property
    def crowding_gap(self) -> float | None:
        if self.crowded_destination is None or self.empty_destination is None:
            return None
        return self.crowded_destination - self.empty_destination


def rejection_breakdown(logs: list[EpisodeLog], crowded_above: int = 2) -> RejectionRates:
    """Rejection rates of profitable requests, split by destination occupancy.

    A request counts as profitable when its best feasible profit at
    decision time was positive. The empty / crowded categories hold
    requests whose destination zone contained 0 / more than
    `crowded_above` vehicles when the request was decided.
    """
    totals = {"all": 0, "empty": 0, "crowded": 0}
    rejected = {"all": 0, "empty": 0, "crowded": 0}
    for log in logs:
        for d in log.decisions():
            if d.best_profit is None or d.best_profit <= 0:
                continue
            was_rejected = d.assigned_vehicle is None
            cats = ["all"]
            if d.dest_vehicles == 0:
                cats.append("empty")
            elif d.dest_vehicles > crowded_above:
                cats.append("crowded")
            for c in cats:
                totals[c] += 1
                rejected[c] += was_rejected

    def rate(c: str) -> float | None:
        return rejected[c] / totals[c] if totals[c] else None

    return RejectionRates(
        overall=rate("all"),
        empty_destination=rate("empty"),
        crowded_destination=rate("crowded"),
        n_profitable=totals["all"],
        n_empty=totals["empty"],
        n_crowded=totals["crowded"],
    )


# -- overperformance ratio -----------------------------------------------------


@dataclass
class OriginalRequestRecord:
    """One profitable request with the demand it was compared against."""

    accepted: bool
    profit: float
    subsequent_profits: list[float]


def overperformance_from_records(records: list[OriginalRequestRecord]) -> float:
    """Rejection-pool overprofit divided by acceptance-pool overprofit.

    Each subsequent request contributes max(0, theoretical - original)
    to the pool of its original request's decision.
    """
    pools = {True: 0.0, False: 0.0}
    for rec in records:
        over = sum(max(0.0, p - rec.profit) for p in rec.subsequent_profits)
        pools[rec.accepted] += over
    if pools[True] == 0.0:
        raise UndefinedRatio(
            f"acceptance pool is empty (rejection pool {pools[False]:.6g}); "
            "ratio undefined"
        )
    return pools[False] / pools[True]


def overperformance_records(
    logs: list[EpisodeLog], horizon: int = 10
) -> list[OriginalRequestRecord]:
    """Extract the per-request comparison records from episode logs.

    For every profitable request, the theoretical profit of each request
    originating in the same zone within the next `horizon` steps is what
    the stored closest-vehicle position would have earned serving it.
    """
    records: list[OriginalRequestRecord] = []
    for log in logs:
        cfg = log.config
        grid = cfg.grid
        all_decisions = list(log.decisions())
        by_zone: dict[int, list] = {}
        for d in all_decisions:
            by_zone.setdefault(d.origin_zone, []).append(d)
        for d in all_decisions:
            if d.best_profit is None or d.best_profit <= 0:
                continue
            position = d.best_vehicle_zone
            subsequent = []
            for other in by_zone.get(d.origin_zone, []):
                if not (
                    d.placement_step < other.placement_step <= d.placement_step + horizon
                ):
                    continue
                trip = grid.distance_km(other.origin_zone, other.destination_zone)
                approach = grid.distance_km(position, other.origin_zone)
                subsequent.append(
                    cfg.revenue_per_km * trip - cfg.cost_per_km * (approach + trip)
                )
            records.append(
                OriginalRequestRecord(
                    accepted=d.assigned_vehicle is not None,
                    profit=d.best_profit,
                    subsequent_profits=subsequent,
                )
            )
    return records


def overperformance_ratio(logs: list[EpisodeLog], horizon: int = 10) -> float:
    """Anticipation measure: > 1 means demand after rejections was better."""
    return overperformance_from_records(overperformance_records(logs, horizon))


# -- Wilcoxon signed-rank test ---------------------------------------------------

EXACT_LIMIT = 12


def _signed_ranks(differences: np.ndarray) -> np.ndarray:
    """Midranks of |d|, signed by d; zero differences must be gone already."""
    absolute = np.abs(differences)
    order = np.argsort(absolute, kind="stable")
    ranks = np.empty(len(differences))
    sorted_abs = absolute[order]
    i = 0
    while i < len(sorted_abs):
        j = i
        while j < len(sorted_abs) and sorted_abs[j] == sorted_abs[i]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0  # midrank over the tie run
        i = j
    return np.sign(differences) * ranks


def wilcoxon_signed_rank(pairs: list[tuple[float, float]]) -> float:
    """Two-sided signed-rank p-value for paired scores.

    Zero differences are dropped (classic Wilcoxon practice). Up to
    12 effective pairs the exact null distribution over all sign
    assignments is used; beyond that, the normal approximation with tie
    correction.
    """
    if len(pairs) < 5:
        raise ValueError("need at least 5 pairs")
    d = np.array([a - b for a, b in pairs], dtype=float)
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        warnings.warn("all paired differences are zero; p = 1")
        return 1.0
    ranks = _signed_ranks(d)
    w_plus = ranks[ranks > 0].sum()
    mu = n * (n + 1) / 4.0
    if n <= EXACT_LIMIT:
        abs_ranks = np.abs(ranks)
        observed = abs(w_plus - mu)
        count = 0
        for bits in range(1 << n):
            w = 0.0
            for i in range(n):
                if bits >> i & 1:
                    w += abs_ranks[i]
            if abs(w - mu) >= observed - 1e-12:
                count += 1
        return count / (1 << n)
    # normal approximation with tie correction
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    tie_term = (tie_counts**3 - tie_counts).sum() / 48.0
    sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    z = (w_plus - mu) / math.sqrt(sigma2)
    return math.erfc(abs(z) / math.sqrt(2.0))


# -- score aggregation -------------------------------------------------------------


@dataclass
class ScoreSummary:
    dates: list[str]
    per_date_mean: dict[str, float]  # seed-averaged score per date
    mean_score: float
    delta_pct: dict[str, float] | None  # vs. baseline, per date
    mean_delta_pct: float | None
    excluded_seeds: list[int]


def aggregate_scores(
    per_seed_scores: dict[int, dict[str, float]],
    baseline: dict[str, float] | None = None,
    validation_best: dict[int, float] | None = None,
    divergence_floor: float | None = None,
) -> ScoreSummary:
    """Seed-averaged per-date scores, optionally relative to a baseline.

    Seeds whose best validation score fell below `divergence_floor` are
    excluded from the average, mirroring the exclusion of non-converged
    runs from reported results.
    """
    excluded: list[int] = []
    if validation_best is not None and divergence_floor is not None:
        excluded = sorted(
            seed for seed, v in validation_best.items() if v < divergence_floor
        )
    kept = {s: scores for s, scores in per_seed_scores.items() if s not in excluded}
    if not kept:
        raise ValueError("all seeds excluded; nothing to aggregate")
    dates = sorted({d for scores in kept.values() for d in scores})
    per_date = {
        d: float(np.mean([scores[d] for scores in kept.values() if d in scores]))
        for d in dates
    }
    mean_score = float(np.mean(list(per_date.values())))
    delta = mean_delta = None
    if baseline is not None:
        delta = {
            d: 100.0 * (per_date[d] - baseline[d]) / abs(baseline[d])
            for d in dates
            if d in baseline and baseline[d] != 0
        }
        if delta:
            mean_delta = float(np.mean(list(delta.values())))
    return ScoreSummary(
        dates=dates,
        per_date_mean=per_date,
        mean_score=mean_score,
        delta_pct=delta,
        mean_delta_pct=mean_delta,
        excluded_seeds=excluded,
    )


def pairwise_wilcoxon(
    per_algo_date_scores: dict[str, dict[str, float]]
) -> dict[tuple[str, str], float]:
    """Two-sided signed-rank p-value for every algorithm pair."""
    out: dict[tuple[str, str], float] = {}
    for a, b in combinations(sorted(per_algo_date_scores), 2):
        sa, sb = per_algo_date_scores[a], per_algo_date_scores[b]
        dates = sorted(set(sa) & set(sb))
        out[(a, b)] = wilcoxon_signed_rank([(sa[d], sb[d]) for d in dates])
    return out


# -- report -------------------------------------------------------------------


@dataclass
class PolicyReport:
    name: str
    rejection: RejectionRates
    overperformance: float | None
    per_date_profit: dict[str, float]

    def to_text(self) -> str:
        lines = [f"policy report: {self.name}"]
        r = self.rejection

        def fmt(x):
            return "undefined" if x is None else f"{100 * x:.1f}%"

        lines.append(f"  rejection rate (profitable requests): {fmt(r.overall)}")
        lines.append(f"    -> destination zone empty:          {fmt(r.empty_destination)}")
        lines.append(f"    -> destination zone >2 vehicles:    {fmt(r.crowded_destination)}")
        if r.crowding_gap is not None:
            lines.append(f"    -> crowded minus empty gap:         {100 * r.crowding_gap:+.1f}pp")
        if self.overperformance is None:
            lines.append("  overperformance ratio: undefined")
        else:
            lines.append(f"  overperformance ratio: {self.overperformance:.3f}")
        total = sum(self.per_date_profit.values())
        lines.append(f"  total test profit over {len(self.per_date_profit)} dates: {total:.2f}")
        return "\n".join(lines)


def policy_report(name: str, logs_by_date: dict[str, list[EpisodeLog]]) -> PolicyReport:
    logs = [log for group in logs_by_date.values() for log in group]
    try:
        over = overperformance_ratio(logs)
    except UndefinedRatio:
        over = None
    return PolicyReport(
        name=name,
        rejection=rejection_breakdown(logs),
        overperformance=over,
        per_date_profit={
            date: float(sum(log.total_profit() for log in group))
            for date, group in logs_by_date.items()
        },
    )
