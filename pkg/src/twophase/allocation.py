"""Stratified validation-sample allocation.

Neyman allocation targets stratum draws proportional to ``N_s * sigma_s``
where ``sigma_s`` is the within-stratum standard deviation of the
influence function for the target coefficient.  Later waves allocate the
cumulative budget, close strata that are already over their optimum, and
integerize with an exact priority algorithm that minimizes
``sum_s N_s^2 sigma_s^2 / n_s`` for the fixed sample size.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from twophase.errors import DegenerateDesignError, InfeasibleError, LedgerError
from twophase.records import DesignLedger, DyadRecord, assign_strata

__all__ = [
    "StratumStats",
    "neyman",
    "exact_allocation",
    "multiwave",
    "MultiwaveResult",
    "stratum_sd",
    "allocation_variance",
    "draw_sample",
    "DrawResult",
]


@dataclass
class StratumStats:
    """Inputs to allocation for one stratum."""

    id: str
    population_size: int
    sd: float
    already_sampled: int = 0
    sd_source: str = "stratum"  # "stratum" | "parent" | "proportional"

    def __post_init__(self):
        if self.sd < 0:
            raise ValueError(f"stratum {self.id}: sd must be nonnegative")
        if not 0 <= self.already_sampled <= self.population_size:
            raise ValueError(
                f"stratum {self.id}: already_sampled must lie in [0, N_s]")


def neyman(stats: Sequence[StratumStats], n: int, *,
           proportional_fallback: bool = False) -> dict[str, float]:
    """Fractional Neyman allocation of ``n`` draws.

    Allocates proportional to ``N_s * sd_s``; strata with zero spread get
    zero.  If every stratum has zero spread, raises DegenerateDesignError
    unless ``proportional_fallback`` switches to size-proportional shares.
    """
    if n < 1:
        raise ValueError("target sample size must be at least 1")
    weights = np.array([s.population_size * s.sd for s in stats], dtype=np.float64)
    if weights.sum() <= 0:
        if not proportional_fallback:
            raise DegenerateDesignError(
                "all strata have zero influence spread; pass "
                "proportional_fallback=True to allocate by size")
        weights = np.array([s.population_size for s in stats], dtype=np.float64)
        if weights.sum() <= 0:
            raise DegenerateDesignError("no population to allocate over")
    shares = n * weights / weights.sum()
    return {s.id: float(a) for s, a in zip(stats, shares)}


def allocation_variance(stats: Sequence[StratumStats],
                        allocation: Mapping[str, int]) -> float:
    """Design-variance objective ``sum_s (N_s * sd_s)^2 / n_s``.

    Order-independent (math.fsum) so optimal values compare exactly across
    algorithms.  Strata with zero spread contribute nothing; a zero draw
    in a stratum with positive spread yields ``inf``.
    """
    terms = []
    for s in stats:
        num = (s.population_size * s.sd) ** 2
        if num == 0.0:
            continue
        n_s = allocation.get(s.id, 0)
        if n_s <= 0:
            return math.inf
        terms.append(num / n_s)
    return math.fsum(terms)


def _wright(stats: Sequence[StratumStats], total: int, floors: Sequence[int],
            caps: Sequence[int]) -> dict[str, int]:
    """Exact integer allocation by highest marginal variance reduction.

    Awards units one at a time to the stratum with the largest
    ``N_s sd_s / sqrt(m (m+1))`` priority; ties break on larger
    ``N_s sd_s``, then smaller stratum id.  Minimizes
    ``sum (N_s sd_s)^2 / m_s`` subject to the floors/caps because the
    objective is separable and convex in each ``m_s``.
    """
    floors = [int(f) for f in floors]
    caps = [int(c) for c in caps]
    if any(f > c for f, c in zip(floors, caps)):
        raise InfeasibleError("a stratum floor exceeds its capacity")
    base = sum(floors)
    if total < base:
        raise InfeasibleError(
            f"target {total} is below the {base} draws required by stratum floors")
    if total > sum(caps):
        raise InfeasibleError(
            f"target {total} exceeds the remaining population {sum(caps)}")
    alloc = list(floors)
    heap = []
    for j, s in enumerate(stats):
        nsigma = s.population_size * s.sd
        if nsigma <= 0 or alloc[j] >= caps[j]:
            continue
        m = alloc[j]
        pri = math.inf if m == 0 else nsigma / math.sqrt(m * (m + 1))
        heapq.heappush(heap, (-pri, -nsigma, s.id, j))
    remaining = total - base
    while remaining > 0 and heap:
        _, neg_nsigma, _, j = heapq.heappop(heap)
        alloc[j] += 1
        remaining -= 1
        if alloc[j] < caps[j]:
            nsigma = -neg_nsigma
            pri = nsigma / math.sqrt(alloc[j] * (alloc[j] + 1))
            heapq.heappush(heap, (-pri, neg_nsigma, stats[j].id, j))
    if remaining > 0:
        # Only zero-spread strata have room left; spread the residue there.
        for j, s in enumerate(stats):
            room = caps[j] - alloc[j]
            if room > 0:
                take = min(room, remaining)
                alloc[j] += take
                remaining -= take
                if remaining == 0:
                    break
    if remaining > 0:
        raise InfeasibleError("allocation could not place the full budget")
    return {s.id: alloc[j] for j, s in enumerate(stats)}


def exact_allocation(stats: Sequence[StratumStats], n: int,
                     min_per_stratum: int = 1) -> dict[str, int]:
    """Integer allocation summing exactly to ``n``.

    Every stratum starts at ``min_per_stratum`` (capped by its remaining
    population); the rest is awarded by the exact priority rule.  The
    result minimizes ``sum_s (N_s sd_s)^2 / n_s`` over integer allocations
    at this size.
    """
    caps = [s.population_size - s.already_sampled for s in stats]
    floors = [min(min_per_stratum, c) for c in caps]
    return _wright(stats, n, floors, caps)


@dataclass
class MultiwaveResult:
    """Wave allocation with the strata closed or capped along the way."""

    draws: dict[str, int]
    closed: set[str] = field(default_factory=set)
    fractional: dict[str, float] = field(default_factory=dict)
    spilled: set[str] = field(default_factory=set)

    @property
    def total(self) -> int:
        return sum(self.draws.values())


def multiwave(stats: Sequence[StratumStats], cumulative_target: int, *,
              min_per_stratum: int = 1,
              pre_closed: set[str] | frozenset[str] = frozenset()) -> MultiwaveResult:
    """Wave-k integer allocation for a cumulative budget.

    Computes the corrected Neyman allocation
    ``target * N_s sd_s / sum N_s sd_s - already_s`` over open strata;
    any stratum whose correction is negative is closed (draw 0) and the
    allocation is recomputed for the remaining budget until all open
    allocations are nonnegative.  Open draws are integerized exactly and
    capped by the remaining stratum populations; overflow spills to
    closed strata with room only when the open strata cannot absorb the
    budget.
    """
    by_id = {s.id: s for s in stats}
    if len(by_id) != len(stats):
        raise ValueError("duplicate stratum ids in stats")
    total_already = sum(s.already_sampled for s in stats)
    budget = cumulative_target - total_already
    if budget < 0:
        raise InfeasibleError(
            f"cumulative target {cumulative_target} is below the "
            f"{total_already} records already sampled")
    capacity = {s.id: s.population_size - s.already_sampled for s in stats}
    if budget > sum(capacity.values()):
        raise InfeasibleError(
            f"remaining population {sum(capacity.values())} cannot supply "
            f"a budget of {budget}")

    closed = {sid for sid in pre_closed}
    closed |= {s.id for s in stats if capacity[s.id] == 0}
    open_ids = [s.id for s in stats if s.id not in closed]

    fractional: dict[str, float] = {}
    for _ in range(len(stats) + 1):
        open_stats = [by_id[sid] for sid in open_ids]
        if not open_stats:
            break
        open_target = cumulative_target - sum(by_id[sid].already_sampled
                                              for sid in closed)
        weights = np.array([s.population_size * s.sd for s in open_stats])
        if weights.sum() <= 0:
            # Degenerate spread: keep every remaining stratum open and let
            # the integer stage fall back to size-proportional priorities.
            fractional = {s.id: math.nan for s in open_stats}
            break
        shares = open_target * weights / weights.sum()
        fractional = {
            s.id: float(share) - s.already_sampled
            for s, share in zip(open_stats, shares)
        }
        negative = [sid for sid, v in fractional.items() if v < 0]
        if not negative:
            break
        closed.update(negative)
        open_ids = [sid for sid in open_ids if sid not in negative]

    draws = {s.id: 0 for s in stats}
    if budget == 0:
        return MultiwaveResult(draws=draws, closed=closed, fractional=fractional)

    open_stats = [by_id[sid] for sid in open_ids]
    open_capacity = sum(capacity[sid] for sid in open_ids)
    spilled: set[str] = set()
    if open_capacity < budget:
        # The open strata cannot absorb the whole wave; closed strata with
        # remaining members take the overflow.
        spill_ids = sorted(sid for sid in closed if capacity[sid] > 0)
        spilled = set(spill_ids)
        open_stats = open_stats + [by_id[sid] for sid in spill_ids]

    if all(s.sd == 0 for s in open_stats):
        # Pure size-proportional emergency path.
        open_stats = [StratumStats(s.id, s.population_size, 1.0, s.already_sampled)
                      for s in open_stats]

    floors = [max(s.already_sampled, min(min_per_stratum,
                                         s.population_size))
              for s in open_stats]
    floors = [min(f, s.population_size) for f, s in zip(floors, open_stats)]
    caps = [s.population_size for s in open_stats]
    target = budget + sum(s.already_sampled for s in open_stats)
    cumulative = _wright(open_stats, target, floors, caps)
    for s in open_stats:
        draws[s.id] = cumulative[s.id] - s.already_sampled
    return MultiwaveResult(draws=draws, closed=closed, fractional=fractional,
                           spilled=spilled)


def stratum_sd(values: Mapping[str, float], assignment: Mapping[str, str],
               ledger: DesignLedger) -> list[StratumStats]:
    """Per-leaf influence standard deviations for the next allocation.

    ``values`` maps record id to its influence value (typically records
    validated so far, or all records in wave 1); ``assignment`` maps the
    same ids to leaf stratum ids.  Leaves with fewer than two values
    borrow the SD pooled over the nearest ancestor's subtree (flagged
    ``parent``); with no usable ancestor they get the overall pooled SD
    (flagged ``proportional``), which makes Neyman allocation fall back
    to size-proportional for those strata.
    """
    leaves = ledger.leaves()
    leaf_ids = {s.id for s in leaves}
    per_leaf: dict[str, list[float]] = {sid: [] for sid in leaf_ids}
    for rid, sid in assignment.items():
        if rid not in values:
            continue
        if sid not in leaf_ids:
            raise LedgerError(f"assignment targets non-leaf stratum {sid!r}")
        per_leaf[sid].append(float(values[rid]))

    def descendants(root: str) -> list[str]:
        out = []
        stack = [root]
        while stack:
            cur = stack.pop()
            kids = [s.id for s in ledger.strata.values() if s.parent == cur]
            if not kids and cur in leaf_ids:
                out.append(cur)
            stack.extend(kids)
        return out

    all_values = [v for vs in per_leaf.values() for v in vs]
    pooled = float(np.std(all_values, ddof=1)) if len(all_values) >= 2 else 1.0

    out = []
    for leaf in leaves:
        vals = per_leaf[leaf.id]
        if len(vals) >= 2:
            sd = float(np.std(vals, ddof=1))
            source = "stratum"
        else:
            sd = None
            source = "parent"
            ancestor = leaf.parent
            while ancestor is not None:
                pooled_vals = [v for sid in descendants(ancestor) for v in per_leaf[sid]]
                if len(pooled_vals) >= 2:
                    sd = float(np.std(pooled_vals, ddof=1))
                    break
                ancestor = ledger.strata[ancestor].parent
            if sd is None:
                sd = pooled
                source = "proportional"
        out.append(StratumStats(
            id=leaf.id,
            population_size=leaf.population_size,
            sd=sd,
            already_sampled=leaf.total_sampled,
            sd_source=source,
        ))
    return out


@dataclass
class DrawResult:
    """Record ids drawn per stratum in one wave."""

    wave: int
    by_stratum: dict[str, list[str]]
    overlap_ids: set[str] = field(default_factory=set)

    def all_ids(self) -> list[str]:
        return [rid for ids in self.by_stratum.values() for rid in ids]


def draw_sample(records: Sequence[DyadRecord], ledger: DesignLedger,
                allocation: Mapping[str, int], seed: int, *,
                wave: int | None = None) -> DrawResult:
    """Simple random sample without replacement within each stratum.

    Records already drawn in this frame are ineligible.  Records
    validated through the other frame remain drawable and are reported in
    ``overlap_ids`` (their validation is reused, not repeated).
    Deterministic for a given seed and ledger state.
    """
    wave = ledger.wave_count + 1 if wave is None else wave
    assignment = assign_strata(records, ledger)
    already = ledger.sampled_ids()
    eligible: dict[str, list[str]] = {sid: [] for sid in ledger.leaf_ids()}
    for rec in records:
        sid = assignment.get(rec.id)
        if sid is None or rec.id in already:
            continue
        eligible[sid].append(rec.id)
    validated_ids = {r.id for r in records if r.validated}

    rng = np.random.default_rng(np.random.SeedSequence([seed, wave]))
    by_stratum: dict[str, list[str]] = {}
    overlap: set[str] = set()
    for sid in sorted(allocation):
        want = int(allocation[sid])
        if want == 0:
            continue
        if sid not in eligible:
            raise LedgerError(f"allocation targets unknown leaf {sid!r}")
        pool = sorted(eligible[sid])
        if want > len(pool):
            raise InfeasibleError(
                f"stratum {sid!r}: allocation {want} exceeds the "
                f"{len(pool)} remaining records")
        take = rng.choice(len(pool), size=want, replace=False)
        ids = [pool[i] for i in sorted(take)]
        by_stratum[sid] = ids
        overlap.update(rid for rid in ids if rid in validated_ids)
    return DrawResult(wave=wave, by_stratum=by_stratum, overlap_ids=overlap)
