"""Exact per-slice bandwidth solver and sequential admission control.

The throughput objective is linear in bandwidth once each user's spectral
coefficient is fixed, so the per-slice problem is a continuous knapsack:
give everyone their lower bound, then pour the remaining budget into users
in descending coefficient order. ``brute_force_oracle`` cross-checks this
on small instances by grid enumeration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from slicegraph.domain import (
    Allocation,
    IntentLabel,
    NetworkState,
    RadioParams,
    SliceConfig,
    SliceKind,
    SliceLedger,
    UserProfile,
    ValidationError,
)
from slicegraph.radio import ZERO_COEFF, ZeroCapacityChannel, spectral_coefficient

# Relative slack for rate and bound comparisons; budget sums stay exact.
REL_EPS = 1e-9


@dataclass(frozen=True)
class FeasibleInterval:
    """Bandwidth range [lower, upper] satisfying one user's rate need."""

    user_id: int
    lower_mhz: float
    upper_mhz: float
    coefficient: float

    def __post_init__(self) -> None:
        if self.lower_mhz <= 0 or self.lower_mhz > self.upper_mhz * (1 + REL_EPS):
            raise ValidationError(f"empty feasible interval for user {self.user_id}")
        if self.coefficient <= 0:
            raise ValidationError(f"non-positive coefficient for user {self.user_id}")

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "lower_mhz": self.lower_mhz,
            "upper_mhz": self.upper_mhz,
            "coefficient": self.coefficient,
        }


@dataclass(frozen=True)
class Infeasible:
    reason: str


@dataclass(frozen=True)
class Rejected:
    reason: str


def feasible_interval(
    intent: IntentLabel,
    snr_db: float,
    slice_config: SliceConfig,
    radio: RadioParams,
    *,
    rate_cap: bool = True,
) -> FeasibleInterval | Infeasible:
    """Bandwidth interval serving the intent inside the slice's bounds.

    With ``rate_cap`` the upper bound is trimmed so the raw rate never
    exceeds the slice's rate ceiling (the solver's strict reading). The
    workflow's grant policy passes ``rate_cap=False``: it hands out up to
    the per-user bandwidth cap and enforces the rate ceiling when rates
    are reported.
    """
    if intent.required_latency_ms > slice_config.latency_max_ms:
        return Infeasible("latency")
    if intent.required_rate_mbps > slice_config.rate_max_mbps:
        return Infeasible("rate-above-max")
    coeff = spectral_coefficient(radio.alpha, snr_db)
    if coeff <= ZERO_COEFF:
        raise ZeroCapacityChannel(f"zero-capacity channel at {snr_db} dB")
    target = max(slice_config.rate_min_mbps, intent.required_rate_mbps)
    lower = max(slice_config.bw_min_mhz, target / coeff)
    upper = slice_config.bw_max_mhz
    if rate_cap:
        upper = min(upper, slice_config.rate_max_mbps / coeff)
    if lower > upper * (1 + REL_EPS):
        return Infeasible("bounds")
    return FeasibleInterval(
        user_id=0, lower_mhz=lower, upper_mhz=upper, coefficient=coeff
    )


def fill_order(intervals: Sequence[FeasibleInterval]) -> list[int]:
    """Indices in strictly descending coefficient order, ties by user id."""
    return sorted(
        range(len(intervals)),
        key=lambda i: (-intervals[i].coefficient, intervals[i].user_id),
    )


def greedy_fill(
    intervals: Sequence[FeasibleInterval], budget_mhz: float
) -> list[float] | Infeasible:
    """Unique optimum of the per-slice LP under the coefficient-order tie-break.

    Returns bandwidths aligned with the input order. The marginal user's
    share is shaved by ulps if float rounding would push the total past
    the budget, keeping the sum-within-budget invariant exact.
    """
    lowers = [iv.lower_mhz for iv in intervals]
    if math.fsum(lowers) > budget_mhz:
        return Infeasible("budget")
    bws = list(lowers)
    slack = budget_mhz - math.fsum(lowers)
    marginal = -1
    for i in fill_order(intervals):
        if slack <= 0:
            break
        step = min(intervals[i].upper_mhz - bws[i], slack)
        if step > 0:
            bws[i] += step
            slack -= step
            marginal = i
    while marginal >= 0 and math.fsum(bws) > budget_mhz and bws[marginal] > lowers[marginal]:
        bws[marginal] = max(lowers[marginal], math.nextafter(bws[marginal], 0.0))
    return bws


def fill_throughput(intervals: Sequence[FeasibleInterval], bws: Sequence[float]) -> float:
    return math.fsum(iv.coefficient * b for iv, b in zip(intervals, bws))


def brute_force_oracle(
    intervals: Sequence[FeasibleInterval],
    budget_mhz: float,
    grid_mhz: float,
) -> tuple[float, list[float]] | Infeasible:
    """Exhaustive grid search over bandwidth vectors; verification only."""
    if len(intervals) > 6:
        raise ValueError("instance too large for brute force (max 6 users)")
    if grid_mhz < 0.05:
        raise ValueError("grid too fine for brute force (min 0.05 MHz)")
    lowers = [iv.lower_mhz for iv in intervals]
    if math.fsum(lowers) > budget_mhz:
        return Infeasible("budget")

    best_value = -1.0
    best_bws: list[float] = []
    current = list(lowers)

    def search(i: int, used: float, value: float) -> None:
        nonlocal best_value, best_bws
        if i == len(intervals):
            if value > best_value:
                best_value = value
                best_bws = list(current)
            return
        iv = intervals[i]
        room = min(iv.upper_mhz, budget_mhz - used)
        steps = int(math.floor((room - iv.lower_mhz) / grid_mhz + 1e-12))
        for k in range(steps, -1, -1):
            b = iv.lower_mhz + k * grid_mhz
            current[i] = b
            search(i + 1, used + b, value + iv.coefficient * b)
        current[i] = iv.lower_mhz

    search(0, 0.0, 0.0)
    return best_value, best_bws


def random_instance(
    rng, grid_mhz: float, max_users: int = 5
) -> tuple[list[FeasibleInterval], float]:
    """Seeded verification instance with bounds and budget on the grid.

    Keeping everything grid-aligned means the greedy optimum is itself a
    grid point, so the brute-force oracle can match it exactly. Roughly a
    tenth of the instances are over-subscribed on purpose.
    """
    n = rng.randint(1, max_users)
    intervals = []
    for user_id in range(1, n + 1):
        lower = grid_mhz * rng.randint(4, 40)
        upper = lower + grid_mhz * rng.randint(0, 24)
        intervals.append(
            FeasibleInterval(
                user_id=user_id,
                lower_mhz=lower,
                upper_mhz=upper,
                coefficient=rng.uniform(1.0, 20.0),
            )
        )
    total_lower = math.fsum(iv.lower_mhz for iv in intervals)
    if rng.random() < 0.1:
        budget = total_lower - grid_mhz * rng.randint(1, 4)
    else:
        budget = total_lower + grid_mhz * rng.randint(0, 16)
    return intervals, budget


def admit_sequential(
    state: NetworkState, kind: SliceKind, interval: FeasibleInterval
) -> SliceLedger | Rejected:
    """Admit a user into a slice, re-filling everyone already there.

    Admission succeeds exactly when all lower bounds, the newcomer's
    included, fit the budget; existing users may shrink toward their lower
    bounds but are never evicted.
    """
    ledger = state.ledger(kind)
    if interval.user_id in state.seen_ids():
        raise ValidationError(f"user {interval.user_id} already processed")
    intervals = list(ledger.intervals) + [interval]
    bws = greedy_fill(intervals, ledger.config.budget_mhz)
    if isinstance(bws, Infeasible):
        return Rejected("capacity")
    allocations = tuple(
        Allocation(
            user_id=iv.user_id,
            slice=kind,
            bandwidth_mhz=b,
            rate_mbps=iv.coefficient * b,
        )
        for iv, b in zip(intervals, bws)
    )
    return SliceLedger(
        config=ledger.config, allocations=allocations, intervals=tuple(intervals)
    )


def rule_based_step(
    state: NetworkState,
    user: UserProfile,
    configs: dict[SliceKind, SliceConfig],
    radio: RadioParams,
) -> NetworkState:
    """One arrival under the full-information allocator.

    The ground-truth intent stands in for ideal understanding; the labeled
    slice is solved exactly on every admission.
    """
    intent = user.ground_truth
    result = feasible_interval(intent, user.snr_db, configs[intent.slice], radio)
    if isinstance(result, Infeasible):
        return state.with_rejection(user.id, "infeasible-intent").next_slot()
    interval = replace(result, user_id=user.id)
    outcome = admit_sequential(state, intent.slice, interval)
    if isinstance(outcome, Rejected):
        return state.with_rejection(user.id, outcome.reason).next_slot()
    return state.with_ledger(intent.slice, outcome).next_slot()
