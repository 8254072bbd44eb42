"""Sequential-arrival harness: user generation, per-slot metrics, Monte Carlo.

One user arrives per time slot. Utilization metrics are per-slot
allocated/budget ratios averaged over all slots; the final-state ratio is
kept alongside for end-state comparisons. Throughput counts the rate-law
value of every admitted user, capped at its slice's rate ceiling.
"""

from __future__ import annotations

import json
import math
import random
import re
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from slicegraph.agent import (
    DEFAULT_TEMPLATES,
    PromptTemplates,
    build_agent_graph,
    prompt_baseline_step,
)
from slicegraph.domain import (
    IntentLabel,
    NetworkState,
    RadioParams,
    Scenario,
    SliceConfig,
    SliceKind,
    UserProfile,
    ValidationError,
    empty_network,
)
from slicegraph.graphflow import GlobalState, GraphError, TraceEntry
from slicegraph.knowledge import KnowledgeBase, default_kb
from slicegraph.llm import Backend, BackendError, MockBackend
from slicegraph.optimizer import rule_based_step
from slicegraph.radio import snr_from_geometry

METHODS = ("rule", "agent", "prompt")

_REQUEST_LINE_RE = re.compile(r'^User request: "(.*)"$', re.MULTILINE)


class RunAborted(RuntimeError):
    """Backend failure mid-run; carries whatever completed before the abort."""

    def __init__(self, message: str, traces=(), completed=()):
        super().__init__(message)
        self.traces = tuple(traces)
        self.completed = tuple(completed)


@dataclass(frozen=True)
class RequestOption:
    text: str
    label: IntentLabel


@dataclass(frozen=True)
class SlotSnapshot:
    slot: int
    allocated_embb_mhz: float
    allocated_urllc_mhz: float
    throughput_mbps: float
    supported_users: int


@dataclass(frozen=True)
class Metrics:
    utilization_overall: float
    utilization_embb: float
    utilization_urllc: float
    idle_rate: float
    throughput_mbps: float
    supported_users: int
    intent_accuracy: float
    utilization_final: float
    per_slot: tuple[SlotSnapshot, ...] = ()

    SCALAR_FIELDS = (
        "utilization_overall",
        "utilization_embb",
        "utilization_urllc",
        "idle_rate",
        "throughput_mbps",
        "supported_users",
        "intent_accuracy",
        "utilization_final",
    )

    def scalars(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in self.SCALAR_FIELDS}


@dataclass(frozen=True)
class RunResult:
    metrics: Metrics
    network: NetworkState
    traces: tuple[tuple[int, tuple[TraceEntry, ...]], ...] = ()


def capped_rate(rate_mbps: float, config: SliceConfig) -> float:
    return min(rate_mbps, config.rate_max_mbps)


def network_throughput(
    network: NetworkState, configs: dict[SliceKind, SliceConfig]
) -> float:
    total = 0.0
    for kind in (SliceKind.EMBB, SliceKind.URLLC):
        cfg = configs[kind]
        total += math.fsum(
            capped_rate(a.rate_mbps, cfg) for a in network.ledger(kind).allocations
        )
    return total


def generate_users(
    n: int,
    seed: int,
    radio: RadioParams,
    pool: Sequence[RequestOption],
    radius_m: float = 500.0,
    min_distance_m: float = 1.0,
) -> list[UserProfile]:
    """Seeded placement in an annulus around the base station.

    Distances are uniform in area between ``min_distance_m`` and
    ``radius_m``; requests and ground truths are drawn as pairs from the
    pool. Deterministic given the seed.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not pool:
        raise ValidationError("request pool is empty")
    if min_distance_m < 1.0:
        raise ValidationError("min distance must be >= 1 m")
    rng = random.Random(seed)
    users = []
    for i in range(1, n + 1):
        distance = math.sqrt(rng.uniform(min_distance_m**2, radius_m**2))
        option = rng.choice(list(pool))
        users.append(
            UserProfile(
                id=i,
                snr_db=snr_from_geometry(radio, distance),
                request_text=option.text,
                ground_truth=option.label,
            )
        )
    return users


def load_request_pool(path: str | Path) -> list[RequestOption]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list) or not data:
        raise ValidationError("request pool must be a non-empty JSON array")
    return [
        RequestOption(text=str(item["text"]), label=IntentLabel.from_dict(item["label"]))
        for item in data
    ]


def default_request_pool() -> list[RequestOption]:
    kb = default_kb()
    return [RequestOption(text=e.text, label=e.label) for e in kb.entries]


def _request_from_prompt(message: str) -> str | None:
    match = _REQUEST_LINE_RE.search(message)
    return match.group(1) if match else None


def perfect_intent_mock(users: Sequence[UserProfile]) -> MockBackend:
    """Mock that answers every intent prompt with the ground-truth label."""
    table = {u.request_text: u.ground_truth for u in users}

    def responder(message: str) -> str | None:
        request = _request_from_prompt(message)
        if request is None or request not in table:
            return None
        return json.dumps(table[request].to_dict())

    backend = MockBackend()
    backend.register_responder(responder)
    return backend


def first_fit_prompt_mock(
    users: Sequence[UserProfile], configs: dict[SliceKind, SliceConfig]
) -> MockBackend:
    """Reference baseline mock: grab the labeled slice's per-user maximum."""
    table = {
        u.request_text: {
            "slice": u.ground_truth.slice.value,
            "bandwidth_mhz": configs[u.ground_truth.slice].bw_max_mhz,
        }
        for u in users
    }

    def responder(message: str) -> str | None:
        request = _request_from_prompt(message)
        if request is None or request not in table:
            return None
        return json.dumps(table[request])

    backend = MockBackend()
    backend.register_responder(responder)
    return backend


def default_backend_for(
    method: str, users: Sequence[UserProfile], configs: dict[SliceKind, SliceConfig]
) -> Backend | None:
    if method == "agent":
        return perfect_intent_mock(users)
    if method == "prompt":
        return first_fit_prompt_mock(users, configs)
    return None


def scenario_users(scenario: Scenario, seed: int | None = None) -> list[UserProfile]:
    """Explicit users if present, else the generator recipe at the seed."""
    if scenario.users:
        return list(scenario.users)
    if scenario.generator is None:
        raise ValidationError("scenario has no users and no generator")
    spec = scenario.generator
    return generate_users(
        n=spec.n,
        seed=scenario.seed if seed is None else seed,
        radio=scenario.radio,
        pool=default_request_pool(),
        radius_m=spec.radius_m,
        min_distance_m=spec.min_distance_m,
    )


def run_scenario(
    scenario: Scenario,
    method: str,
    backend: Backend | None = None,
    kb: KnowledgeBase | None = None,
    templates: PromptTemplates = DEFAULT_TEMPLATES,
    step_limit: int = 64,
    users: Sequence[UserProfile] | None = None,
) -> RunResult:
    """Process users in id order, one per slot, under the chosen method.

    Without an explicit backend, agent runs use the perfect intent mock and
    prompt runs use the first-fit reference mock.
    """
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    configs = scenario.configs()
    arrivals = sorted(users if users is not None else scenario_users(scenario), key=lambda u: u.id)
    if not arrivals:
        raise ValidationError("no users to process")
    if backend is None:
        backend = default_backend_for(method, arrivals, configs)
    if kb is None:
        kb = default_kb()

    network = empty_network(configs)
    graph = None
    if method == "agent":
        graph = build_agent_graph(kb, backend, configs, scenario.radio, templates)

    snapshots: list[SlotSnapshot] = []
    traces: list[tuple[int, tuple[TraceEntry, ...]]] = []
    correct = 0
    for user in arrivals:
        try:
            if method == "rule":
                network = rule_based_step(network, user, configs, scenario.radio)
                correct += 1  # ideal understanding by definition
            elif method == "agent":
                state = GlobalState(network=network, current_user=user)
                state = graph.run(state, step_limit=step_limit)
                network = state.network.next_slot()
                traces.append((user.id, tuple(state.trace)))
                if state.chosen_slice is user.ground_truth.slice:
                    correct += 1
            else:
                state = GlobalState(network=network, current_user=user)
                state = prompt_baseline_step(state, backend, configs, scenario.radio, templates)
                network = state.network.next_slot()
                if state.chosen_slice is user.ground_truth.slice:
                    correct += 1
        except (GraphError, BackendError) as exc:
            raise RunAborted(
                f"{method} run aborted at slot {network.slot + 1}: {exc}", traces=traces
            ) from exc
        network.check_partition()
        snapshots.append(
            SlotSnapshot(
                slot=network.slot,
                allocated_embb_mhz=network.embb.allocated_mhz(),
                allocated_urllc_mhz=network.urllc.allocated_mhz(),
                throughput_mbps=network_throughput(network, configs),
                supported_users=len(network.admitted_ids()),
            )
        )

    metrics = _metrics_from_slots(snapshots, configs, correct, len(arrivals))
    return RunResult(metrics=metrics, network=network, traces=tuple(traces))


def _metrics_from_slots(
    snapshots: list[SlotSnapshot],
    configs: dict[SliceKind, SliceConfig],
    correct: int,
    processed: int,
) -> Metrics:
    budget_e = configs[SliceKind.EMBB].budget_mhz
    budget_u = configs[SliceKind.URLLC].budget_mhz
    total = budget_e + budget_u
    util_overall = statistics.fmean(
        (s.allocated_embb_mhz + s.allocated_urllc_mhz) / total for s in snapshots
    )
    last = snapshots[-1]
    return Metrics(
        utilization_overall=util_overall,
        utilization_embb=statistics.fmean(
            s.allocated_embb_mhz / budget_e for s in snapshots
        ),
        utilization_urllc=statistics.fmean(
            s.allocated_urllc_mhz / budget_u for s in snapshots
        ),
        idle_rate=1.0 - util_overall,
        throughput_mbps=last.throughput_mbps,
        supported_users=last.supported_users,
        intent_accuracy=correct / processed,
        utilization_final=(last.allocated_embb_mhz + last.allocated_urllc_mhz) / total,
        per_slot=tuple(snapshots),
    )


@dataclass(frozen=True)
class TrialResult:
    trial: int
    seed: int
    metrics: Metrics
    traces: tuple[tuple[int, tuple[TraceEntry, ...]], ...]


@dataclass(frozen=True)
class MonteCarloResult:
    trials: tuple[TrialResult, ...]
    mean: dict[str, float]
    std: dict[str, float]


BackendFactory = Callable[[Sequence[UserProfile]], Backend]


def monte_carlo(
    scenario: Scenario,
    method: str,
    trials: int,
    base_seed: int,
    backend_factory: BackendFactory | None = None,
    kb: KnowledgeBase | None = None,
    templates: PromptTemplates = DEFAULT_TEMPLATES,
) -> MonteCarloResult:
    """Independent trials at seeds base_seed..base_seed+trials-1.

    Scenarios with a generator draw fresh users per trial; fixed-user
    scenarios repeat identically (zero variance). Reported spread is the
    sample standard deviation.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    results: list[TrialResult] = []
    for trial in range(trials):
        seed = base_seed + trial
        users = scenario_users(scenario, seed=seed)
        backend = backend_factory(users) if backend_factory is not None else None
        try:
            run = run_scenario(
                scenario, method, backend=backend, kb=kb, templates=templates, users=users
            )
        except RunAborted as exc:
            exc.completed = tuple(results)
            raise
        results.append(
            TrialResult(trial=trial, seed=seed, metrics=run.metrics, traces=run.traces)
        )
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for name in Metrics.SCALAR_FIELDS:
        values = [r.metrics.scalars()[name] for r in results]
        mean[name] = statistics.fmean(values)
        std[name] = statistics.stdev(values) if len(values) > 1 else 0.0
    return MonteCarloResult(trials=tuple(results), mean=mean, std=std)
