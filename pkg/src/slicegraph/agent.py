"""The five slicing workflow nodes and the single-shot prompt baseline.

Grant policy: the workflow hands a new user as much bandwidth as fits up
to the per-user cap, then shrinks existing users on demand when a later
arrival needs room. The slice's rate ceiling is enforced on reported
rates, not on the grant itself; the strict solver in ``optimizer`` keeps
rate-capped upper bounds instead, and that divergence is intentional.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

from slicegraph.domain import (
    Allocation,
    IntentLabel,
    NetworkState,
    RadioParams,
    SliceConfig,
    SliceKind,
    SliceLedger,
    ValidationError,
)
from slicegraph.graphflow import (
    END,
    Evaluation,
    GlobalState,
    NEED_ADJUST,
    NEED_HANDOVER,
    REJECT,
    CompiledGraph,
    WorkflowGraph,
)
from slicegraph.knowledge import KnowledgeBase, retrieve, tokenize
from slicegraph.llm import (
    Backend,
    ChatMessage,
    IntentParseError,
    complete,
    parse_grant,
    parse_intent,
)
from slicegraph.optimizer import (
    REL_EPS,
    FeasibleInterval,
    Infeasible,
    feasible_interval,
    greedy_fill,
)
from slicegraph.radio import spectral_coefficient

# Requests mentioning any of these are latency-critical in the fallback path.
URLLC_KEYWORDS = frozenset({"surgery", "vehicle", "control", "robotic", "emergency"})

KB_EXAMPLES_DEFAULT = 3


@dataclass(frozen=True)
class PromptTemplates:
    """Prompt text with named placeholder slots.

    Each node's template must contain every placeholder that node fills.
    """

    system: str
    intent: str
    allocation: str
    adjustment: str

    def __post_init__(self) -> None:
        required = {
            "intent": ("{request}", "{kb_examples}"),
            "allocation": ("{request}", "{slice_state}", "{cqi}"),
            "adjustment": ("{slice_state}",),
        }
        for name, slots in required.items():
            text = getattr(self, name)
            for slot in slots:
                if slot not in text:
                    raise ValidationError(f"{name} template missing placeholder {slot}")


DEFAULT_TEMPLATES = PromptTemplates(
    system=(
        "You are a network slicing management expert at a base station with two "
        "slices: eMBB for high-throughput traffic and URLLC for latency-critical "
        "traffic. You decide slice assignment and bandwidth from each user's "
        "request, channel quality, and the current slice occupancy. Rates follow "
        "Shannon's formula, bandwidth times the spectral efficiency of the "
        "channel. Balance the load so every admitted user keeps its minimum "
        "requirements while the slices stay within their budgets."
    ),
    intent=(
        "Classify the user's service request into a slice and estimate its "
        "requirements.\n"
        "Known labeled examples:\n{kb_examples}\n"
        'User request: "{request}"\n'
        'Respond with a single JSON object: {{"slice": "eMBB" or "URLLC", '
        '"required_rate_mbps": number, "required_latency_ms": number}}'
    ),
    allocation=(
        "Assign this user to a slice and grant bandwidth directly.\n"
        "Current slice state:\n{slice_state}\n"
        "User channel quality (SNR dB): {cqi}\n"
        'User request: "{request}"\n'
        'Respond with a single JSON object: {{"slice": "eMBB" or "URLLC", '
        '"bandwidth_mhz": number}}'
    ),
    adjustment=(
        "Existing grants may be reduced toward their minimums to admit the new "
        "user.\nCurrent slice state:\n{slice_state}\n"
        "List the adjustments you would make."
    ),
)

_SECTION_RE = re.compile(r"^\[(system|intent|allocation|adjustment)\]\s*$")


def load_templates(path: str | Path) -> PromptTemplates:
    """Template file: ``[section]`` headers followed by the template text."""
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        match = _SECTION_RE.match(line)
        if match:
            current = match.group(1)
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    missing = {"system", "intent", "allocation", "adjustment"} - set(sections)
    if missing:
        raise ValidationError(f"template file missing section {sorted(missing)[0]!r}")
    return PromptTemplates(
        **{name: "\n".join(lines).strip() for name, lines in sections.items()}
    )


def fallback_intent(
    request_text: str, configs: dict[SliceKind, SliceConfig]
) -> IntentLabel:
    """Deterministic keyword classifier used when parsing fails twice."""
    tokens = set(tokenize(request_text))
    kind = SliceKind.URLLC if tokens & URLLC_KEYWORDS else SliceKind.EMBB
    cfg = configs[kind]
    return IntentLabel(
        slice=kind,
        required_rate_mbps=(cfg.rate_min_mbps + cfg.rate_max_mbps) / 2.0,
        required_latency_ms=cfg.latency_max_ms / 2.0,
    )


def kb_examples_block(hits: list) -> str:
    if not hits:
        return "- (no similar examples found)"
    lines = []
    for entry, _score in hits:
        label = entry.label
        lines.append(
            f'- "{entry.text}" -> {label.slice.value} '
            f"({label.required_rate_mbps} Mbps, {label.required_latency_ms} ms)"
        )
    return "\n".join(lines)


def describe_slice_state(
    network: NetworkState, configs: dict[SliceKind, SliceConfig]
) -> str:
    lines = []
    for kind in (SliceKind.EMBB, SliceKind.URLLC):
        cfg = configs[kind]
        ledger = network.ledger(kind)
        grants = ", ".join(
            f"user {a.user_id}: {a.bandwidth_mhz:.3f} MHz" for a in ledger.allocations
        )
        lines.append(
            f"{kind.value}: budget {cfg.budget_mhz} MHz, free {ledger.free_mhz():.3f} MHz, "
            f"per-user [{cfg.bw_min_mhz}, {cfg.bw_max_mhz}] MHz, "
            f"rate [{cfg.rate_min_mbps}, {cfg.rate_max_mbps}] Mbps, "
            f"latency <= {cfg.latency_max_ms} ms. Grants: {grants or 'none'}"
        )
    return "\n".join(lines)


def _fits_own(intent: IntentLabel, cfg: SliceConfig) -> bool:
    """The labeled slice can serve the intent (ceiling checks only)."""
    return (
        intent.required_rate_mbps <= cfg.rate_max_mbps
        and intent.required_latency_ms <= cfg.latency_max_ms
    )


def _fits_range(intent: IntentLabel, cfg: SliceConfig) -> bool:
    """Strict fit used for moving a user to the other slice: the demanded
    rate must sit inside the slice's rate range, not merely below its cap.
    """
    return (
        cfg.rate_min_mbps <= intent.required_rate_mbps <= cfg.rate_max_mbps
        and intent.required_latency_ms <= cfg.latency_max_ms
    )


def _leq(a: float, b: float) -> bool:
    """a <= b with relative slack for float comparisons on rates and bounds."""
    return a <= b + REL_EPS * max(abs(a), abs(b), 1.0)


def _append_allocation(
    ledger: SliceLedger,
    interval: FeasibleInterval | None,
    bandwidth: float,
    rate: float,
    user_id: int,
) -> SliceLedger | None:
    """Append a grant, shaving ulps if rounding would bust the budget.

    Returns None when the grant cannot fit exactly; callers fall back to
    an adjustment pass or a rejection.
    """
    floor = interval.lower_mhz if interval is not None else 0.0
    bw = bandwidth
    existing = [a.bandwidth_mhz for a in ledger.allocations]
    while True:
        if math.fsum(existing + [bw]) <= ledger.config.budget_mhz:
            break
        shaved = math.nextafter(bw, 0.0)
        if shaved < floor:
            return None
        bw = shaved
    alloc = Allocation(
        user_id=user_id, slice=ledger.config.kind, bandwidth_mhz=bw, rate_mbps=rate
    )
    intervals = ledger.intervals
    if interval is not None:
        intervals = intervals + (interval,)
    return SliceLedger(
        config=ledger.config,
        allocations=ledger.allocations + (alloc,),
        intervals=intervals,
    )


def node_intent(
    state: GlobalState,
    kb: KnowledgeBase,
    backend: Backend,
    configs: dict[SliceKind, SliceConfig],
    templates: PromptTemplates = DEFAULT_TEMPLATES,
    k: int = KB_EXAMPLES_DEFAULT,
) -> GlobalState:
    """Understand the request: retrieval-augmented prompt, parse, fallback."""
    user = state.current_user
    if user is None:
        raise ValidationError("node_intent needs a current user")
    hits = retrieve(kb, user.request_text, k) if len(kb) else []
    state.kb_hits = [entry.id for entry, _ in hits]
    messages = [
        ChatMessage("system", templates.system),
        ChatMessage(
            "user",
            templates.intent.format(
                request=user.request_text, kb_examples=kb_examples_block(hits)
            ),
        ),
    ]
    intent: IntentLabel | None = None
    for _attempt in range(2):
        try:
            intent = parse_intent(complete(backend, messages))
            break
        except IntentParseError:
            continue
    if intent is None:
        intent = fallback_intent(user.request_text, configs)
    state.intent = intent
    return state


def node_slice_alloc(
    state: GlobalState, configs: dict[SliceKind, SliceConfig]
) -> GlobalState:
    """Recommend the slice: the labeled one if it can serve the intent,
    otherwise the other slice if the intent sits inside its ranges.
    """
    intent = state.intent
    if intent is None:
        raise ValidationError("node_slice_alloc needs an intent")
    if _fits_own(intent, configs[intent.slice]):
        state.chosen_slice = intent.slice
    elif _fits_range(intent, configs[intent.slice.other()]):
        state.chosen_slice = intent.slice.other()
    else:
        state.evaluation = Evaluation.reject("no-fitting-slice")
    return state


def node_bw_alloc(
    state: GlobalState,
    configs: dict[SliceKind, SliceConfig],
    radio: RadioParams,
) -> GlobalState:
    """Propose a grant: as much as currently fits, up to the per-user cap."""
    if state.evaluation is not None and state.evaluation.kind == REJECT:
        return state
    if state.chosen_slice is None:
        raise ValidationError("node_bw_alloc needs a chosen slice")
    user = state.current_user
    cfg = configs[state.chosen_slice]
    result = feasible_interval(state.intent, user.snr_db, cfg, radio, rate_cap=False)
    if isinstance(result, Infeasible):
        state.evaluation = Evaluation.reject(result.reason)
        return state
    interval = replace(result, user_id=user.id)
    state.interval = interval
    free = state.network.ledger(state.chosen_slice).free_mhz()
    grant = min(interval.upper_mhz, free)
    state.proposed_bw_mhz = grant if grant >= interval.lower_mhz else interval.lower_mhz
    return state


def node_qos_eval(
    state: GlobalState,
    configs: dict[SliceKind, SliceConfig],
    radio: RadioParams,
) -> GlobalState:
    """Verify the proposal and commit it, or route to adjustment.

    The reported rate is the raw rate capped at the slice ceiling; all
    checks compare against that value.
    """
    if state.evaluation is not None and state.evaluation.kind == REJECT:
        return _finalize_rejection(state)
    user = state.current_user
    intent = state.intent
    cfg = configs[state.chosen_slice]
    interval = state.interval
    proposed = state.proposed_bw_mhz
    ledger = state.network.ledger(state.chosen_slice)

    bounds_ok = _leq(interval.lower_mhz, proposed) and _leq(proposed, interval.upper_mhz)
    raw_rate = interval.coefficient * proposed
    reported = min(raw_rate, cfg.rate_max_mbps)
    rate_ok = _leq(cfg.rate_min_mbps, reported) and _leq(
        intent.required_rate_mbps, reported
    )
    latency_ok = intent.required_latency_ms <= cfg.latency_max_ms
    free_ok = _leq(proposed, ledger.free_mhz())

    if bounds_ok and rate_ok and latency_ok and free_ok:
        updated = _append_allocation(ledger, interval, proposed, raw_rate, user.id)
        if updated is not None:
            state.network = state.network.with_ledger(state.chosen_slice, updated)
            state.evaluation = Evaluation.passed()
            return state
        free_ok = False  # float corner: let the adjustment pass make room

    if bounds_ok and rate_ok and latency_ok and not free_ok:
        lowers = math.fsum(iv.lower_mhz for iv in ledger.intervals)
        if lowers + interval.lower_mhz <= cfg.budget_mhz:
            state.evaluation = Evaluation.need_adjust()
            return state
        if not state.handover_done and _handover_possible(state, configs, radio):
            state.evaluation = Evaluation.need_handover()
            return state
        state.evaluation = Evaluation.reject("capacity")
        return _finalize_rejection(state)

    reason = "latency" if not latency_ok else ("rate" if not rate_ok else "bounds")
    state.evaluation = Evaluation.reject(reason)
    return _finalize_rejection(state)


def _handover_possible(
    state: GlobalState,
    configs: dict[SliceKind, SliceConfig],
    radio: RadioParams,
) -> bool:
    """The other slice fits the intent's ranges and has room at lower bounds."""
    other = state.chosen_slice.other()
    cfg = configs[other]
    if not _fits_range(state.intent, cfg):
        return False
    result = feasible_interval(
        state.intent, state.current_user.snr_db, cfg, radio, rate_cap=False
    )
    if isinstance(result, Infeasible):
        return False
    ledger = state.network.ledger(other)
    lowers = math.fsum(iv.lower_mhz for iv in ledger.intervals)
    return lowers + result.lower_mhz <= cfg.budget_mhz


def node_bw_adjust(
    state: GlobalState,
    configs: dict[SliceKind, SliceConfig],
    radio: RadioParams,
) -> GlobalState:
    """Make room for the new user.

    need_adjust: shrink existing users toward their lower bounds, lowest
    coefficient first, by re-running the exact fill over the slice with
    the newcomer included; existing grants are replaced by the fill and
    the newcomer's share becomes the new proposal.

    need_handover: recompute the interval in the other slice and loop back
    to evaluation; at most one handover per user.
    """
    evaluation = state.evaluation
    if evaluation is None or evaluation.kind not in (NEED_ADJUST, NEED_HANDOVER):
        raise ValidationError("node_bw_adjust needs an adjust or handover verdict")
    user = state.current_user

    if evaluation.kind == NEED_HANDOVER:
        other = state.chosen_slice.other()
        cfg = configs[other]
        result = feasible_interval(state.intent, user.snr_db, cfg, radio, rate_cap=False)
        if isinstance(result, Infeasible):
            state.evaluation = Evaluation.reject("capacity")
            return state
        state.chosen_slice = other
        state.interval = replace(result, user_id=user.id)
        state.handover_done = True
        free = state.network.ledger(other).free_mhz()
        grant = min(state.interval.upper_mhz, free)
        state.proposed_bw_mhz = (
            grant if grant >= state.interval.lower_mhz else state.interval.lower_mhz
        )
        state.evaluation = Evaluation.passed()
        return state

    cfg = configs[state.chosen_slice]
    ledger = state.network.ledger(state.chosen_slice)
    intervals = list(ledger.intervals) + [state.interval]
    bws = greedy_fill(intervals, cfg.budget_mhz)
    if isinstance(bws, Infeasible):
        state.evaluation = Evaluation.reject("capacity")
        return state
    shrunk = tuple(
        Allocation(
            user_id=iv.user_id,
            slice=cfg.kind,
            bandwidth_mhz=b,
            rate_mbps=iv.coefficient * b,
        )
        for iv, b in zip(intervals[:-1], bws[:-1])
    )
    state.network = state.network.with_ledger(
        state.chosen_slice,
        SliceLedger(config=cfg, allocations=shrunk, intervals=ledger.intervals),
    )
    state.proposed_bw_mhz = bws[-1]
    state.evaluation = Evaluation.passed()
    return state


def _finalize_rejection(state: GlobalState) -> GlobalState:
    user = state.current_user
    reason = state.evaluation.reason or "rejected"
    if user is not None and user.id not in state.network.seen_ids():
        state.network = state.network.with_rejection(user.id, reason)
    return state


def build_agent_graph(
    kb: KnowledgeBase,
    backend: Backend,
    configs: dict[SliceKind, SliceConfig],
    radio: RadioParams,
    templates: PromptTemplates = DEFAULT_TEMPLATES,
    k: int = KB_EXAMPLES_DEFAULT,
) -> CompiledGraph:
    """Wire the five nodes into the slicing workflow and compile it."""
    graph = WorkflowGraph()
    graph.add_node("intent", lambda s: node_intent(s, kb, backend, configs, templates, k))
    graph.add_node("slice_alloc", lambda s: node_slice_alloc(s, configs))
    graph.add_node("bw_alloc", lambda s: node_bw_alloc(s, configs, radio))
    graph.add_node("qos_eval", lambda s: node_qos_eval(s, configs, radio))
    graph.add_node("bw_adjust", lambda s: node_bw_adjust(s, configs, radio))
    graph.add_edge("intent", "slice_alloc")
    graph.add_edge("slice_alloc", "bw_alloc")
    graph.add_edge("bw_alloc", "qos_eval")
    graph.add_router("qos_eval", _qos_router, [END, "bw_adjust"])
    graph.add_edge("bw_adjust", "qos_eval")
    graph.set_entry("intent")
    return graph.compile()


def _qos_router(state: GlobalState) -> str:
    if state.evaluation is not None and state.evaluation.kind in (
        NEED_ADJUST,
        NEED_HANDOVER,
    ):
        return "bw_adjust"
    return END


def prompt_baseline_step(
    state: GlobalState,
    backend: Backend,
    configs: dict[SliceKind, SliceConfig],
    radio: RadioParams,
    templates: PromptTemplates = DEFAULT_TEMPLATES,
) -> GlobalState:
    """Single-shot allocation with no tools and no adjustment.

    Only the per-slice budget is enforced while applying the answer;
    grants that break per-user or rate bounds are rejected afterwards,
    and existing users are never touched.
    """
    user = state.current_user
    if user is None:
        raise ValidationError("prompt_baseline_step needs a current user")
    messages = [
        ChatMessage("system", templates.system),
        ChatMessage(
            "user",
            templates.allocation.format(
                request=user.request_text,
                slice_state=describe_slice_state(state.network, configs),
                cqi=user.snr_db,
            ),
        ),
    ]
    try:
        kind, bw = parse_grant(complete(backend, messages))
    except IntentParseError:
        state.network = state.network.with_rejection(user.id, "llm-output-invalid")
        return state
    state.chosen_slice = kind
    cfg = configs[kind]
    ledger = state.network.ledger(kind)
    if bw <= 0 or not (_leq(cfg.bw_min_mhz, bw) and _leq(bw, cfg.bw_max_mhz)):
        state.network = state.network.with_rejection(user.id, "bounds-violation")
        return state
    rate = spectral_coefficient(radio.alpha, user.snr_db) * bw
    if not (_leq(cfg.rate_min_mbps, rate) and _leq(rate, cfg.rate_max_mbps)):
        state.network = state.network.with_rejection(user.id, "rate-violation")
        return state
    if not _leq(bw, ledger.free_mhz()):
        state.network = state.network.with_rejection(user.id, "capacity")
        return state
    updated = _append_allocation(ledger, None, bw, rate, user.id)
    if updated is None:
        state.network = state.network.with_rejection(user.id, "capacity")
        return state
    state.network = state.network.with_ledger(kind, updated)
    return state
