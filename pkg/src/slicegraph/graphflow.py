"""Workflow runtime: named nodes over a shared state record, with traces.

A graph is a set of node handlers plus one outgoing edge per node, either
static (always the same successor) or routed (a function of the state
picks the successor from a declared set). Every run appends one
``(node, digest)`` pair per execution to the state's trace, which makes
runs replayable and comparable byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import IO, Any, Callable

from slicegraph.domain import (
    IntentLabel,
    NetworkState,
    SliceKind,
    UserProfile,
    canonical_json,
)
from slicegraph.optimizer import FeasibleInterval

END = "__end__"

PASS = "pass"
NEED_ADJUST = "need_adjust"
NEED_HANDOVER = "need_handover"
REJECT = "reject"


class GraphError(RuntimeError):
    """Compilation or execution failure; carries the trace so far."""

    def __init__(self, message: str, trace: list[TraceEntry] | None = None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class Evaluation:
    kind: str
    reason: str | None = None

    @classmethod
    def passed(cls) -> Evaluation:
        return cls(PASS)

    @classmethod
    def need_adjust(cls) -> Evaluation:
        return cls(NEED_ADJUST)

    @classmethod
    def need_handover(cls) -> Evaluation:
        return cls(NEED_HANDOVER)

    @classmethod
    def reject(cls, reason: str) -> Evaluation:
        return cls(REJECT, reason)

    def to_jsonable(self) -> dict[str, Any]:
        return {"kind": self.kind, "reason": self.reason}


@dataclass(frozen=True)
class TraceEntry:
    node: str
    digest: str
    delta: dict[str, Any]


@dataclass
class GlobalState:
    """Shared record passed through every node of a run.

    The trace is append-only and excluded from digests so that replaying a
    run reproduces the digests it recorded.
    """

    network: NetworkState
    current_user: UserProfile | None = None
    intent: IntentLabel | None = None
    chosen_slice: SliceKind | None = None
    proposed_bw_mhz: float | None = None
    interval: FeasibleInterval | None = None
    evaluation: Evaluation | None = None
    kb_hits: list[int] = field(default_factory=list)
    handover_done: bool = False
    trace: list[TraceEntry] = field(default_factory=list)

    def to_jsonable(self) -> dict[str, Any]:
        return {
            "network": self.network.to_dict(),
            "current_user": self.current_user.to_dict() if self.current_user else None,
            "intent": self.intent.to_dict() if self.intent else None,
            "chosen_slice": self.chosen_slice.value if self.chosen_slice else None,
            "proposed_bw_mhz": self.proposed_bw_mhz,
            "interval": self.interval.to_dict() if self.interval else None,
            "evaluation": self.evaluation.to_jsonable() if self.evaluation else None,
            "kb_hits": list(self.kb_hits),
            "handover_done": self.handover_done,
        }

    def digest(self) -> str:
        return hashlib.sha256(
            canonical_json(self.to_jsonable()).encode("utf-8")
        ).hexdigest()


NodeHandler = Callable[[GlobalState], GlobalState]
Router = Callable[[GlobalState], str]


class WorkflowGraph:
    """Mutable builder; ``compile()`` freezes and validates it."""

    def __init__(self) -> None:
        self.nodes: dict[str, NodeHandler] = {}
        self.static_edges: dict[str, str] = {}
        self.conditional_edges: dict[str, tuple[Router, tuple[str, ...]]] = {}
        self.entry: str | None = None

    def add_node(self, name: str, handler: NodeHandler) -> None:
        if name in self.nodes:
            raise GraphError(f"duplicate node {name!r}")
        if name == END:
            raise GraphError("node name collides with END sentinel")
        self.nodes[name] = handler

    def add_edge(self, source: str, target: str) -> None:
        if source in self.static_edges or source in self.conditional_edges:
            raise GraphError(f"node {source!r} already has an outgoing edge")
        self.static_edges[source] = target

    def add_router(self, source: str, router: Router, targets: list[str]) -> None:
        """Conditional edge; the router must return one of the declared targets."""
        if source in self.static_edges or source in self.conditional_edges:
            raise GraphError(f"node {source!r} already has an outgoing edge")
        self.conditional_edges[source] = (router, tuple(targets))

    def set_entry(self, name: str) -> None:
        self.entry = name

    def compile(self) -> CompiledGraph:
        if self.entry is None or self.entry not in self.nodes:
            raise GraphError(f"missing entry node {self.entry!r}")
        for source in self.nodes:
            has_static = source in self.static_edges
            has_cond = source in self.conditional_edges
            if has_static and has_cond:
                raise GraphError(f"node {source!r} has both edge kinds")
            if not has_static and not has_cond:
                raise GraphError(f"node {source!r} has no outgoing edge")
        for source, target in self.static_edges.items():
            if source not in self.nodes:
                raise GraphError(f"edge {source!r} -> {target!r} leaves unknown node")
            if target != END and target not in self.nodes:
                raise GraphError(f"edge {source!r} -> {target!r} targets unknown node")
        for source, (_, targets) in self.conditional_edges.items():
            if source not in self.nodes:
                raise GraphError(f"router on unknown node {source!r}")
            for target in targets:
                if target != END and target not in self.nodes:
                    raise GraphError(
                        f"edge {source!r} -> {target!r} targets unknown node"
                    )
        reachable = {self.entry}
        frontier = [self.entry]
        while frontier:
            node = frontier.pop()
            succ: tuple[str, ...]
            if node in self.static_edges:
                succ = (self.static_edges[node],)
            else:
                succ = self.conditional_edges[node][1]
            for target in succ:
                if target != END and target not in reachable:
                    reachable.add(target)
                    frontier.append(target)
        unreachable = set(self.nodes) - reachable
        if unreachable:
            raise GraphError(f"unreachable node {sorted(unreachable)[0]!r}")
        return CompiledGraph(
            nodes=dict(self.nodes),
            static_edges=dict(self.static_edges),
            conditional_edges=dict(self.conditional_edges),
            entry=self.entry,
        )


@dataclass(frozen=True)
class CompiledGraph:
    nodes: dict[str, NodeHandler]
    static_edges: dict[str, str]
    conditional_edges: dict[str, tuple[Router, tuple[str, ...]]]
    entry: str

    def run(self, initial: GlobalState, step_limit: int = 64) -> GlobalState:
        """Execute from the entry node until END; deterministic for
        deterministic handlers.
        """
        if step_limit < 1:
            raise ValueError("step_limit must be >= 1")
        state = initial
        current = self.entry
        steps = 0
        while current != END:
            if steps >= step_limit:
                raise GraphError(
                    f"possible cycle: step limit {step_limit} exceeded at {current!r}",
                    state.trace,
                )
            before = state.to_jsonable()
            try:
                state = self.nodes[current](state)
            except Exception as exc:
                raise GraphError(
                    f"node {current!r} failed: {exc}", state.trace
                ) from exc
            after = state.to_jsonable()
            delta = {
                key: after[key] for key in after if after[key] != before.get(key)
            }
            state.trace.append(TraceEntry(node=current, digest=state.digest(), delta=delta))
            steps += 1
            if current in self.static_edges:
                current = self.static_edges[current]
            else:
                router, targets = self.conditional_edges[current]
                current = router(state)
                if current not in targets:
                    raise GraphError(
                        f"router at {state.trace[-1].node!r} chose undeclared target {current!r}",
                        state.trace,
                    )
        return state


def export_trace(entries: list[TraceEntry], fp: IO[str], slot: int | None = None) -> None:
    """Write one JSON line per node execution.

    ``slot`` stamps every record with a fixed time slot; otherwise records
    carry their index within the run.
    """
    for i, entry in enumerate(entries):
        record = {
            "slot": slot if slot is not None else i,
            "node": entry.node,
            "digest": entry.digest,
            "delta": entry.delta,
        }
        fp.write(json.dumps(record, sort_keys=True) + "\n")
