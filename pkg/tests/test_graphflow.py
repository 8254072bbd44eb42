import io
import json

import pytest

from slicegraph.domain import empty_network
from slicegraph.graphflow import END, GlobalState, GraphError, WorkflowGraph, export_trace
from test_domain import case_study_slices


def fresh_state():
    configs = {s.kind: s for s in case_study_slices()}
    return GlobalState(network=empty_network(configs))


def bump(state):
    state.kb_hits = state.kb_hits + [len(state.kb_hits)]
    return state


def linear_graph():
    g = WorkflowGraph()
    g.add_node("a", bump)
    g.add_node("b", bump)
    g.add_node("c", bump)
    g.add_edge("a", "b")
    g.add_edge("b", "c")
    g.add_edge("c", END)
    g.set_entry("a")
    return g


def test_linear_graph_runs_to_end():
    state = linear_graph().compile().run(fresh_state(), step_limit=10)
    assert [t.node for t in state.trace] == ["a", "b", "c"]
    assert state.kb_hits == [0, 1, 2]


def test_cycle_hits_step_limit():
    g = WorkflowGraph()
    g.add_node("x", bump)
    g.add_node("y", bump)
    g.add_edge("x", "y")
    g.add_router("y", lambda s: "x", ["x", END])
    g.set_entry("x")
    compiled = g.compile()
    with pytest.raises(GraphError, match="possible cycle") as exc_info:
        compiled.run(fresh_state(), step_limit=8)
    assert len(exc_info.value.trace) == 8


def test_dangling_edge_is_named():
    g = WorkflowGraph()
    g.add_node("qos_eval", bump)
    g.add_edge("qos_eval", "qos_evla")
    g.set_entry("qos_eval")
    with pytest.raises(GraphError, match="'qos_eval' -> 'qos_evla'"):
        g.compile()


def test_node_with_both_edge_kinds_rejected():
    g = WorkflowGraph()
    g.add_node("a", bump)
    with pytest.raises(GraphError, match="already has an outgoing edge"):
        g.add_edge("a", END)
        g.add_router("a", lambda s: END, [END])


def test_node_without_edge_rejected():
    g = WorkflowGraph()
    g.add_node("a", bump)
    g.set_entry("a")
    with pytest.raises(GraphError, match="no outgoing edge"):
        g.compile()


def test_unreachable_node_rejected():
    g = linear_graph()
    g.add_node("island", bump)
    g.add_edge("island", END)
    with pytest.raises(GraphError, match="unreachable node 'island'"):
        g.compile()


def test_missing_entry_rejected():
    g = WorkflowGraph()
    g.add_node("a", bump)
    g.add_edge("a", END)
    with pytest.raises(GraphError, match="missing entry"):
        g.compile()


def test_router_must_pick_declared_target():
    g = WorkflowGraph()
    g.add_node("a", bump)
    g.add_node("b", bump)
    g.add_router("a", lambda s: "b", [END])  # b exists but is undeclared
    g.add_edge("b", END)
    g.set_entry("a")
    # b is unreachable through declared targets
    with pytest.raises(GraphError, match="unreachable"):
        g.compile()

    g2 = WorkflowGraph()
    g2.add_node("a", bump)
    g2.add_node("b", bump)
    g2.add_router("a", lambda s: "oops", ["b", END])
    g2.add_edge("b", END)
    g2.set_entry("a")
    with pytest.raises(GraphError, match="undeclared target"):
        g2.compile().run(fresh_state())


def test_node_failure_carries_node_name():
    def boom(state):
        raise RuntimeError("kaput")

    g = WorkflowGraph()
    g.add_node("fragile", boom)
    g.add_edge("fragile", END)
    g.set_entry("fragile")
    with pytest.raises(GraphError, match="node 'fragile' failed: kaput"):
        g.compile().run(fresh_state())


def test_identical_runs_have_identical_digests():
    compiled = linear_graph().compile()
    first = compiled.run(fresh_state())
    second = compiled.run(fresh_state())
    assert [t.digest for t in first.trace] == [t.digest for t in second.trace]
    assert first.digest() == second.digest()


def test_compile_is_side_effect_free():
    g = linear_graph()
    assert g.compile() == g.compile()


def test_trace_completeness_bounded_by_step_limit():
    state = linear_graph().compile().run(fresh_state(), step_limit=64)
    assert len(state.trace) == 3 <= 64


def test_digest_excludes_trace():
    state = fresh_state()
    before = state.digest()
    compiled = linear_graph().compile()
    done = compiled.run(state)
    assert done.trace  # trace filled
    stripped = fresh_state()
    stripped.kb_hits = done.kb_hits
    assert done.digest() == stripped.digest()
    assert before != done.digest()


def test_export_trace_schema():
    state = linear_graph().compile().run(fresh_state())
    buffer = io.StringIO()
    export_trace(state.trace, buffer, slot=7)
    lines = buffer.getvalue().strip().splitlines()
    assert len(lines) == 3
    for line in lines:
        record = json.loads(line)
        assert set(record) == {"slot", "node", "digest", "delta"}
        assert record["slot"] == 7
    assert json.loads(lines[0])["delta"] == {"kb_hits": [0]}
