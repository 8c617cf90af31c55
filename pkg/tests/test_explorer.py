import json

import pytest

from asref.explorer import (
    BoundExhausted,
    ObservableTrace,
    Trace,
    build_graph,
    complete_traces,
    normalize,
    observable_trace_records,
    observable_traces,
    shortest_path,
    to_dot,
    trace_records,
)
from asref.kernel import State
from asref.models import load, system
from asref.progress import build_mgc
from asref.values import BOT

from conftest import graph_of, standalone

COUNT = "client c { varo x; domain x : 0..3; init x := 0; do x < 2 -> x := x + 1 od }"
STILL = "client c { varo x; init x := 0; do x = 1 -> skip od }"
SPIN = "client c { varo x; init x := 0; do true -> skip od }"
OBS = ("x", "y", "z")


def obs(*rows):
    return tuple(State(dict(zip(OBS, r))) for r in rows)


def test_counter_graph():
    g = graph_of(COUNT)
    assert (len(g), g.edge_count) == (3, 2)
    assert [g.states[i]["x"] for i in g.terminal()] == [2]


def test_single_state_graph():
    g = graph_of(STILL)
    assert len(g) == 1 and g.edge_count == 0
    (t,) = complete_traces(g, 5)
    assert t.kind == "deadlocked" and len(t) == 1


def test_self_loop_is_one_lasso():
    g = graph_of(SPIN)
    (t,) = complete_traces(g, 5)
    assert t.kind == "lasso" and t.loop_start == 0
    n = normalize(t, g.observables)
    assert n.divergent and n.observations == (State({"x": 0}),)


def test_client_d_terminals_are_idle(graphs):
    g = graphs("client_D", "abstract_stack")
    ends = [g.states[i] for i in g.terminal()]
    assert ends
    assert all(s["pc1"] is BOT and s["pc2"] is BOT for s in ends)


def test_mgc_stopped_states_are_terminal():
    g = build_graph(build_mgc(load("abstract_stack"), max_history=4))
    stopped = [i for i, s in enumerate(g.states) if s["tt"] is True]
    assert stopped
    assert all(not g.succ[i] for i in stopped)


def test_every_node_reachable_and_edges_match(graphs):
    from asref.kernel import eval_action
    g = graphs("client_D", "abstract_stack")
    sys_ = system("client_D", "abstract_stack")
    assert shortest_path(g, range(len(g))) is not None
    seen = set(g.initial)
    stack = list(g.initial)
    while stack:
        i = stack.pop()
        for j in g.succ[i]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    assert seen == set(range(len(g)))
    for s in g.states[:40]:
        assert g.edges(s) == eval_action(sys_.main, s, sys_.universe)


def test_bound_exhausted_is_explicit():
    with pytest.raises(BoundExhausted) as e:
        build_graph(system("client_D", "treiber_stack"), max_states=50)
    assert e.value.limit == 50


def test_deterministic_across_jobs():
    sys_ = system("client_fig3", "abstract_stack")
    a = build_graph(sys_, jobs=1)
    b = build_graph(sys_, jobs=2)
    assert a.states == b.states and a.succ == b.succ and a.initial == b.initial


def _thread_vars(s: State, t: int):
    mine = {f"pc{t}", ("x" if t == 1 else "y")}
    return {k: v for k, v in s.items() if k in mine or k.endswith(f"_{t}")}


def run_schedule(g, schedule):
    """Follow a path running each (thread, label) operation to completion."""
    i = g.initial[0]
    path = [i]
    for t, label in schedule:
        other = 2 if t == 1 else 1
        assert g.states[i][f"pc{t}"] == label
        while g.states[i][f"pc{t}"] == label:
            s = g.states[i]
            nxt = [j for j in g.succ[i] if _thread_vars(g.states[j], other) == _thread_vars(s, other)]
            assert len(nxt) == 1, (label, nxt)
            i = nxt[0]
            path.append(i)
    return Trace(tuple(g.states[k] for k in path), "deadlocked" if not g.succ[i] else "cut")


@pytest.mark.parametrize("obj", ["abstract_stack", "treiber_stack"])
def test_sequential_schedule_normalizes(graphs, obj):
    g = graphs("client_D", obj)
    t = run_schedule(g, [(1, "T1"), (1, "T2"), (2, "U1"), (1, "T3"), (2, "U2")])
    assert t.kind == "deadlocked"
    n = normalize(t, OBS)
    assert n.observations == obs((0, 0, 0), (0, 2, 0), (1, 2, 0), (1, 2, 1))
    assert not n.infinite and not n.prefix


def test_normalize_collapses_and_restricts():
    t = Trace(tuple(State({"x": x, "h": h}) for x, h in [(0, 0), (0, 1), (1, 1), (1, 0), (0, 0)]), "deadlocked")
    n = normalize(t, ["x"])
    assert [o["x"] for o in n.observations] == [0, 1, 0]


def test_normalize_lasso_with_progress():
    a, b = State({"x": 0}), State({"x": 1})
    n = normalize(Trace((a, a, b, a), "lasso", 1), ["x"])
    assert not n.divergent and n.infinite
    assert normalize(n) == n


def test_stuttering_loop_after_change_diverges():
    a, b = State({"x": 0, "h": 0}), State({"x": 1, "h": 0})
    c = State({"x": 1, "h": 1})
    n = normalize(Trace((a, b, c), "lasso", 1), ["x"])
    assert n.divergent
    assert n.observations == (State({"x": 0}), State({"x": 1}))


def test_cut_traces_are_prefixes():
    g = graph_of(COUNT)
    (t,) = complete_traces(g, 2)
    assert t.kind == "cut" and t.bound == 2
    assert normalize(t, g.observables).prefix


def test_client_d_traces_complete():
    g = build_graph(system("client_D", "abstract_stack"))
    traces = observable_traces(g, 50)
    assert traces
    assert all(not t.prefix for t in traces)
    assert ObservableTrace(obs((0, 0, 0), (0, 2, 0), (1, 2, 0), (1, 2, 1))) in traces


def test_traces_are_graph_paths(graphs):
    g = graphs("client_fig3", "abstract_stack")
    for t in complete_traces(g, 40)[:200]:
        assert g.index[t.states[0]] in g.initial
        for s, u in zip(t.states, t.states[1:]):
            assert u in g.edges(s)
        if t.kind == "lasso":
            assert t.states[t.loop_start] in g.edges(t.states[-1])


def test_dot_export():
    g = graph_of(COUNT)
    dot = to_dot(g, highlight=[1])
    assert dot.startswith('digraph "') and dot.rstrip().endswith("}")
    assert dot.count("->") == 2
    assert 'color="red"' in dot


def test_records_are_json_lines():
    g = graph_of(COUNT)
    lines = list(trace_records(g.states, loop_start=1))
    recs = [json.loads(line) for line in lines]
    assert [r["state"]["x"] for r in recs] == [0, 1, 2]
    assert recs[1]["loop_start"] is True
    n = ObservableTrace((State({"x": 0}),), divergent=True)
    assert json.loads(list(observable_trace_records(n))[-1]) == {"divergent": True}


def test_lasso_validation():
    with pytest.raises(ValueError):
        Trace((State({"x": 0}),), "lasso", 3)
    with pytest.raises(ValueError):
        Trace((), "deadlocked")
