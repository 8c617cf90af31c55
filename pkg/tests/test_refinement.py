import itertools
import json

import pytest

from asref.explorer import ObservableTrace, build_graph, normalize
from asref.kernel import ModelError, State
from asref.models import load, system
from asref.models.relations import popless_forward, stack_data, stack_history
from asref.refinement import (
    SimRelation,
    check_backward_simulation,
    check_forward_simulation,
    check_trace_refinement,
    sim_system,
    trace_from_tuples,
    trace_membership,
)

from conftest import standalone

OBS = ("x", "y", "z")
AS = load("abstract_stack")


def client(main, init="x := 0"):
    return standalone(f"client c {{ varo x; domain x : 0..3; init {init}; do {main} od }}")


class TestTraceRefinement:
    def test_reflexive(self, graphs):
        g = graphs("client_D", "abstract_stack")
        v = check_trace_refinement(g, g)
        assert v.holds == "yes" and v.counterexample is None

    @pytest.mark.parametrize("c", ["client_D", "client_fig3", "client_fig4"])
    def test_sequential_stack_refines_itself_via_canonical(self, graphs, c):
        assert check_trace_refinement(graphs(c, "abstract_stack"), graphs(c, "canonical_AS")).holds == "yes"

    def test_sc_stack_counterexample_replays(self, graphs):
        ga, gc = graphs("client_fig3", "abstract_stack"), graphs("client_fig3", "sc_stack")
        v = check_trace_refinement(ga, gc)
        assert v.holds == "no" and v.reason == "observation"
        cx = v.counterexample
        assert trace_membership(gc, cx) and not trace_membership(ga, cx)
        # the reported path is a concrete execution producing it
        assert normalize_path(v.path, gc) == cx

    def test_transitive_on_fig3_triples(self, graphs):
        names = ["abstract_stack", "canonical_AS", "sc_stack", "qc_stack"]
        g = {n: graphs("client_fig3", n) for n in names}
        ok = {(a, b): bool(check_trace_refinement(g[a], g[b])) for a in names for b in names}
        for a, b, c in itertools.product(names, repeat=3):
            if ok[a, b] and ok[b, c]:
                assert ok[a, c], (a, b, c)

    def test_observables_must_agree(self):
        other = standalone("client c { varo w; init w := 0; do w = 1 -> skip od }")
        with pytest.raises(ModelError):
            check_trace_refinement(client("x = 1 -> skip"), other)

    def test_divergence_needs_a_divergent_witness(self):
        v = check_trace_refinement(client("x = 1 -> skip"), client("true -> skip"))
        assert v.holds == "no" and v.reason == "divergence"
        assert v.counterexample.divergent

    def test_early_stop_is_a_deadlock(self):
        v = check_trace_refinement(client("x = 0 -> x := 1"), client("x = 3 -> skip"))
        assert v.holds == "no" and v.reason == "deadlock"
        assert [o["x"] for o in v.counterexample.observations] == [0]

    def test_infinite_observable_traces(self):
        flip = "x = 0 -> x := 1 [] x = 1 -> x := 0"
        assert check_trace_refinement(client(flip + " [] x = 1 -> x := 2"), client(flip)).holds == "yes"
        v = check_trace_refinement(client(flip), client(flip + " [] x = 1 -> x := 2"))
        assert v.holds == "no"

    def test_stuttering_is_invisible(self):
        slow = standalone("client c { varo x; varu k; domain x : 0..3; domain k : 0..3; "
                          "init x := 0; k := 0; do k < 2 -> k := k + 1 [] k = 2 and x = 0 -> x := 1 od }")
        assert check_trace_refinement(client("x = 0 -> x := 1"), slow).holds == "yes"

    def test_record(self, graphs):
        v = check_trace_refinement(graphs("client_fig3", "abstract_stack"), graphs("client_fig3", "sc_stack"))
        rec = v.as_record(OBS)
        json.dumps(rec)
        assert rec["counterexample"]["variables"] == list(OBS)
        assert len(rec["counterexample"]["observations"]) == len(v.counterexample.observations)


def normalize_path(path, g):
    from asref.explorer import Trace
    return normalize(Trace(tuple(path), "deadlocked" if not g.succ[g.index[path[-1]]] else "cut"), g.observables)


class TestMembership:
    def test_finite_and_prefix(self, graphs):
        g = graphs("client_D", "abstract_stack")
        full = trace_from_tuples(OBS, [(0, 0, 0), (0, 2, 0), (1, 2, 0), (1, 2, 1)])
        assert trace_membership(g, full)
        head = ObservableTrace(full.observations[:2], prefix=True)
        assert trace_membership(g, head)
        assert not trace_membership(g, ObservableTrace(full.observations[:2]))
        assert not trace_membership(g, trace_from_tuples(OBS, [(0, 0, 0), (9, 0, 0)]))

    def test_divergent_and_lasso(self):
        g = build_graph(client("x = 0 -> x := 1 [] x = 1 -> x := 0 [] x = 1 -> skip"))
        zero, one = State({"x": 0}), State({"x": 1})
        assert trace_membership(g, ObservableTrace((zero, one), divergent=True))
        assert not trace_membership(g, ObservableTrace((zero,), divergent=True))
        assert trace_membership(g, ObservableTrace((), cycle=(zero, one)))
        assert not trace_membership(g, ObservableTrace((zero, one)))


class TestSimulation:
    def test_forward_identity(self):
        rep = check_forward_simulation(AS, AS, stack_data())
        assert rep.holds == "yes" and rep.failed() == []
        assert {o.id for o in rep.obligations} == {"init", "step", "guard", "termination"}

    def test_backward_identity(self):
        rep = check_backward_simulation(AS, AS, SimRelation.from_abstraction(lambda s: s))
        assert rep.holds == "yes"
        assert {o.id for o in rep.obligations} >= {"totality", "continuity", "init", "step", "guard", "termination"}

    def test_expression_relation(self):
        rel = SimRelation.from_expression("A_S = C_S and A_result_1 = C_result_1 and A_result_2 = C_result_2")
        assert check_forward_simulation(AS, AS, rel).holds == "yes"

    def test_predicate_and_pairs(self):
        rel = SimRelation.from_predicate(lambda a, c: a == c)
        assert check_forward_simulation(AS, AS, rel, values=(1,)).holds == "yes"
        ga = build_graph(sim_system(AS, values=(1,)))
        pairs = SimRelation.from_pairs([(s, s) for s in ga.states])
        assert check_backward_simulation(AS, AS, pairs, values=(1,)).holds == "yes"

    def test_unknown_variable(self):
        with pytest.raises(ModelError, match="C_T"):
            check_forward_simulation(AS, AS, SimRelation.from_expression("A_S = C_T"))

    def test_totality_failure(self):
        partial = SimRelation.from_abstraction(lambda s: None if len(s["S"]) == 3 else s)
        rep = check_backward_simulation(AS, AS, partial)
        assert "totality" in rep.failed()
        assert all(len(w["concrete"]["S"]) == 3 for w in rep.obligation("totality").witnesses)

    def test_popless_step_witness(self):
        st = popless_forward()
        rep = check_forward_simulation(st.abstract, st.concrete, st.relation, **st.options)
        assert rep.failed() == ["step"]
        w = rep.obligation("step").witnesses[0]
        assert {"concrete", "concrete_next"} <= set(w)
        before, after = w["concrete"], w["concrete_next"]
        assert before["S"] == after["S"] != []

    def test_popless_looks_fine_without_history(self):
        # a pop followed by a push reaches the same stack and result
        rep = check_forward_simulation(AS, load("popless"), stack_data(), values=(1,))
        assert rep.failed() == []

    def test_report_records(self):
        rep = check_forward_simulation(AS, AS, stack_data(), values=(1,))
        recs = [json.loads(r) for r in rep.records()]
        assert [r["obligation"] for r in recs] == [o.id for o in rep.obligations]
        assert all(r["verdict"] == "holds" for r in recs)
