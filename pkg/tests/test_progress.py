import pytest

from asref.dsl import parse
from asref.explorer import build_graph
from asref.histories import well_formed
from asref.kernel import ModelError
from asref.models import OBJECTS, load
from asref.progress import (
    build_mgc,
    canonicalize,
    check_lemma3,
    check_minimal_progress,
    extend_with_history,
    histories_of,
    ret_appended,
)
from asref.syntax import Choice, Guard, flatten_choice, render
from asref.values import BOT, inv, ret

NOOP = parse("object N { varu k; init k := 0; proc nop() = skip; }")


def small_graph(name, max_history=4, values=(1,)):
    return build_graph(build_mgc(load(name), max_history=max_history, values=values, stop=False))


class TestHistoryExtension:
    def test_atomic_push_bracketed(self):
        body = render(extend_with_history(load("abstract_stack")).proc("push").body)
        assert body == "H := H ^ <inv(tid, 'push, arg)>; S := <arg> ^ S; H := H ^ <ret(tid, 'push, bot)>"

    def test_treiber_push_branches(self):
        push = extend_with_history(load("treiber_stack")).proc("push")
        branches = [render(b) for b in flatten_choice(push.body)]
        start = next(b for b in branches if b.startswith("not dec(pc)"))
        finish = next(b for b in branches if "pc = 'H6" in b)
        assert "inv(tid, 'push, arg)" in start and "ret(" not in start
        assert "ret(tid, 'push, bot)" in finish and "inv(" not in finish
        others = [b for b in branches if b not in (start, finish)]
        assert all("H :=" not in b for b in others)

    def test_noop(self):
        body = render(extend_with_history(NOOP).proc("nop").body)
        assert body == "H := H ^ <inv(tid, 'nop, bot)>; skip; H := H ^ <ret(tid, 'nop, bot)>"

    def test_name_clash(self):
        clash = parse("object C { varu H; init H := 0; proc nop() = skip; }")
        with pytest.raises(ModelError):
            extend_with_history(clash)


class TestMGC:
    def test_histories_well_formed_for_every_object(self):
        for name in OBJECTS:
            g = small_graph(name)
            assert all(well_formed(h) for h in histories_of(g)), name

    def test_stop_flag(self):
        g = build_graph(build_mgc(load("abstract_stack"), max_history=4))
        for i, s in enumerate(g.states):
            if s["tt"] is True:
                assert not g.succ[i]
            for j in g.succ[i]:
                # tt never goes back to false
                assert not (s["tt"] is True and g.states[j]["tt"] is False)
        assert g.states[g.initial[0]]["H"] == () and g.states[g.initial[0]]["tt"] is False

    def test_treiber_overlap(self):
        g = small_graph("treiber_stack")
        assert any("pc_1" in s and "pc_2" in s for s in g.states)

    def test_history_bound(self):
        g = small_graph("abstract_stack", max_history=4, values=None)
        assert max(len(h) for h in histories_of(g)) == 4

    def test_ret_detection(self):
        from asref.kernel import State
        a = State({"H": (inv(1, "pop"),)})
        b = State({"H": (inv(1, "pop"), ret(1, "pop", "empty"))})
        c = State({"H": (inv(1, "pop"), inv(2, "pop"))})
        assert ret_appended(a, b) and not ret_appended(a, c) and not ret_appended(a, a)


class TestMinimalProgress:
    def test_abstract_stack(self):
        r = check_minimal_progress(load("abstract_stack"))
        assert r.verdict == "SATISFIED" and r.states == 3385

    def test_treiber_small(self):
        assert check_minimal_progress(load("treiber_stack"), max_history=4, values=(1,)).satisfied

    @pytest.mark.parametrize("name", ["blocking_pop", "livelock_pop"])
    def test_spinning_mutants(self, name):
        r = check_minimal_progress(load(name))
        assert r.verdict == "VIOLATED"
        assert r.cycle and r.path and r.path[-1] == r.cycle[0]
        # no response on the cycle, and it never stops
        loop = r.cycle + r.cycle[:1]
        assert not any(ret_appended(a, b) for a, b in zip(loop, loop[1:]))

    def test_bound_exhaustion_is_inconclusive(self):
        r = check_minimal_progress(load("treiber_stack"), max_states=100)
        assert r.verdict == "INCONCLUSIVE"

    def test_smaller_bounds_stay_satisfied(self):
        for mh in (2, 4, 6):
            assert check_minimal_progress(load("abstract_stack"), max_history=mh).satisfied


class TestLemma3:
    def test_abstract_stack(self):
        assert check_lemma3(load("abstract_stack")).holds

    def test_treiber(self):
        g = small_graph("treiber_stack")
        assert check_lemma3(load("treiber_stack"), graph=g).holds

    def test_spinning_pop_cannot_finish(self):
        rep = check_lemma3(load("blocking_pop"))
        assert rep.guard_ok and not rep.termination_ok
        # every divergent state has a pop in flight
        assert rep.divergent
        assert all("pc_1" in s or "pc_2" in s for s in rep.divergent)

    def test_waiting_pop_disables_act(self):
        waiting = parse("""object Waiting {
          varu S;
          domain S : seq {1, 2} max 2;
          domain arg : {1, 2};
          init S := <>;
          proc push(val arg) = S := <arg> ^ S;
          proc pop(res out) local pc =
               not dec(pc) -> var pc; pc := 1
               [] dec(pc) and S != <> -> out := head(S); S := tail(S); rav pc;
        }""")
        rep = check_lemma3(waiting, max_history=4)
        assert not rep.guard_ok
        assert all(s["S"] == () and "pc_1" in s and "pc_2" in s for s in rep.guard_failures)


class TestCanonical:
    def test_three_branches(self):
        c = canonicalize(load("abstract_stack"))
        for p in c.procs:
            branches = flatten_choice(p.body)
            assert len(branches) == 3 and all(isinstance(b, Guard) for b in branches)
            conds = [render(b.cond) for b in branches]
            assert conds == ["not dec(pc)", f"dec(pc) and pc = '{p.name}1", f"dec(pc) and pc = '{p.name}2"]

    def test_matches_bundled_file(self):
        assert canonicalize(load("abstract_stack")) == load("canonical_AS")

    def test_rejects_multi_step(self):
        with pytest.raises(ModelError):
            canonicalize(load("treiber_stack"))

    def test_history_phases(self):
        ext = extend_with_history(canonicalize(load("abstract_stack")))
        first, effect, last = (render(b) for b in flatten_choice(ext.proc("pop").body))
        assert "inv(tid, 'pop" in first and "ret(" not in first
        assert "H :=" not in effect
        assert "ret(tid, 'pop, out)" in last

    def test_single_thread_histories_match_abstract(self):
        def hs(obj):
            return histories_of(build_graph(build_mgc(obj, threads=(1,), max_history=6, stop=False)))
        canon = hs(load("canonical_AS"))
        plain = hs(load("abstract_stack"))
        # the canonical object also exposes histories ending in a pending call
        assert plain <= canon
        assert {h for h in canon if len(h) % 2 == 0} == plain

    def test_pending_equals_declared_pcs(self):
        from asref.histories import pending
        g = small_graph("canonical_AS", max_history=6)
        for s in g.states:
            assert len(pending(s["H"])) == sum(1 for t in (1, 2) if f"pc_{t}" in s)
