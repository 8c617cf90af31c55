import itertools
import json

import pytest

from asref.histories import (
    SpecReplayer,
    check_all,
    check_condition,
    extensions,
    history_records,
    is_pending,
    is_valid_mapping,
    lin,
    map_history,
    matches,
    matching_pairs,
    mp,
    object_histories,
    qc,
    qp,
    read_history,
    sc,
    total,
    well_formed,
)
from asref.models import load
from asref.values import BOT, Event, inv, ret

AS = load("abstract_stack")

SIMPLE = (inv(1, "push", 1), ret(1, "push"), inv(1, "pop"), ret(1, "pop", 1))

# T1..T3 run to completion, then thread 2's pop returns 2
FIG3 = (
    inv(1, "push", 1), ret(1, "push"),
    inv(1, "push", 2), ret(1, "push"),
    inv(1, "pop"), ret(1, "pop", 1),
    inv(2, "pop"), ret(2, "pop", 2),
)

# thread 2's pop spans all of thread 1's calls and returns 3;
# thread 1's two pops see 1 then 2
FIG4 = (
    inv(2, "pop"),
    inv(1, "push", 1), ret(1, "push"),
    inv(1, "push", 2), ret(1, "push"),
    inv(1, "pop"), ret(1, "pop", 1),
    inv(1, "pop"), ret(1, "pop", 2),
    inv(1, "push", 3), ret(1, "push"),
    ret(2, "pop", 3),
)


class TestPredicates:
    def test_matches(self):
        assert matches(inv(1, "push", 2), ret(1, "push"))
        assert not matches(inv(1, "push", 2), ret(2, "push"))
        assert not matches(ret(1, "push"), inv(1, "push", 2))
        assert not matches(inv(1, "push", 2), ret(1, "pop"))

    def test_pending(self):
        assert is_pending(0, (inv(1, "push", 1),))
        assert not is_pending(0, (inv(1, "push", 1), ret(1, "push")))
        assert is_pending(1, (inv(1, "push", 1), inv(2, "pop"), ret(1, "push")))
        assert not is_pending(1, (inv(1, "push", 1), ret(1, "push")))  # a response is never pending
        with pytest.raises(IndexError):
            is_pending(3, SIMPLE[:1])

    def test_matching_pairs(self):
        assert matching_pairs(SIMPLE[:2]) == {(0, 1)}
        h = (inv(1, "push", 1), inv(2, "pop"), ret(1, "push"))
        assert matching_pairs(h) == {(0, 2)}
        assert matching_pairs(()) == set()

    def test_matching_pairs_brute_force(self):
        for h in (SIMPLE, FIG3, FIG4):
            brute = {(m, n) for m in range(len(h)) for n in range(len(h)) if mp(m, n, h)}
            assert matching_pairs(h) == brute

    def test_valid_mapping(self):
        assert is_valid_mapping(SIMPLE[:2], {0: 0, 1: 1})
        assert is_valid_mapping((), {})
        assert not is_valid_mapping(SIMPLE[:2], {0: 1, 1: 0})
        assert not is_valid_mapping(SIMPLE[:2], {0: 0})  # pair split
        assert not is_valid_mapping(SIMPLE[:2], {0: 1, 1: 2})  # range not from 0
        assert not is_valid_mapping(SIMPLE[:2], {0: 0, 5: 1})

    def test_map_history(self):
        ident = {i: i for i in range(len(SIMPLE))}
        assert map_history(SIMPLE, ident) == SIMPLE
        assert map_history(SIMPLE, {}) == ()
        with pytest.raises(ValueError):
            map_history(SIMPLE, {0: 1, 1: 0})

    def test_total_ignores_pending(self):
        h = (inv(1, "push", 1), ret(1, "push"), inv(2, "pop"))
        assert total(h, {0: 0, 1: 1})
        assert not total(h, {})

    def test_order_conditions_on_fig3(self):
        f = {0: 0, 1: 1, 2: 2, 3: 3, 6: 4, 7: 5, 4: 6, 5: 7}
        assert is_valid_mapping(FIG3, f)
        assert sc(FIG3, f)
        assert not lin(FIG3, f)
        assert not qc(FIG3, f)

    def test_quiescent_points(self):
        assert qp(1, SIMPLE) and qp(3, SIMPLE)
        assert not qp(0, SIMPLE)
        assert not any(qp(k, FIG4) for k in range(len(FIG4) - 1))
        assert qp(len(FIG4) - 1, FIG4)

    def test_qc_allows_reordering_inside_a_busy_interval(self):
        # push1 push2 pop->2 pop->1 push3 pop->3 as whole calls
        calls = [(1, 2), (3, 4), (7, 8), (5, 6), (9, 10), (0, 11)]
        f = {}
        for pos, (a, b) in enumerate(calls):
            f[a], f[b] = 2 * pos, 2 * pos + 1
        assert is_valid_mapping(FIG4, f) and qc(FIG4, f)
        assert not lin(FIG4, f)

    def test_well_formed(self):
        assert well_formed(FIG4)
        assert not well_formed((ret(1, "push"),))
        assert not well_formed((inv(1, "push", 1), inv(1, "pop")))
        assert not well_formed((inv(1, "push", 1), ret(1, "pop")))


class TestExtensions:
    def test_nothing_pending(self):
        assert list(extensions(SIMPLE)) == [SIMPLE]

    def test_push_completion(self):
        h = (inv(1, "push", 1),)
        assert h + (ret(1, "push"),) in set(extensions(h))

    def test_pop_values(self):
        h = (inv(1, "pop"),)
        got = set(extensions(h, {"pop": (1, "empty")}))
        assert got == {h, h + (ret(1, "pop", 1),), h + (ret(1, "pop", "empty"),)}

    def test_counts(self):
        h = (inv(1, "pop"), inv(2, "pop"))
        # subsets of two pending calls, two values each: 1 + 2 + 2 + 4
        assert len(list(extensions(h, (1, 2)))) == 9


class TestReplay:
    def test_push_pop(self):
        rep = SpecReplayer(AS)
        assert rep.legal(SIMPLE)
        assert not rep.legal((inv(1, "pop"), ret(1, "pop", 1)))
        assert rep.legal((inv(1, "pop"), ret(1, "pop", "empty")))

    def test_empty_is_a_symbol_not_a_string_match_for_bottom(self):
        rep = SpecReplayer(AS)
        assert not rep.legal((inv(1, "push", 1), ret(1, "push", 1)))


class TestCheckCondition:
    def test_simple_lin(self):
        r = check_condition(SIMPLE, AS, "lin")
        assert r.verdict == "yes"
        assert is_valid_mapping(r.extension, r.mapping)

    def test_simple_lin_matches_brute_force(self):
        rep = SpecReplayer(AS)
        found = False
        for perm in itertools.permutations(range(len(SIMPLE))):
            f = dict(zip(range(len(SIMPLE)), perm))
            if is_valid_mapping(SIMPLE, f) and total(SIMPLE, f) and lin(SIMPLE, f) \
                    and rep.legal(map_history(SIMPLE, f)):
                found = True
        assert found

    def test_fig3(self):
        assert check_condition(FIG3, AS, "lin").verdict == "no"
        assert check_condition(FIG3, AS, "qc").verdict == "no"
        r = check_condition(FIG3, AS, "sc")
        assert r.verdict == "yes"
        assert r.sequential == (
            inv(1, "push", 1), ret(1, "push"),
            inv(1, "push", 2), ret(1, "push"),
            inv(2, "pop"), ret(2, "pop", 2),
            inv(1, "pop"), ret(1, "pop", 1),
        )

    def test_fig4(self):
        assert check_condition(FIG4, AS, "lin").verdict == "no"
        assert check_condition(FIG4, AS, "sc").verdict == "no"
        r = check_condition(FIG4, AS, "qc")
        assert r.verdict == "yes" and qc(r.extension, r.mapping)

    def test_pending_pop_may_be_completed(self):
        h = (inv(1, "push", 1), inv(2, "pop"), ret(1, "push"), inv(1, "pop"), ret(1, "pop", "empty"))
        r = check_condition(h, AS, "lin")
        assert r.verdict == "yes"
        assert len(r.extension) == len(h) + 1 and r.extension[-1] == ret(2, "pop", 1)

    def test_pending_may_be_dropped(self):
        h = (inv(1, "push", 1), ret(1, "push"), inv(2, "pop"))
        r = check_condition(h, AS, "lin")
        assert r.verdict == "yes"

    def test_budget_gives_inconclusive(self):
        r = check_condition(FIG4, AS, "lin", node_budget=1)
        assert r.verdict == "inconclusive"

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            check_condition(SIMPLE, AS, "strict")
        with pytest.raises(ValueError):
            check_condition((ret(1, "pop", 1),), AS, "lin")

    def test_witness_record(self):
        rec = check_condition(SIMPLE, AS, "lin").as_record()
        assert rec["holds"] == "yes" and rec["mapping"]["0"] == 0
        json.dumps(rec)


@pytest.fixture(scope="module")
def as_histories():
    return object_histories(AS, max_history=4)


class TestObjectHistories:
    def test_empty_history(self, as_histories):
        assert () in as_histories

    def test_single_pushes(self, as_histories):
        for t in (1, 2):
            for v in (1, 2, 3):
                assert (inv(t, "push", v), ret(t, "push")) in as_histories

    def test_all_well_formed_and_bounded(self, as_histories):
        assert all(well_formed(h) and len(h) <= 4 for h in as_histories)

    def test_treiber_overlaps(self):
        hs = object_histories(load("treiber_stack"), max_history=4, values=(1,))
        assert (inv(1, "push", 1), inv(2, "push", 1), ret(1, "push"), ret(2, "push")) in hs
        assert (inv(1, "push", 1), inv(2, "pop"), ret(2, "pop", "empty"), ret(1, "push")) in hs

    def test_lin_implies_sc_on_bundled(self, as_histories):
        rep = SpecReplayer(AS)
        for h in as_histories:
            if check_condition(h, rep, "lin").holds:
                assert check_condition(h, rep, "sc").holds

    def test_check_all_counts(self, as_histories):
        out = check_all(as_histories, AS, "lin")
        assert out["checked"] == len(as_histories) == out["yes"]


def test_record_round_trip():
    lines = list(history_records(FIG4))
    assert json.loads(lines[0]) == {"kind": "inv", "thread": 2, "op": "pop", "value": None}
    assert read_history(lines) == FIG4


def test_bad_record_reports_line():
    with pytest.raises(ValueError, match="line 2"):
        read_history(['{"kind": "inv", "thread": 1, "op": "pop", "value": null}', "nope"])
