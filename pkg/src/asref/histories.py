"""Histories of concurrent objects and the correctness conditions over them.

The predicates (:func:`matches`, :func:`is_pending`, :func:`matching_pairs`,
:func:`is_valid_mapping`, :func:`total`, :func:`lin`, :func:`sc`, :func:`qp`,
:func:`qc`) are direct transcriptions used both by the search in
:func:`check_condition` and to re-verify every witness it returns.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

from . import syntax as S
from .kernel import (
    ModelError, State, ValueUniverse, compiled, default_universe, expand_call, initial_states,
    _Ctx,
)
from .syntax import Call, ObjectDef
from .values import BOT, Event, from_json, to_json

History = tuple  # tuple[Event, ...]

CONDITIONS = ("lin", "sc", "qc")


# --------------------------------------------------------------- predicates

def is_inv(e: Event) -> bool:
    return e.kind == "inv"


def is_ret(e: Event) -> bool:
    return e.kind == "ret"


def matches(e1: Event, e2: Event) -> bool:
    return e1.kind == "inv" and e2.kind == "ret" and e1.thread == e2.thread and e1.op == e2.op


def is_pending(m: int, h: Sequence[Event]) -> bool:
    """``h[m]`` is an invocation with no later matching response."""
    if not 0 <= m < len(h):
        raise IndexError(f"index {m} outside history of length {len(h)}")
    if not is_inv(h[m]):
        return False
    return not any(matches(h[m], h[n]) for n in range(m + 1, len(h)))


def pending(h: Sequence[Event]) -> list[int]:
    return [m for m in range(len(h)) if is_pending(m, h)]


def mp(m: int, n: int, h: Sequence[Event]) -> bool:
    return (m < n and matches(h[m], h[n])
            and all(h[i].thread != h[m].thread for i in range(m + 1, n)))


def matching_pairs(h: Sequence[Event]) -> set[tuple[int, int]]:
    out = set()
    for m, e in enumerate(h):
        if not is_inv(e):
            continue
        for n in range(m + 1, len(h)):
            if h[n].thread == e.thread:
                if matches(e, h[n]):
                    out.add((m, n))
                break
    return out


def is_valid_mapping(h: Sequence[Event], f: Mapping[int, int]) -> bool:
    if not all(isinstance(k, int) and 0 <= k < len(h) for k in f):
        return False
    if set(f.values()) != set(range(len(f))):
        return False
    if len(set(f.values())) != len(f):
        return False
    for m, n in matching_pairs(h):
        if (m in f) != (n in f):
            return False
        if m in f and f[n] != f[m] + 1:
            return False
    return True


def map_history(h: Sequence[Event], f: Mapping[int, int]) -> History:
    if not is_valid_mapping(h, f):
        raise ValueError("map_history needs a valid mapping function")
    out = [None] * len(f)
    for k, i in f.items():
        out[i] = h[k]
    return tuple(out)


def total(h: Sequence[Event], f: Mapping[int, int]) -> bool:
    return all(m in f for m in range(len(h)) if not is_pending(m, h))


def lin(h: Sequence[Event], f: Mapping[int, int]) -> bool:
    dom = sorted(f)
    return all(f[m] < f[n] for m in dom for n in dom if m < n and is_ret(h[m]) and is_inv(h[n]))


def sc(h: Sequence[Event], f: Mapping[int, int]) -> bool:
    dom = sorted(f)
    return all(f[m] < f[n] for m in dom for n in dom
               if m < n and h[m].thread == h[n].thread and is_ret(h[m]) and is_inv(h[n]))


def qp(m: int, h: Sequence[Event]) -> bool:
    """No invocation in ``h[0..m]`` is pending within that prefix."""
    prefix = h[:m + 1]
    return all(not is_pending(n, prefix) for n in range(len(prefix)))


def qc(h: Sequence[Event], f: Mapping[int, int]) -> bool:
    dom = sorted(f)
    quiet = [k for k in range(len(h)) if k in f and qp(k, h)]
    for k in quiet:
        for m in dom:
            if m >= k:
                break
            for n in dom:
                if n > k and not f[m] < f[n]:
                    return False
    return True


ORDER = {"lin": lin, "sc": sc, "qc": qc}


def well_formed(h: Sequence[Event]) -> bool:
    """Per thread, events alternate invocation/response starting with an invocation."""
    open_: dict = {}
    for e in h:
        if not isinstance(e, Event):
            return False
        cur = open_.get(e.thread)
        if e.kind == "inv":
            if cur is not None:
                return False
            open_[e.thread] = e.op
        else:
            if cur != e.op:
                return False
            open_[e.thread] = None
    return True


def extensions(h: Sequence[Event], values: Mapping[str, Sequence] | Sequence = (BOT,)) -> Iterator[History]:
    """``h`` followed by responses for some of its pending invocations.

    ``values`` gives the candidate return values, per operation or for all.
    Responses are appended in invocation order.
    """
    h = tuple(h)
    pend = pending(h)

    def vals(op):
        if isinstance(values, Mapping):
            return values.get(op, (BOT,))
        return values

    for r in range(len(pend) + 1):
        for subset in itertools.combinations(pend, r):
            choices = [[Event("ret", h[m].thread, h[m].op, v) for v in vals(h[m].op)] for m in subset]
            for rets in itertools.product(*choices):
                yield h + tuple(rets)


# -------------------------------------------------------------- spec replay

class SpecReplayer:
    """Runs an object's procedures to completion one call at a time."""

    THREAD = 0

    def __init__(self, spec: ObjectDef):
        self.spec = spec
        self.vars = tuple(spec.unobservables)
        # exploration bounds on the object's own variables are dropped: legality
        # of a sequential history must not depend on them
        bodies = [p.body for p in spec.procs]
        self.universe = ValueUniverse({}, default_universe(dict(spec.domains), spec.init, *bodies))
        init, _ = initial_states(spec.init, self.vars, self.universe)
        self.initial = frozenset(init)
        self._cache: dict = {}
        self._actions: dict = {}
        self.result_var = "__out"

    def _action(self, op: str, has_arg: bool):
        key = (op, has_arg)
        if key not in self._actions:
            try:
                p = self.spec.proc(op)
            except KeyError:
                raise ModelError(f"sequential object '{self.spec.name}' has no operation '{op}'") from None
            arg = S.Var("__arg") if p.value_param else None
            res = self.result_var if p.result_param else None
            a = expand_call(Call(op, arg, res, self.THREAD), self.spec)
            lnames = [f"{l}_{self.THREAD}" for l in p.locals]
            self._actions[key] = (p, compiled(a, self.universe), lnames)
        return self._actions[key]

    def step(self, s: State, op: str, arg) -> frozenset[tuple[State, object]]:
        """All (post-state, result) pairs of one complete call."""
        key = (s, op, arg)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        p, fn, lnames = self._action(op, True)
        start = dict(s._d)
        if p.value_param:
            start["__arg"] = arg
        elif arg is not BOT:
            self._cache[key] = frozenset()
            return self._cache[key]
        if p.result_param:
            start[self.result_var] = BOT
        out = set()
        seen = set()
        frontier = [start]
        # multi-step procedures run until their locals are gone
        while frontier:
            nxt = []
            for d in frontier:
                for e in fn(d, _Ctx()):
                    if any(n in e for n in lnames):
                        k = State(e)
                        if k not in seen:
                            seen.add(k)
                            nxt.append(e)
                        continue
                    res = e.get(self.result_var, BOT)
                    out.add((State({v: e[v] for v in self.vars}), res))
            frontier = nxt
        self._cache[key] = frozenset(out)
        return self._cache[key]

    def legal(self, seq: Sequence[Event]) -> bool:
        """``seq`` is a sequence of adjacent call/return pairs the spec can produce."""
        if len(seq) % 2:
            return False
        states = set(self.initial)
        for i in range(0, len(seq), 2):
            a, b = seq[i], seq[i + 1]
            if not matches(a, b):
                return False
            nxt = set()
            for s in states:
                for s2, r in self.step(s, a.op, a.value):
                    if _same(r, b.value):
                        nxt.add(s2)
            if not nxt:
                return False
            states = nxt
        return True


def _same(a, b) -> bool:
    return a == b and type(a) is type(b)


# ------------------------------------------------------------ the checker

@dataclass
class ConditionResult:
    verdict: str  # "yes" | "no" | "inconclusive"
    condition: str
    history: History
    extension: History | None = None
    mapping: dict | None = None
    sequential: History | None = None
    nodes: int = 0

    @property
    def holds(self) -> bool:
        return self.verdict == "yes"

    def as_record(self) -> dict:
        return {
            "condition": self.condition,
            "holds": self.verdict,
            "history": [to_json(e) for e in self.history],
            "extension": None if self.extension is None else [to_json(e) for e in self.extension],
            "mapping": None if self.mapping is None else {str(k): v for k, v in sorted(self.mapping.items())},
            "nodes": self.nodes,
        }


@dataclass
class _Op:
    inv: int
    ret: int | None  # None: pending, completed by the extension
    thread: int
    name: str
    arg: object
    result: object


def _operations(h: History) -> tuple[list[_Op], list[int]]:
    pairs = sorted(matching_pairs(h))
    ops = [_Op(m, n, h[m].thread, h[m].op, h[m].value, h[n].value) for m, n in pairs]
    return ops, pending(h)


def _precedence(h: History, ops: list[_Op], cond: str) -> list[set[int]]:
    """before[j] = indices of operations that must precede operation j."""
    before: list[set[int]] = [set() for _ in ops]
    if cond in ("lin", "sc"):
        for i, a in enumerate(ops):
            if a.ret is None:
                continue
            for j, b in enumerate(ops):
                if i != j and a.ret < b.inv and (cond == "lin" or a.thread == b.thread):
                    before[j].add(i)
    elif cond == "qc":
        # no operation spans a quiescent point, so whole operations fall on one side
        for k in range(len(h)):
            if not qp(k, h):
                continue
            for i, a in enumerate(ops):
                if a.inv < k:
                    for j, b in enumerate(ops):
                        if b.inv > k:
                            before[j].add(i)
    else:
        raise ValueError(f"unknown condition '{cond}'")
    return before


def check_condition(h: Sequence[Event], spec: ObjectDef | SpecReplayer, cond: str,
                    node_budget: int = 200_000) -> ConditionResult:
    """Search for an extension and a valid mapping function satisfying
    ``total`` and ``cond`` whose sequential history the spec accepts."""
    h = tuple(h)
    if cond not in ORDER:
        raise ValueError(f"unknown condition '{cond}'; expected one of {', '.join(CONDITIONS)}")
    if not well_formed(h):
        raise ValueError("history is not well formed")
    rep = spec if isinstance(spec, SpecReplayer) else SpecReplayer(spec)
    done, pend = _operations(h)
    nodes = 0
    failed: set = set()

    # choose which pending invocations the extension completes
    for r in range(len(pend) + 1):
        for subset in itertools.combinations(pend, r):
            ops = done + [_Op(m, None, h[m].thread, h[m].op, h[m].value, None) for m in subset]
            before = _precedence(h, ops, cond)
            order: list[tuple[int, object]] = []
            failed.clear()

            def dfs(placed: frozenset, states: frozenset) -> bool:
                nonlocal nodes
                if len(placed) == len(ops):
                    return True
                key = (placed, states)
                if key in failed:
                    return False
                nodes += 1
                if nodes > node_budget:
                    raise _Budget()
                for j, op in enumerate(ops):
                    if j in placed or not before[j] <= placed:
                        continue
                    by_result: dict = {}
                    for s in states:
                        for s2, res in rep.step(s, op.name, op.arg):
                            if op.ret is not None and not _same(res, op.result):
                                continue
                            by_result.setdefault(res, set()).add(s2)
                    for res, nxt in sorted(by_result.items(), key=lambda kv: repr(kv[0])):
                        order.append((j, res))
                        if dfs(placed | {j}, frozenset(nxt)):
                            return True
                        order.pop()
                failed.add(key)
                return False

            try:
                ok = dfs(frozenset(), rep.initial)
            except _Budget:
                return ConditionResult("inconclusive", cond, h, nodes=nodes)
            if ok:
                return _witness(h, ops, order, cond, rep, nodes)
    return ConditionResult("no", cond, h, nodes=nodes)


class _Budget(Exception):
    pass


def _witness(h: History, ops: list[_Op], order, cond: str, rep: SpecReplayer, nodes: int) -> ConditionResult:
    appended = sorted((ops[j].inv, res) for j, res in order if ops[j].ret is None)
    he = h + tuple(Event("ret", h[m].thread, h[m].op, res) for m, res in appended)
    ret_at = {m: len(h) + k for k, (m, _) in enumerate(appended)}
    f: dict[int, int] = {}
    for pos, (j, _) in enumerate(order):
        op = ops[j]
        f[op.inv] = 2 * pos
        f[op.ret if op.ret is not None else ret_at[op.inv]] = 2 * pos + 1
    seq = map_history(he, f)
    if not (is_valid_mapping(he, f) and total(he, f) and ORDER[cond](he, f) and rep.legal(seq)):
        raise AssertionError(f"internal error: {cond} witness failed re-verification for {h}")
    return ConditionResult("yes", cond, h, he, f, seq, nodes)


def check_all(histories: Iterable[Sequence[Event]], spec: ObjectDef, cond: str,
              node_budget: int = 200_000, stop_on_failure: bool = False) -> dict:
    """Check many histories against one spec; returns counts and failures."""
    rep = SpecReplayer(spec)
    out = {"checked": 0, "yes": 0, "no": 0, "inconclusive": 0, "failures": []}
    for h in sorted(histories, key=lambda h: (len(h), [repr(e) for e in h])):
        res = check_condition(h, rep, cond, node_budget)
        out["checked"] += 1
        out[res.verdict] += 1
        if res.verdict != "yes":
            out["failures"].append(res)
            if stop_on_failure:
                break
    return out


# ------------------------------------------------------------ object side

def object_histories(obj: ObjectDef, max_history: int = 8, threads: Sequence[int] = (1, 2),
                     values: Sequence | None = None, max_states: int | None = None,
                     jobs: int | None = 1) -> set[History]:
    """Every value of ``H`` in the reachable states of M[O]."""
    from .explorer import DEFAULT_MAX_STATES, build_graph
    from .progress import build_mgc, histories_of
    g = build_graph(build_mgc(obj, threads, max_history, values, stop=False),
                    max_states=max_states or DEFAULT_MAX_STATES, jobs=jobs)
    return histories_of(g)


# ------------------------------------------------------------------ records

def history_records(h: Sequence[Event]) -> Iterator[str]:
    for e in h:
        yield json.dumps(to_json(e), sort_keys=True)


def read_history(lines: Iterable[str]) -> History:
    out = []
    for i, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rec = json.loads(line)
            e = from_json(rec)
        except (ValueError, KeyError, TypeError) as err:
            raise ValueError(f"line {i}: not a history record ({err})") from None
        if not isinstance(e, Event) or e.kind not in ("inv", "ret"):
            raise ValueError(f"line {i}: expected an object with kind inv|ret, thread, op, value")
        out.append(e)
    return tuple(out)
