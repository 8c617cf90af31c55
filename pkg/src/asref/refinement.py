"""Trace refinement between composed systems and simulation obligations
between objects.

Trace refinement is decided on the finite graphs: the concrete graph is run
in lockstep with a subset construction over the abstract graph in which
each macrostate holds the abstract nodes that agree with the observations
seen so far (closed under stuttering steps).  A concrete path that leaves
the abstract system with no candidate, deadlocks where no candidate can, or
diverges where no candidate can, is a counterexample.  Infinite traces with
infinitely many observable changes need no extra check: every finite prefix
having an abstract match gives an infinite match on a finite graph.
"""
from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import networkx as nx

from . import syntax as S
from .explorer import (
    DEFAULT_MAX_STATES, ObservableTrace, Trace, TransitionGraph, build_graph, normalize,
    shortest_path,
)
from .kernel import (
    ComposedSystem, EvalError, ModelError, State, closure, compile_expr, compose, divergent_states,
)
from .progress import DEFAULT_THREADS, argument_values, extend_with_history, may_step, result_var
from .syntax import Assign, Binary, Call, ClientDef, Guard, Idle, Lit, ObjectDef, Unary, Var
from .values import BOT, format_value, to_json

# ------------------------------------------------------------- trace level


@dataclass
class RefinementVerdict:
    holds: str  # "yes" | "no" | "yes-up-to-bound"
    counterexample: ObservableTrace | None = None
    reason: str | None = None  # "observation" | "deadlock" | "divergence"
    path: list[State] = field(default_factory=list)
    bounds: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def __bool__(self):
        return self.holds != "no"

    def as_record(self, names: Sequence[str] | None = None) -> dict:
        rec = {"holds": self.holds, "reason": self.reason, "bounds": self.bounds, "stats": self.stats}
        if self.counterexample is not None:
            cx = self.counterexample
            names = list(names) if names else sorted(cx.observations[0]) if cx.observations else []
            rec["counterexample"] = {
                "variables": names,
                "observations": [[to_json(v) for v in t] for t in cx.tuples(names)],
                "divergent": cx.divergent,
                "cycle": [[to_json(o[n]) for n in names] for o in cx.cycle],
                "text": str(cx),
            }
        return rec


class _ObsView:
    """Per-node observation keys, stutter edges and divergence of one graph."""

    def __init__(self, g: TransitionGraph):
        self.g = g
        obs_ids: dict = {}
        self.obs = [obs_ids.setdefault(g.observe(i), len(obs_ids)) for i in range(len(g))]
        self.letters = {v: k for k, v in obs_ids.items()}
        self.stutter = [[j for j in g.succ[i] if self.obs[j] == self.obs[i]] for i in range(len(g))]
        self.terminal = {i for i in range(len(g)) if not g.succ[i]}
        edges = {i: set(self.stutter[i]) for i in range(len(g))}
        self.divergent = divergent_states(edges)

    def close(self, nodes: Iterable[int]) -> frozenset[int]:
        seen = set(nodes)
        stack = list(seen)
        while stack:
            i = stack.pop()
            for j in self.stutter[i]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return frozenset(seen)

    def advance(self, macro: frozenset[int], letter: int) -> frozenset[int]:
        nxt = [j for i in macro for j in self.g.succ[i] if self.obs[j] == letter]
        return self.close(nxt) if nxt else frozenset()

    def start(self, letter: int) -> frozenset[int]:
        return self.close(i for i in self.g.initial if self.obs[i] == letter)


def _translate(src: _ObsView, dst: _ObsView) -> dict[int, int | None]:
    back = {v: k for k, v in dst.letters.items()}
    return {k: back.get(v) for k, v in src.letters.items()}


def check_trace_refinement(abs_sys: ComposedSystem | TransitionGraph, conc_sys: ComposedSystem | TransitionGraph,
                           max_states: int = DEFAULT_MAX_STATES, jobs: int | None = 1) -> RefinementVerdict:
    """Is every complete observable trace of ``conc_sys`` one of ``abs_sys``?"""
    t0 = time.perf_counter()
    ga = abs_sys if isinstance(abs_sys, TransitionGraph) else build_graph(abs_sys, max_states, jobs)
    gc = conc_sys if isinstance(conc_sys, TransitionGraph) else build_graph(conc_sys, max_states, jobs)
    if ga.observables != gc.observables:
        raise ModelError("observable variables differ: "
                         f"{sorted(ga.observables)} vs {sorted(gc.observables)}")
    va, vc = _ObsView(ga), _ObsView(gc)
    letter = _translate(vc, va)
    parent: dict[tuple, tuple | None] = {}
    queue: deque = deque()
    bad = None
    for c in gc.initial:
        lt = letter[vc.obs[c]]
        node = (c, va.start(lt) if lt is not None else frozenset())
        if node not in parent:
            parent[node] = None
            queue.append(node)
    while queue and bad is None:
        node = queue.popleft()
        c, macro = node
        if not macro:
            bad = (node, "observation")
            break
        if c in vc.terminal and not (macro & va.terminal):
            bad = (node, "deadlock")
            break
        if c in vc.divergent and not (macro & va.divergent):
            bad = (node, "divergence")
            break
        for c2 in gc.succ[c]:
            if vc.obs[c2] == vc.obs[c]:
                nxt = (c2, macro)
            else:
                lt = letter[vc.obs[c2]]
                nxt = (c2, va.advance(macro, lt) if lt is not None else frozenset())
            if nxt not in parent:
                parent[nxt] = node
                queue.append(nxt)
    bounds = {"max_states": max_states, "abstract_states": len(ga), "concrete_states": len(gc)}
    stats = {"product_nodes": len(parent), "seconds": round(time.perf_counter() - t0, 3)}
    cut = bool(ga.bound_hit or gc.bound_hit)
    if cut:
        stats["bound_hit_states"] = {"abstract": len(ga.bound_hit), "concrete": len(gc.bound_hit)}
    if bad is None:
        return RefinementVerdict("yes-up-to-bound" if cut else "yes", bounds=bounds, stats=stats)
    node, reason = bad
    ids = []
    while node is not None:
        ids.append(node[0])
        node = parent[node]
    ids.reverse()
    trace = _complete(gc, vc, ids, reason)
    cx = normalize(trace, gc.observables)
    return RefinementVerdict("no", cx, reason, list(trace.states), bounds, stats)


def _complete(g: TransitionGraph, v: _ObsView, ids: list[int], reason: str) -> Trace:
    """Extend a finite concrete path to a complete trace."""
    last = ids[-1]
    if reason == "divergence":
        allowed = {i for i in v.divergent if v.obs[i] == v.obs[last]}
        return _lasso(g, ids, lambda i: [j for j in v.stutter[i] if j in allowed])
    if reason == "deadlock":
        return Trace(tuple(g.states[i] for i in ids), "deadlocked")
    tail = shortest_path(g, v.terminal, [last])
    if tail is not None:
        return Trace(tuple(g.states[i] for i in ids + tail[1:]), "deadlocked")
    return _lasso(g, ids, lambda i: list(g.succ[i]))


def _lasso(g: TransitionGraph, ids: list[int], succ: Callable[[int], list[int]]) -> Trace:
    path = list(ids)
    pos = {i: k for k, i in enumerate(path)}
    while True:
        nxt = succ(path[-1])[0]
        if nxt in pos:
            return Trace(tuple(g.states[i] for i in path), "lasso", pos[nxt])
        pos[nxt] = len(path)
        path.append(nxt)


def trace_membership(sys: ComposedSystem | TransitionGraph, t: ObservableTrace,
                     max_states: int = DEFAULT_MAX_STATES, jobs: int | None = 1) -> bool:
    """Does the system have a complete trace whose normal form is ``t``?

    A ``prefix`` trace asks only whether some trace starts with it.
    """
    g = sys if isinstance(sys, TransitionGraph) else build_graph(sys, max_states, jobs)
    v = _ObsView(g)
    ids = {obs: k for k, obs in v.letters.items()}
    word = []
    for o in tuple(t.observations) + tuple(t.cycle):
        o = o.restrict(g.observables) if set(o) != set(g.observables) else o
        if o not in ids:
            return False
        word.append(ids[o])
    if not word:
        return False
    if t.cycle:
        return _accepts_lasso(v, word, len(t.observations))
    macro = v.start(word[0])
    for lt in word[1:]:
        if not macro:
            return False
        macro = v.advance(macro, lt)
    if not macro:
        return False
    if t.prefix:
        return True
    if t.divergent:
        return bool(macro & v.divergent)
    return bool(macro & v.terminal)


def _accepts_lasso(v: _ObsView, word: list[int], stem: int) -> bool:
    """Infinite run reading ``word[:stem]`` then ``word[stem:]`` forever."""
    n = len(word)

    def nxt_pos(p):
        return p + 1 if p + 1 < n else stem

    start = [(i, 0) for i in v.g.initial if v.obs[i] == word[0]]
    dg = nx.DiGraph()
    seen = set(start)
    stack = list(start)
    while stack:
        a, p = stack.pop()
        dg.add_node((a, p))
        for b in v.g.succ[a]:
            if v.obs[b] == v.obs[a]:
                q = (b, p)
            elif v.obs[b] == word[nxt_pos(p)]:
                q = (b, nxt_pos(p))
            else:
                continue
            dg.add_edge((a, p), q)
            if q not in seen:
                seen.add(q)
                stack.append(q)
    for comp in nx.strongly_connected_components(dg):
        if len(comp) > 1 and any(v.obs[x[0]] != v.obs[y[0]] for x, y in dg.subgraph(comp).edges):
            return True
    return False


def trace_from_tuples(names: Sequence[str], rows: Sequence[Sequence], divergent: bool = False) -> ObservableTrace:
    return ObservableTrace(tuple(State(dict(zip(names, r))) for r in rows), divergent)


# ------------------------------------------------------------ object level

COUNTER = "ninv"


def sim_system(obj: ObjectDef, threads: Sequence[int] = DEFAULT_THREADS, values: Sequence | None = None,
               budget: int | None = None, history: bool = False, max_history: int | None = None) -> ComposedSystem:
    """Iterated act.P over the object's state, with persistent result variables.

    ``budget`` caps the number of invocations with a counter ``ninv``;
    ``history`` records ``H`` instead (capped at ``max_history`` events).
    """
    results = [result_var(t) for t in threads] if any(p.result_param for p in obj.procs) else []
    target = obj
    if history:
        target = extend_with_history(obj, None if max_history is None else max_history // 2)
    branches = []
    for t in threads:
        calls = S.choice(*[Guard(may_step(p, t),
                                 Call(p.name, None if v is None else Lit(v), result_var(t) if p.result_param else None, t))
                           for p in obj.procs for v in argument_values(obj, p, values)])
        if budget is None or history:
            branches.append(calls)
        else:
            branches.append(Guard(Binary("and", Idle(t), Binary("<", Var(COUNTER), Lit(budget))),
                                  S.seq(Assign(COUNTER, Binary("+", Var(COUNTER), Lit(1))), calls)))
            branches.append(Guard(Unary("not", Idle(t)), calls))
    unobs = tuple(results) + ((COUNTER,) if budget is not None and not history else ())
    init = S.seq(*[Assign(r, Lit(BOT)) for r in results],
                 *([Assign(COUNTER, Lit(0))] if COUNTER in unobs else [])) if unobs else S.Skip()
    sys = compose(ClientDef("SIM", (), unobs, init, S.choice(*branches)), target)
    sys.name = f"sim[{obj.name}]"
    sys.meta.update(kind="sim", threads=tuple(threads), budget=budget, history=history, object_def=obj)
    return sys


def sim_rem(obj: ObjectDef, threads: Sequence[int] = DEFAULT_THREADS, history: bool = False) -> ComposedSystem:
    """Only steps of operations already in flight."""
    results = [result_var(t) for t in threads] if any(p.result_param for p in obj.procs) else []
    target = extend_with_history(obj, None) if history else obj
    branches = []
    for t in threads:
        calls = [Guard(may_step(p, t), Call(p.name, None if p.value_param is None else Lit(argument_values(obj, p)[0]),
                                            result_var(t) if p.result_param else None, t)) for p in obj.procs]
        branches.append(Guard(Unary("not", Idle(t)), S.choice(*calls)))
    sys = compose(ClientDef("REM", (), tuple(results), S.Skip(), S.choice(*branches)), target)
    return sys


class SimRelation:
    """A relation between abstract and concrete states.

    Build with one of :meth:`from_pairs`, :meth:`from_expression`,
    :meth:`from_predicate`, :meth:`from_abstraction` or :meth:`from_keys`.
    """

    def __init__(self, kind: str, payload, description: str = ""):
        self.kind = kind
        self.payload = payload
        self.description = description

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Mapping, Mapping]], description: str = "") -> "SimRelation":
        idx: dict[State, list[State]] = {}
        for a, c in pairs:
            idx.setdefault(State(c), []).append(State(a))
        return cls("pairs", idx, description or "enumerated pairs")

    @classmethod
    def from_expression(cls, text: str) -> "SimRelation":
        """DSL expression over ``A_<var>`` (abstract) and ``C_<var>`` (concrete)."""
        from .dsl import parse_expr
        e = parse_expr(text)
        return cls("expression", (e, compile_expr(e)), text)

    @classmethod
    def from_predicate(cls, fn: Callable[[State, State], bool], description: str = "") -> "SimRelation":
        return cls("predicate", fn, description or getattr(fn, "__name__", "predicate"))

    @classmethod
    def from_abstraction(cls, fn: Callable[[State], Mapping | Iterable[Mapping] | None],
                         description: str = "") -> "SimRelation":
        """``fn(tau)`` gives the related abstract state(s)."""
        return cls("abstraction", fn, description or getattr(fn, "__name__", "abstraction"))

    @classmethod
    def from_keys(cls, abs_key: Callable[[State], object], conc_key: Callable[[State], object],
                  description: str = "") -> "SimRelation":
        """Related iff the keys agree."""
        return cls("keys", (abs_key, conc_key), description or "key equality")

    def bind(self, ga: TransitionGraph, gc: TransitionGraph) -> Callable[[int], tuple[int, ...]]:
        cache: dict[int, tuple[int, ...]] = {}
        if self.kind == "pairs":
            def rel(c):
                return tuple(sorted({ga.index[a] for a in self.payload.get(gc.states[c], ()) if a in ga.index}))
        elif self.kind == "keys":
            ak, ck = self.payload
            by_key: dict = {}
            for i, s in enumerate(ga.states):
                by_key.setdefault(ak(s), []).append(i)

            def rel(c):
                return tuple(by_key.get(ck(gc.states[c]), ()))
        elif self.kind == "abstraction":
            def rel(c):
                out = self.payload(gc.states[c])
                if out is None:
                    return ()
                if isinstance(out, Mapping):
                    out = [out]
                return tuple(sorted({ga.index[State(a)] for a in out if State(a) in ga.index}))
        elif self.kind in ("predicate", "expression"):
            if self.kind == "expression":
                expr, fn = self.payload
                _check_names(expr, ga, gc)

                def test(a: State, c: State) -> bool:
                    env = {f"A_{k}": v for k, v in a._d.items()}
                    env.update((f"C_{k}", v) for k, v in c._d.items())
                    try:
                        return fn(env) is True
                    except EvalError as err:
                        raise ModelError(f"relation '{self.description}': {err}") from None
            else:
                test = self.payload

            def rel(c):
                cs = gc.states[c]
                return tuple(i for i, a in enumerate(ga.states) if test(a, cs))
        else:
            raise ValueError(self.kind)

        def cached(c: int) -> tuple[int, ...]:
            r = cache.get(c)
            if r is None:
                r = cache[c] = rel(c)
            return r
        return cached


def _check_names(expr, ga: TransitionGraph, gc: TransitionGraph) -> None:
    avars = set().union(*(s._d.keys() for s in ga.states)) if ga.states else set()
    cvars = set().union(*(s._d.keys() for s in gc.states)) if gc.states else set()
    known = {f"A_{v}" for v in avars} | {f"C_{v}" for v in cvars}
    unknown = sorted(S.expr_vars(expr) - known)
    if unknown:
        raise ModelError(f"relation references unknown variables: {', '.join(unknown)} "
                         "(use A_<name> for abstract and C_<name> for concrete variables)")


@dataclass
class Obligation:
    id: str  # init | step | guard | termination | totality | continuity
    holds: bool
    checked: int = 0
    skipped: int = 0
    witnesses: list[dict] = field(default_factory=list)
    note: str = ""


@dataclass
class SimulationReport:
    kind: str  # "forward" | "backward"
    abstract: str
    concrete: str
    relation: str
    obligations: list[Obligation]
    stats: dict = field(default_factory=dict)

    @property
    def holds(self) -> str:
        if not all(o.holds for o in self.obligations):
            return "no"
        if any(o.skipped for o in self.obligations):
            return "yes-up-to-bound"
        return "yes"

    def obligation(self, oid: str) -> Obligation:
        return next(o for o in self.obligations if o.id == oid)

    def failed(self) -> list[str]:
        return [o.id for o in self.obligations if not o.holds]

    def records(self) -> list[str]:
        out = []
        for o in self.obligations:
            out.append(json.dumps({"simulation": self.kind, "obligation": o.id,
                                   "verdict": "holds" if o.holds else "fails", "checked": o.checked,
                                   "skipped_at_bound": o.skipped, "witnesses": o.witnesses,
                                   "note": o.note}, sort_keys=True))
        return out


MAX_WITNESSES = 3


def _state_json(s: State) -> dict:
    return {k: to_json(s[k]) for k in s}


def _reach(g: TransitionGraph, src: Iterable[int], goal: set[int], reverse: list[list[int]] | None = None) -> bool:
    """Is some goal node reachable (zero or more steps) from src?"""
    nbrs = g.succ if reverse is None else reverse
    seen = set()
    queue = deque()
    for s in src:
        if s in goal:
            return True
        if s not in seen:
            seen.add(s)
            queue.append(s)
    while queue:
        i = queue.popleft()
        for j in nbrs[i]:
            if j in goal:
                return True
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return False


def _termination(obj: ObjectDef, gc: TransitionGraph, threads: Sequence[int], history: bool) -> Obligation:
    rem_sys = sim_rem(obj, threads, history)
    # states carry the client's bookkeeping (results, counter) that rem leaves alone
    edges = closure(rem_sys.main, gc.states, rem_sys.universe)
    div = divergent_states(edges)
    bad = sorted((i for i, s in enumerate(gc.states) if s in div))
    ob = Obligation("termination", not bad, len(gc))
    ob.witnesses = [{"concrete": _state_json(gc.states[i])} for i in bad[:MAX_WITNESSES]]
    if bad:
        ob.note = f"{len(bad)} reachable states can run in-flight operations forever"
    return ob


def _graphs(oa, oc, threads, values, budget, history, max_history, max_states, jobs):
    ga = build_graph(sim_system(oa, threads, values, budget, history, max_history), max_states, jobs)
    gc = build_graph(sim_system(oc, threads, values, budget, history, max_history), max_states, jobs)
    return ga, gc


def check_forward_simulation(oa: ObjectDef, oc: ObjectDef, rel: SimRelation,
                             threads: Sequence[int] = DEFAULT_THREADS, values: Sequence | None = None,
                             budget: int | None = None, history: bool = False, max_history: int | None = None,
                             max_states: int = DEFAULT_MAX_STATES, jobs: int | None = 1) -> SimulationReport:
    """Evaluate the forward obligations (init, step, guard, termination)."""
    t0 = time.perf_counter()
    ga, gc = _graphs(oa, oc, threads, values, budget, history, max_history, max_states, jobs)
    r = rel.bind(ga, gc)
    a_init = set(ga.initial)
    init = Obligation("init", True)
    for c in gc.initial:
        init.checked += 1
        if not (set(r(c)) & a_init):
            init.holds = False
            if len(init.witnesses) < MAX_WITNESSES:
                init.witnesses.append({"concrete": _state_json(gc.states[c])})
    step = Obligation("step", True)
    grd = Obligation("guard", True)
    for c in range(len(gc)):
        related = r(c)
        for a in related:
            if not gc.succ[c]:
                grd.checked += 1
                if c in gc.bound_hit:
                    grd.skipped += 1
                elif ga.succ[a]:
                    grd.holds = False
                    if len(grd.witnesses) < MAX_WITNESSES:
                        grd.witnesses.append({"abstract": _state_json(ga.states[a]),
                                              "concrete": _state_json(gc.states[c])})
            for c2 in gc.succ[c]:
                step.checked += 1
                if not _reach(ga, [a], set(r(c2))):
                    step.holds = False
                    if len(step.witnesses) < MAX_WITNESSES:
                        step.witnesses.append({"abstract": _state_json(ga.states[a]),
                                               "concrete": _state_json(gc.states[c]),
                                               "concrete_next": _state_json(gc.states[c2])})
    term = _termination(oc, gc, threads, history)
    return SimulationReport("forward", oa.name, oc.name, rel.description, [init, step, grd, term],
                            {"abstract_states": len(ga), "concrete_states": len(gc),
                             "seconds": round(time.perf_counter() - t0, 3)})


def check_backward_simulation(oa: ObjectDef, oc: ObjectDef, rel: SimRelation,
                              threads: Sequence[int] = DEFAULT_THREADS, values: Sequence | None = None,
                              budget: int | None = None, history: bool = False, max_history: int | None = None,
                              max_states: int = DEFAULT_MAX_STATES, jobs: int | None = 1) -> SimulationReport:
    """Evaluate totality and the backward obligations (init, step, guard, termination)."""
    t0 = time.perf_counter()
    ga, gc = _graphs(oa, oc, threads, values, budget, history, max_history, max_states, jobs)
    r = rel.bind(ga, gc)
    pred = ga.predecessors()
    total = Obligation("totality", True)
    for c in range(len(gc)):
        total.checked += 1
        if not r(c):
            total.holds = False
            if len(total.witnesses) < MAX_WITNESSES:
                total.witnesses.append({"concrete": _state_json(gc.states[c])})
    cont = Obligation("continuity", True, len(ga), note="every abstract state has finitely many successors")
    a_init = set(ga.initial)
    init = Obligation("init", True)
    for c in gc.initial:
        for a in r(c):
            init.checked += 1
            if a not in a_init:
                init.holds = False
                if len(init.witnesses) < MAX_WITNESSES:
                    init.witnesses.append({"abstract": _state_json(ga.states[a]),
                                           "concrete": _state_json(gc.states[c])})
    step = Obligation("step", True)
    grd = Obligation("guard", True)
    for c in range(len(gc)):
        before = set(r(c))
        if not gc.succ[c]:
            grd.checked += 1
            if c in gc.bound_hit:
                grd.skipped += 1
            elif not any(not ga.succ[a] for a in before):
                grd.holds = False
                if len(grd.witnesses) < MAX_WITNESSES:
                    grd.witnesses.append({"concrete": _state_json(gc.states[c])})
        for c2 in gc.succ[c]:
            for a2 in r(c2):
                step.checked += 1
                if not _reach(ga, [a2], before, reverse=pred):
                    step.holds = False
                    if len(step.witnesses) < MAX_WITNESSES:
                        step.witnesses.append({"abstract_next": _state_json(ga.states[a2]),
                                               "concrete": _state_json(gc.states[c]),
                                               "concrete_next": _state_json(gc.states[c2])})
    term = _termination(oc, gc, threads, history)
    return SimulationReport("backward", oa.name, oc.name, rel.description, [total, cont, init, step, grd, term],
                            {"abstract_states": len(ga), "concrete_states": len(gc),
                             "seconds": round(time.perf_counter() - t0, 3)})


def describe(s: State) -> str:
    return ", ".join(f"{k}={format_value(s[k])}" for k in s)
