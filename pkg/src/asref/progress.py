"""History-extended objects, the most general client, canonical objects,
and minimal-progress checking on finite graphs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import networkx as nx

from . import syntax as S
from .explorer import BoundExhausted, TransitionGraph, build_graph, shortest_path, DEFAULT_MAX_STATES
from .kernel import (
    ComposedSystem, ModelError, State, closure, compose, divergent_states, expand_action, guard,
    local_name, rename_action,
)
from .syntax import (
    Assign, Binary, Call, Choice, ClientDef, DeclareVar, Fn, Guard, Idle, Lit, ObjectDef,
    Procedure, RemoveVar, Seq, SeqLit, ThreadId, Unary, Var,
)
from .values import BOT, Event

HISTORY = "H"
STOP = "tt"
DEFAULT_THREADS = (1, 2)
DEFAULT_MAX_HISTORY = 8


def _append(kind: str, op: str, value: S.Expr) -> Assign:
    ev = Fn(kind, (ThreadId(), Lit(op), value))
    return Assign(HISTORY, Binary("^", Var(HISTORY), SeqLit((ev,))))


def _with_budget(a: S.Action, budget: int | None) -> S.Action:
    if budget is None:
        return a
    return Guard(Binary("<", Fn("ninv", (Var(HISTORY),)), Lit(budget)), a)


def is_atomic(p: Procedure) -> bool:
    return not p.locals


def _rewrite_blocks(a: S.Action, locals_: set[str], inv_ev: S.Action, ret_ev: S.Action) -> S.Action:
    if isinstance(a, Guard):
        return Guard(a.cond, _rewrite_blocks(a.body, locals_, inv_ev, ret_ev))
    if isinstance(a, Choice):
        return Choice(_rewrite_blocks(a.left, locals_, inv_ev, ret_ev),
                      _rewrite_blocks(a.right, locals_, inv_ev, ret_ev))
    items = S.flatten_seq(a)
    opens = any(isinstance(x, DeclareVar) and x.name in locals_ for x in items)
    close_at = next((k for k, x in enumerate(items) if isinstance(x, RemoveVar) and x.name in locals_), None)
    if close_at is not None:
        head = items[:close_at] + ([inv_ev] if opens else []) + [ret_ev]
        return S.seq(*head, *items[close_at:])
    if opens:
        return S.seq(*items, inv_ev)
    return a


def extend_with_history(obj: ObjectDef, invocation_budget: int | None = None) -> ObjectDef:
    """Record every invocation and response in the history variable ``H``.

    Atomic procedures become ``inv; body; ret``. In a multi-step procedure the
    block that declares the procedure's locals appends the invocation and the
    block that removes them appends the response just before the first
    ``rav``. With a budget, invocations are only enabled while fewer than
    ``invocation_budget`` invocations are recorded.
    """
    names = set(obj.unobservables) | set(obj.locals)
    for p in obj.procs:
        names |= {x for x in (p.value_param, p.result_param) if x}
    if HISTORY in names:
        raise ModelError(f"object '{obj.name}' already uses the name '{HISTORY}'")
    procs = []
    for p in obj.procs:
        v = Var(p.value_param) if p.value_param else Lit(BOT)
        r = Var(p.result_param) if p.result_param else Lit(BOT)
        inv_ev = _with_budget(_append("inv", p.name, v), invocation_budget)
        ret_ev = _append("ret", p.name, r)
        if is_atomic(p):
            body = S.seq(inv_ev, p.body, ret_ev)
        else:
            body = _rewrite_blocks(p.body, set(p.locals), inv_ev, ret_ev)
        procs.append(Procedure(p.name, p.value_param, p.result_param, p.locals, body))
    return ObjectDef(obj.name, obj.unobservables + (HISTORY,), tuple(procs),
                     Seq(obj.init, Assign(HISTORY, SeqLit(()))), obj.domains)


def argument_values(obj: ObjectDef, p: Procedure, values: Sequence | None = None) -> list:
    if p.value_param is None:
        return [None]
    if values is not None:
        return list(values)
    doms = dict(obj.domains)
    d = doms.get(p.value_param)
    if d is None:
        raise ModelError(f"value parameter '{p.value_param}' of '{p.name}' needs a declared domain")
    return d.values()


def result_var(t: int) -> str:
    return f"result_{t}"


def may_step(p: Procedure, t: int) -> S.Expr:
    # a thread starts a call only when idle; a multi-step call continues
    # while its own locals are declared
    cond: S.Expr = Idle(t)
    for l in p.locals:
        cond = Binary("or", cond, Fn("dec", (Var(local_name(l, t)),)))
    return cond


def call_action(obj: ObjectDef, p: Procedure, t: int, v) -> S.Action:
    """One call by thread ``t``; the result variable is cleared once the thread is idle again."""
    arg = None if v is None else Lit(v)
    if p.result_param is None:
        return Guard(may_step(p, t), Call(p.name, arg, None, t))
    r = result_var(t)
    clear = Choice(Guard(Idle(t), Assign(r, Lit(BOT))), Guard(Unary("not", Idle(t)), S.Skip()))
    return Guard(may_step(p, t), S.seq(Call(p.name, arg, r, t), clear))


def result_vars(obj: ObjectDef, threads: Sequence[int]) -> tuple[str, ...]:
    return tuple(result_var(t) for t in threads) if any(p.result_param for p in obj.procs) else ()


def act(obj: ObjectDef, threads: Sequence[int] = DEFAULT_THREADS, values: Sequence | None = None) -> S.Action:
    """Demonic choice of every call of every procedure by every thread."""
    calls = [call_action(obj, p, t, v) for t in threads for p in obj.procs
             for v in argument_values(obj, p, values)]
    if not calls:
        raise ModelError(f"object '{obj.name}' has no procedures")
    return S.choice(*calls)


def rem(obj: ObjectDef, threads: Sequence[int] = DEFAULT_THREADS) -> S.Action:
    """Steps of operations already in flight; no fresh invocations."""
    branches = []
    for t in threads:
        # an in-flight step never reads the argument, so one value suffices
        calls = [call_action(obj, p, t, argument_values(obj, p)[0]) for p in obj.procs]
        branches.append(Guard(Unary("not", Idle(t)), S.choice(*calls)))
    return S.choice(*branches)


def _client(name: str, main: S.Action, with_stop: bool, results: Sequence[str] = ()) -> ClientDef:
    init = S.seq(*[Assign(r, Lit(BOT)) for r in results]) if results else S.Skip()
    if with_stop:
        return ClientDef(name, (), (STOP,) + tuple(results), S.seq(Assign(STOP, Lit(False)), init),
                         Guard(Unary("not", Var(STOP)), Choice(main, Assign(STOP, Lit(True)))))
    return ClientDef(name, (), tuple(results), init, main)


def build_mgc(obj: ObjectDef, threads: Sequence[int] = DEFAULT_THREADS,
              max_history: int | None = DEFAULT_MAX_HISTORY, values: Sequence | None = None,
              stop: bool = True) -> ComposedSystem:
    """M[O]: any thread may call any operation with any argument, or stop.

    ``max_history`` bounds the recorded history length (half as many
    invocations); ``None`` leaves it unbounded. ``values`` overrides the
    declared argument domains. With ``stop=False`` the ``tt`` flag is left
    out: the graph then lacks only the terminal copies of each state, so
    histories and non-terminating cycles are unchanged.
    """
    budget = None if max_history is None else max_history // 2
    ext = extend_with_history(obj, budget)
    sys = compose(_client("MGC", act(obj, threads, values), stop, result_vars(obj, threads)), ext)
    sys.name = f"M[{obj.name}]"
    sys.meta.update(kind="mgc", threads=tuple(threads), max_history=max_history, object_def=obj,
                    values=None if values is None else tuple(values))
    return sys


def object_system(obj: ObjectDef, threads: Sequence[int] = DEFAULT_THREADS,
                  max_history: int | None = DEFAULT_MAX_HISTORY, values: Sequence | None = None) -> ComposedSystem:
    """``I; H := <>`` followed by iterations of the history-extended act.P."""
    sys = build_mgc(obj, threads, max_history, values, stop=False)
    sys.name = f"act[{obj.name}]"
    sys.meta["kind"] = "object"
    return sys


def expanded(obj_ext: ObjectDef, a: S.Action) -> S.Action:
    return expand_action(a, obj_ext)


# ---------------------------------------------------------------- canonical

def canonicalize(obj: ObjectDef) -> ObjectDef:
    """Split each atomic procedure into invocation, effect and response steps.

    The effect step runs the original body, so the result parameter is
    written there; the response only ends the call.
    """
    taken = set(obj.unobservables)
    procs = []
    for p in obj.procs:
        if not is_atomic(p):
            raise ModelError(f"procedure '{p.name}' is not atomic; only atomic objects can be canonicalised")
        pc, a = "pc", "a"
        for n in (pc, a):
            if n in taken or n in (p.value_param, p.result_param):
                raise ModelError(f"canonical local '{n}' clashes with a name of '{obj.name}'")
        locals_ = [pc]
        env = {}
        # phase labels are per procedure so that a call of another procedure
        # on the same thread cannot continue this one
        mid, done = Lit(f"{p.name}1"), Lit(f"{p.name}2")
        entry = [DeclareVar(pc), Assign(pc, mid)]
        if p.value_param:
            # the value parameter only lives for one step, so keep a copy
            locals_.append(a)
            env[p.value_param] = a
            entry += [DeclareVar(a), Assign(a, Var(p.value_param))]
        effect = rename_action(p.body, env)
        declared = Fn("dec", (Var(pc),))
        body = S.choice(
            Guard(Unary("not", declared), S.seq(*entry)),
            Guard(Binary("and", declared, Binary("=", Var(pc), mid)), S.seq(effect, Assign(pc, done))),
            Guard(Binary("and", declared, Binary("=", Var(pc), done)), S.seq(*[RemoveVar(x) for x in locals_])),
        )
        procs.append(Procedure(p.name, p.value_param, p.result_param, tuple(locals_), body))
    return ObjectDef(f"Canonical{obj.name}", obj.unobservables, tuple(procs), obj.init, obj.domains)


# ----------------------------------------------------------------- progress

def history_of(s: State) -> tuple:
    return s[HISTORY]


def ret_appended(before: State, after: State) -> bool:
    h0, h1 = before[HISTORY], after[HISTORY]
    return len(h1) > len(h0) and any(e.kind == "ret" for e in h1[len(h0):])


@dataclass
class ProgressReport:
    verdict: str  # "SATISFIED" | "VIOLATED" | "INCONCLUSIVE"
    states: int = 0
    edges: int = 0
    path: list[State] = field(default_factory=list)
    cycle: list[State] = field(default_factory=list)
    detail: str = ""

    @property
    def satisfied(self) -> bool:
        return self.verdict == "SATISFIED"


def _stuck_cycle(g: TransitionGraph) -> tuple[list[int], list[int]] | None:
    """A reachable cycle with tt false throughout and no response appended."""
    dg = nx.DiGraph()
    live = [i for i, s in enumerate(g.states) if not s.get(STOP, False)]
    live_set = set(live)
    dg.add_nodes_from(live)
    for i in live:
        si = g.states[i]
        for j in g.succ[i]:
            if j in live_set and not ret_appended(si, g.states[j]):
                dg.add_edge(i, j)
    cyclic = []
    for comp in nx.strongly_connected_components(dg):
        if len(comp) > 1 or any(dg.has_edge(n, n) for n in comp):
            cyclic.append(min(comp))
    if not cyclic:
        return None
    # entry into the earliest-found component via the shortest path
    comps = {n: c for c in nx.strongly_connected_components(dg) for n in c}
    targets = set(cyclic)
    path = shortest_path(g, [n for n in range(len(g.states)) if n in comps and min(comps[n]) in targets])
    entry = path[-1]
    comp = comps[entry]
    cycle = _cycle_through(dg, entry, comp)
    return path, cycle


def _cycle_through(dg: nx.DiGraph, start: int, comp: set[int]) -> list[int]:
    if dg.has_edge(start, start):
        return [start]
    parent = {start: None}
    queue = [start]
    k = 0
    while k < len(queue):
        i = queue[k]
        k += 1
        for j in sorted(dg.successors(i)):
            if j == start:
                out = [i]
                while parent[out[-1]] is not None:
                    out.append(parent[out[-1]])
                return out[::-1]
            if j in comp and j not in parent:
                parent[j] = i
                queue.append(j)
    raise AssertionError("component without a cycle")


def check_minimal_progress(obj: ObjectDef, threads: Sequence[int] = DEFAULT_THREADS,
                           max_history: int | None = DEFAULT_MAX_HISTORY,
                           max_states: int = DEFAULT_MAX_STATES, jobs: int | None = 1,
                           graph: TransitionGraph | None = None, values: Sequence | None = None) -> ProgressReport:
    """Look for a reachable cycle of M[O] along which no response is recorded.

    The graph is built without the stop flag: stopping only adds terminal
    copies of states, which lie on no cycle.
    """
    if graph is None:
        try:
            graph = build_graph(build_mgc(obj, threads, max_history, values, stop=False),
                                max_states=max_states, jobs=jobs)
        except BoundExhausted as err:
            return ProgressReport("INCONCLUSIVE", err.explored, detail=str(err))
    found = _stuck_cycle(graph)
    if found is None:
        return ProgressReport("SATISFIED", len(graph), graph.edge_count)
    path, cycle = found
    return ProgressReport("VIOLATED", len(graph), graph.edge_count,
                          [graph.states[i] for i in path], [graph.states[i] for i in cycle],
                          detail="reachable cycle on which no pending operation completes")


@dataclass
class Lemma3Report:
    guard_ok: bool
    termination_ok: bool
    guard_failures: list[State] = field(default_factory=list)
    divergent: list[State] = field(default_factory=list)
    states: int = 0

    @property
    def holds(self) -> bool:
        return self.guard_ok and self.termination_ok


def rem_divergent(obj: ObjectDef, roots: Iterable[State], threads: Sequence[int] = DEFAULT_THREADS) -> set[State]:
    """States from which in-flight operations can run forever without new invocations."""
    ext = extend_with_history(obj, None)
    sys = compose(_client("REM", rem(obj, threads), False, result_vars(obj, threads)), ext)
    edges = closure(sys.main, roots, sys.universe)
    return divergent_states(edges)


def check_lemma3(obj: ObjectDef, threads: Sequence[int] = DEFAULT_THREADS,
                 max_history: int | None = DEFAULT_MAX_HISTORY, max_states: int = DEFAULT_MAX_STATES,
                 graph: TransitionGraph | None = None, values: Sequence | None = None) -> Lemma3Report:
    """act.P is enabled in every reachable M[O] state and in-flight operations
    cannot run forever once invocations stop."""
    if graph is None:
        graph = build_graph(build_mgc(obj, threads, max_history, values, stop=False), max_states=max_states)
    ext = extend_with_history(obj, None)
    full = compose(_client("ACT", act(obj, threads), False, result_vars(obj, threads)), ext)
    bad_guard = [s for s in graph.states if not guard(full.main, s, full.universe)]
    div = rem_divergent(obj, graph.states, threads)
    reach_div = sorted((s for s in graph.states if s in div), key=lambda s: s.sort_key)
    return Lemma3Report(not bad_guard, not reach_div, bad_guard, reach_div, len(graph))


def histories_of(g: TransitionGraph) -> set[tuple[Event, ...]]:
    return {s[HISTORY] for s in g.states}
