"""Explicit-state exploration: transition graphs, complete traces, normalisation."""
from __future__ import annotations

import json
import multiprocessing as mp
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .kernel import ComposedSystem, ModelError, State, compiled, _Ctx
from .values import format_value, to_json

DEFAULT_MAX_STATES = 500_000


class BoundExhausted(Exception):
    """The state-count limit was reached before the graph closed."""

    def __init__(self, limit: int, explored: int):
        self.limit = limit
        self.explored = explored
        super().__init__(f"bound exhausted: more than {limit} states (explored {explored})")


@dataclass
class TransitionGraph:
    states: list[State]
    index: dict[State, int]
    initial: tuple[int, ...]
    succ: list[tuple[int, ...]]
    observables: frozenset[str]
    bound_hit: frozenset[int] = frozenset()
    name: str = ""

    def __len__(self):
        return len(self.states)

    @property
    def nodes(self) -> list[State]:
        return self.states

    @property
    def edge_count(self) -> int:
        return sum(len(s) for s in self.succ)

    def edges(self, s: State) -> set[State]:
        return {self.states[j] for j in self.succ[self.index[s]]}

    def terminal(self) -> list[int]:
        return [i for i, s in enumerate(self.succ) if not s]

    def predecessors(self) -> list[list[int]]:
        pred: list[list[int]] = [[] for _ in self.states]
        for i, ss in enumerate(self.succ):
            for j in ss:
                pred[j].append(i)
        return pred

    def observe(self, i: int) -> State:
        return self.states[i].restrict(self.observables)


# fork-shared state for worker processes
_WORKER: dict = {}


def _expand_chunk(chunk: list[State]) -> list[tuple[list[dict], bool]]:
    fn = _WORKER["fn"]
    out = []
    for s in chunk:
        ctx = _Ctx()
        out.append((fn(s._d, ctx), ctx.bound_hit))
    return out


def _expand_serial(fn, frontier: list[State]):
    out = []
    for s in frontier:
        ctx = _Ctx()
        out.append((fn(s._d, ctx), ctx.bound_hit))
    return out


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        env = os.environ.get("ASREF_JOBS")
        jobs = int(env) if env else 1
    if jobs <= 0:
        jobs = os.cpu_count() or 1
    return jobs


def build_graph(sys: ComposedSystem, max_states: int = DEFAULT_MAX_STATES, jobs: int | None = 1,
                initial: Iterable[State] | None = None) -> TransitionGraph:
    """Breadth-first closure of the initial states under the main action.

    Each BFS level is sorted canonically before numbering, so node ids and
    every derived result are independent of ``jobs``.
    """
    jobs = resolve_jobs(jobs)
    if initial is None:
        init_states, _ = sys.initial_states()
    else:
        init_states = set(initial)
    fn = compiled(sys.main, sys.universe)
    states: list[State] = []
    index: dict[State, int] = {}
    succ: list[tuple[int, ...]] = []
    hits: set[int] = set()

    def add(s: State) -> int:
        i = index.get(s)
        if i is None:
            if len(states) >= max_states:
                raise BoundExhausted(max_states, len(states))
            i = len(states)
            index[s] = i
            states.append(s)
            succ.append(())
        return i

    frontier = sorted(init_states, key=lambda s: s.sort_key)
    init_ids = tuple(add(s) for s in frontier)
    pool = None
    try:
        if jobs > 1 and "fork" in mp.get_all_start_methods():
            _WORKER["fn"] = fn
            pool = mp.get_context("fork").Pool(jobs)
        while frontier:
            if pool is not None and len(frontier) >= 4 * jobs:
                size = max(1, len(frontier) // (jobs * 4))
                chunks = [frontier[k:k + size] for k in range(0, len(frontier), size)]
                results = [r for part in pool.map(_expand_chunk, chunks) for r in part]
            else:
                results = _expand_serial(fn, frontier)
            fresh: dict[State, None] = {}
            pending = []
            for s, (outs, hit) in zip(frontier, results):
                targets = {State(d) for d in outs}
                if hit:
                    hits.add(index[s])
                pending.append((s, targets))
                for t in targets:
                    if t not in index:
                        fresh[t] = None
            level = sorted(fresh, key=lambda s: s.sort_key)
            for t in level:
                add(t)
            for s, targets in pending:
                succ[index[s]] = tuple(sorted(index[t] for t in targets))
            frontier = level
    finally:
        if pool is not None:
            pool.close()
            pool.join()
            _WORKER.clear()
    return TransitionGraph(states, index, init_ids, succ, sys.observables, frozenset(hits), sys.name)


# ------------------------------------------------------------------- traces

@dataclass(frozen=True)
class Trace:
    states: tuple[State, ...]
    kind: str  # "deadlocked" | "cut" | "lasso"
    loop_start: int | None = None
    bound: int | None = None

    def __post_init__(self):
        if not self.states:
            raise ValueError("a trace has at least one state")
        if self.kind == "lasso" and not (self.loop_start is not None and 0 <= self.loop_start < len(self.states)):
            raise ValueError("lasso needs 0 <= loop_start < len(states)")

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class ObservableTrace:
    observations: tuple[State, ...]
    divergent: bool = False
    cycle: tuple[State, ...] = ()
    prefix: bool = False

    @property
    def infinite(self) -> bool:
        return self.divergent or bool(self.cycle)

    def as_trace(self) -> Trace:
        obs = self.observations
        if self.cycle:
            return Trace(obs + self.cycle, "lasso", len(obs))
        if self.divergent:
            return Trace(obs, "lasso", len(obs) - 1)
        return Trace(obs, "cut" if self.prefix else "deadlocked")

    def __str__(self):
        parts = [_fmt_obs(o) for o in self.observations]
        s = "<" + ", ".join(parts)
        if self.cycle:
            s += ", (" + ", ".join(_fmt_obs(o) for o in self.cycle) + ")^w"
        if self.divergent:
            s += ", ↑"
        if self.prefix:
            s += ", ..."
        return s + ">"

    def tuples(self, names: Sequence[str]) -> list[tuple]:
        return [tuple(o[n] for n in names) for o in self.observations]


def _fmt_obs(o: State) -> str:
    return "(" + ", ".join(f"{k}={format_value(o[k])}" for k in o) + ")"


def complete_traces(g: TransitionGraph, maxlen: int) -> list[Trace]:
    """Every path from an initial state that deadlocks, closes a lasso on
    itself, or reaches ``maxlen`` states (kind ``cut``)."""
    if maxlen < 1:
        raise ValueError("maxlen must be at least 1")
    out: list[Trace] = []
    for i0 in g.initial:
        path = [i0]
        on_path = {i0: 0}
        stack: list[Iterator[int]] = [iter(g.succ[i0])]
        _emit_leaf(g, path, on_path, maxlen, out)
        while stack:
            if len(path) >= maxlen or not g.succ[path[-1]]:
                nxt = None
            else:
                nxt = next(stack[-1], None)
            if nxt is None:
                stack.pop()
                on_path.pop(path.pop())
                continue
            if nxt in on_path:
                out.append(Trace(tuple(g.states[k] for k in path), "lasso", on_path[nxt]))
                continue
            path.append(nxt)
            on_path[nxt] = len(path) - 1
            stack.append(iter(g.succ[nxt]))
            _emit_leaf(g, path, on_path, maxlen, out)
    return out


def _emit_leaf(g, path, on_path, maxlen, out):
    last = path[-1]
    if not g.succ[last]:
        out.append(Trace(tuple(g.states[k] for k in path), "deadlocked"))
    elif len(path) >= maxlen:
        out.append(Trace(tuple(g.states[k] for k in path), "cut", bound=maxlen))


def collapse(obs: Iterable[State]) -> tuple[State, ...]:
    out: list[State] = []
    for o in obs:
        if not out or out[-1] != o:
            out.append(o)
    return tuple(out)


def _lasso_form(stem: Sequence[State], loop: Sequence[State]) -> tuple[tuple, tuple]:
    """Canonical (prefix, cycle) of the stutter-free word stem . loop^omega."""
    reps = len(stem) + 2 * len(loop) + 4
    word = collapse(list(stem) + list(loop) * reps)
    n = len(word)
    best = None
    for q in range(1, len(loop) + 1):
        # smallest p with word[i] == word[i+q] for all p <= i < n-q
        i = n - q - 1
        while i >= 0 and word[i] == word[i + q]:
            i -= 1
        p = i + 1
        # the matched stretch must be long enough that q cannot be a
        # coincidental period (Fine and Wilf)
        if p + q + len(loop) <= n:
            best = (p, q)
            break
    if best is None:
        raise AssertionError("lasso word did not stabilise")
    p, q = best
    return word[:p], word[p:p + q]


def normalize(t: Trace | ObservableTrace, observables: Iterable[str] | None = None) -> ObservableTrace:
    """Restrict to the observables, drop finite stuttering, mark divergence."""
    if isinstance(t, ObservableTrace):
        t = t.as_trace()
    if observables is None:
        proj = list(t.states)
    else:
        names = list(observables)
        proj = [s.restrict(names) for s in t.states]
    if t.kind == "lasso":
        stem, loop = proj[:t.loop_start], proj[t.loop_start:]
        if all(o == loop[0] for o in loop):
            return ObservableTrace(collapse(stem + loop[:1]), divergent=True)
        prefix, cycle = _lasso_form(stem, loop)
        return ObservableTrace(prefix, cycle=cycle)
    return ObservableTrace(collapse(proj), prefix=(t.kind == "cut"))


def observable_traces(g: TransitionGraph, maxlen: int) -> set[ObservableTrace]:
    return {normalize(t, g.observables) for t in complete_traces(g, maxlen)}


# ------------------------------------------------------------------- export

def to_dot(g: TransitionGraph, highlight: Iterable[int] = ()) -> str:
    hl = set(highlight)
    lines = [f'digraph "{g.name or "system"}" {{', "  node [shape=box, fontsize=10];"]
    for i, s in enumerate(g.states):
        label = "\\n".join(f"{k}={format_value(s[k])}" for k in s).replace('"', '\\"')
        attrs = [f'label="{i}\\n{label}"']
        if i in g.initial:
            attrs.append("penwidth=2")
        if i in hl:
            attrs.append('color="red"')
        lines.append(f"  n{i} [{', '.join(attrs)}];")
    for i, ss in enumerate(g.succ):
        for j in ss:
            lines.append(f"  n{i} -> n{j};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def state_record(s: State) -> dict:
    return {k: to_json(s[k]) for k in s}


def trace_records(states: Sequence[State], loop_start: int | None = None, **extra) -> Iterator[str]:
    """Line-delimited JSON, one record per state."""
    for i, s in enumerate(states):
        rec = {"step": i, "state": state_record(s)}
        if loop_start is not None and i == loop_start:
            rec["loop_start"] = True
        rec.update(extra)
        yield json.dumps(rec, sort_keys=True)


def observable_trace_records(t: ObservableTrace) -> Iterator[str]:
    for i, o in enumerate(t.observations):
        yield json.dumps({"step": i, "obs": state_record(o)}, sort_keys=True)
    for i, o in enumerate(t.cycle):
        yield json.dumps({"step": len(t.observations) + i, "obs": state_record(o), "cycle": True}, sort_keys=True)
    if t.divergent:
        yield json.dumps({"divergent": True})
    if t.prefix:
        yield json.dumps({"prefix": True})


def shortest_path(g: TransitionGraph, targets: Iterable[int], sources: Iterable[int] | None = None,
                  allowed: set[int] | None = None) -> list[int] | None:
    """BFS path of node ids from a source (default: initial) to any target."""
    goal = set(targets)
    src = list(g.initial if sources is None else sources)
    parent: dict[int, int | None] = {}
    queue = []
    for s in src:
        if s not in parent and (allowed is None or s in allowed):
            parent[s] = None
            queue.append(s)
    k = 0
    while k < len(queue):
        i = queue[k]
        k += 1
        if i in goal:
            path = [i]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        for j in g.succ[i]:
            if j not in parent and (allowed is None or j in allowed):
                parent[j] = i
                queue.append(j)
    return None


def check_system(sys: ComposedSystem) -> None:
    if not isinstance(sys, ComposedSystem):
        raise ModelError("expected a composed system")
