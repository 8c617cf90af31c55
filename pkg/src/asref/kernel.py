"""States, value universes, and the relational semantics of actions.

Actions are compiled once into closures over plain dicts; the public
functions (:func:`eval_action`, :func:`guard`, ...) wrap that compiled form
and return sets of immutable :class:`State` values.
"""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from . import syntax as S
from .syntax import (
    Action, Assign, Binary, Call, Choice, ClientDef, DeclareVar, Domain, Expr, Fn, Guard,
    Idle, Index, Lit, NondetAssign, ObjectDef, Range, RemoveVar, Seq, SeqLit, SetLit, Skip,
    ThreadId, Unary, Var,
)
from .values import BOT, Event, value_key


class ModelError(Exception):
    """A model is malformed (unknown procedure, arity mismatch, name clash...)."""


class EvalError(ModelError):
    """Evaluation touched an undeclared variable or an undefined operation."""

    def __init__(self, message: str, variable: str | None = None, action: str | None = None):
        self.variable = variable
        self.action = action
        where = f" in `{action}`" if action else ""
        super().__init__(message + where)


class State(Mapping):
    """Immutable finite map from variable names to values."""

    __slots__ = ("_d", "_hash")

    def __init__(self, bindings: Mapping[str, Any] | Iterable = ()):
        self._d = dict(bindings)
        self._hash = None

    def __getitem__(self, name):
        return self._d[name]

    def __iter__(self):
        return iter(sorted(self._d))

    def __len__(self):
        return len(self._d)

    def __contains__(self, name):
        return name in self._d

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._d.items()))
        return self._hash

    def __eq__(self, other):
        if isinstance(other, State):
            return self._d == other._d
        if isinstance(other, Mapping):
            return self._d == dict(other)
        return NotImplemented

    def __lt__(self, other: "State"):
        return self.sort_key < other.sort_key

    def __reduce__(self):
        return (State, (self._d,))

    @property
    def sort_key(self) -> tuple:
        # not cached: graphs hold many states and the key is only needed
        # while sorting one BFS level
        return tuple((k, value_key(self._d[k])) for k in sorted(self._d))

    def declares(self, name: str) -> bool:
        return name in self._d

    def restrict(self, names: Iterable[str]) -> "State":
        return State({k: self._d[k] for k in names if k in self._d})

    def without(self, names: Iterable[str]) -> "State":
        drop = set(names)
        return State({k: v for k, v in self._d.items() if k not in drop})

    def updated(self, **bindings) -> "State":
        d = dict(self._d)
        d.update(bindings)
        return State(d)

    def as_dict(self) -> dict:
        return dict(self._d)

    def __repr__(self):
        from .values import format_value
        return "{" + ", ".join(f"{k}: {format_value(self._d[k])}" for k in sorted(self._d)) + "}"


@dataclass(frozen=True, eq=False)
class ValueUniverse:
    """Per-variable finite domains plus a default domain for everything else.

    Assignments that leave a declared domain are *bound hits*: the transition
    is absent rather than an error.
    """

    domains: Mapping[str, Domain] = field(default_factory=dict)
    default: tuple = (0, 1)

    def domain_of(self, name: str) -> Domain | None:
        return self.domains.get(name)

    def values_for(self, name: str) -> list:
        d = self.domains.get(name)
        return d.values() if d is not None else list(self.default)


EMPTY_UNIVERSE = ValueUniverse()


class _Ctx:
    """Per-evaluation side channel recording whether a bound cut a transition."""

    __slots__ = ("bound_hit",)

    def __init__(self):
        self.bound_hit = False


class _Unset:
    __slots__ = ()

    def __repr__(self):
        return "UNSET"


UNSET = _Unset()


# ---------------------------------------------------------------- expressions

def _stackrun(base, log):
    stack = tuple(base)
    for entry in log:
        _, op, v = entry
        if op == "push":
            stack = (v,) + stack
        elif op == "pop":
            if not stack:
                if v != "empty":
                    return BOT
            else:
                if v != stack[0]:
                    return BOT
                stack = stack[1:]
        else:
            return BOT
    return stack


def _lastpos(log, tid):
    for i in range(len(log) - 1, -1, -1):
        if log[i][0] == tid:
            return i
    return -1


def _need_seq(v, what):
    if not isinstance(v, tuple):
        raise EvalError(f"{what} applied to non-sequence {v!r}")
    return v


def _head(s):
    if not _need_seq(s, "head"):
        raise EvalError("head of empty sequence")
    return s[0]


def _tail(s):
    if not _need_seq(s, "tail"):
        raise EvalError("tail of empty sequence")
    return s[1:]


def _upd(s, i, v):
    _need_seq(s, "upd")
    if not (0 <= i < len(s)):
        raise EvalError(f"index {i} out of range")
    return s[:i] + (v,) + s[i + 1:]


def _index(s, i):
    _need_seq(s, "indexing")
    if not isinstance(i, int) or not (0 <= i < len(s)):
        raise EvalError(f"index {i!r} out of range")
    return s[i]


_FUNCS: dict[str, Callable] = {
    "head": _head,
    "tail": _tail,
    "len": lambda s: len(_need_seq(s, "len")),
    "upd": _upd,
    "inv": lambda t, o, v: Event("inv", t, o, v),
    "ret": lambda t, o, v: Event("ret", t, o, v),
    "ninv": lambda h: sum(1 for e in h if isinstance(e, Event) and e.kind == "inv"),
    "take": lambda s, n: _need_seq(s, "take")[:n],
    "drop": lambda s, n: _need_seq(s, "drop")[n:],
    "insert": lambda s, i, e: _need_seq(s, "insert")[:i] + (e,) + s[i:],
    "lastpos": _lastpos,
    "stackrun": _stackrun,
}


def _arith(op):
    def f(a, b):
        if not (isinstance(a, int) and isinstance(b, int)) or isinstance(a, bool) or isinstance(b, bool):
            raise EvalError(f"arithmetic '{op}' on non-integers {a!r}, {b!r}")
        return a + b if op == "+" else a - b if op == "-" else a * b
    return f


def _cmp(op):
    def f(a, b):
        try:
            return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]
        except TypeError:
            raise EvalError(f"cannot compare {a!r} {op} {b!r}") from None
    return f


def _eq(a, b):
    return a == b and type(a) is type(b) if not (isinstance(a, tuple) and isinstance(b, tuple)) else a == b


def compile_expr(e: Expr) -> Callable[[dict], Any]:
    if isinstance(e, Lit):
        v = e.value
        return lambda s: v
    if isinstance(e, Var):
        name = e.name

        def read(s):
            try:
                v = s[name]
            except KeyError:
                raise EvalError(f"undeclared variable '{name}'", variable=name) from None
            if v is UNSET:
                raise EvalError(f"variable '{name}' read before initialisation", variable=name)
            return v
        return read
    if isinstance(e, (ThreadId, Idle)):
        raise ModelError(f"{S.render_expr(e)} is only meaningful inside a composed system")
    if isinstance(e, Unary):
        f = compile_expr(e.operand)
        if e.op == "not":
            return lambda s: not f(s)
        return lambda s: -f(s)
    if isinstance(e, Binary):
        fl, fr = compile_expr(e.left), compile_expr(e.right)
        op = e.op
        if op == "and":
            return lambda s: bool(fl(s)) and bool(fr(s))
        if op == "or":
            return lambda s: bool(fl(s)) or bool(fr(s))
        if op == "=":
            return lambda s: _eq(fl(s), fr(s))
        if op == "!=":
            return lambda s: not _eq(fl(s), fr(s))
        if op in ("+", "-", "*"):
            g = _arith(op)
            return lambda s: g(fl(s), fr(s))
        if op == "^":
            def cat(s):
                a, b = fl(s), fr(s)
                _need_seq(a, "^")
                _need_seq(b, "^")
                return a + b
            return cat
        if op == "in":
            return lambda s: fl(s) in fr(s)
        g = _cmp(op)
        return lambda s: g(fl(s), fr(s))
    if isinstance(e, Fn):
        if e.name == "dec":
            arg = e.args[0]
            if not isinstance(arg, Var):
                raise ModelError("dec() takes a variable name")
            name = arg.name
            return lambda s: name in s
        fn = _FUNCS[e.name]
        args = [compile_expr(a) for a in e.args]
        if len(args) == 1:
            a0 = args[0]
            return lambda s: fn(a0(s))
        return lambda s: fn(*[a(s) for a in args])
    if isinstance(e, SeqLit):
        items = [compile_expr(a) for a in e.items]
        return lambda s: tuple(f(s) for f in items)
    if isinstance(e, Index):
        fs, fi = compile_expr(e.seq), compile_expr(e.index)
        return lambda s: _index(fs(s), fi(s))
    if isinstance(e, SetLit):
        items = [compile_expr(a) for a in e.items]
        return lambda s: _dedup(f(s) for f in items)
    if isinstance(e, Range):
        flo, fhi = compile_expr(e.lo), compile_expr(e.hi)
        return lambda s: tuple(range(flo(s), fhi(s) + 1))
    raise TypeError(f"not an expression: {e!r}")


def _dedup(it) -> tuple:
    out = []
    for v in it:
        if not any(_eq(v, w) for w in out):
            out.append(v)
    return tuple(out)


# -------------------------------------------------------------------- actions

Compiled = Callable[[dict, _Ctx], list]


def _located(fn, a: Action):
    """Attach the offending sub-action to evaluation errors."""
    def run(s, ctx):
        try:
            return fn(s, ctx)
        except EvalError as err:
            if err.action is None:
                raise EvalError(str(err), err.variable, S.render_action(a)) from None
            raise
    return run


def _check_domain(universe: ValueUniverse, name: str, v, ctx: _Ctx) -> bool:
    d = universe.domains.get(name)
    if d is not None and v not in d:
        ctx.bound_hit = True
        return False
    return True


def compile_action(a: Action, universe: ValueUniverse = EMPTY_UNIVERSE) -> Compiled:
    if isinstance(a, Skip):
        return lambda s, ctx: [s]
    if isinstance(a, DeclareVar):
        name = a.name
        values = universe.values_for(name)

        def declare(s, ctx):
            if name in s:
                return []
            out = []
            for v in values:
                d = dict(s)
                d[name] = v
                out.append(d)
            return out
        return declare
    if isinstance(a, RemoveVar):
        name = a.name

        def remove(s, ctx):
            d = dict(s)
            d.pop(name, None)
            return [d]
        return remove
    if isinstance(a, Assign):
        name = a.name
        f = compile_expr(a.expr)

        def assign(s, ctx):
            if name not in s:
                raise EvalError(f"assignment to undeclared variable '{name}'", variable=name)
            v = f(s)
            if not _check_domain(universe, name, v, ctx):
                return []
            d = dict(s)
            d[name] = v
            return [d]
        return _located(assign, a)
    if isinstance(a, NondetAssign):
        name = a.name
        f = compile_expr(a.choices)

        def nondet(s, ctx):
            if name not in s:
                raise EvalError(f"assignment to undeclared variable '{name}'", variable=name)
            out = []
            for v in f(s):
                if _check_domain(universe, name, v, ctx):
                    d = dict(s)
                    d[name] = v
                    out.append(d)
            return out
        return _located(nondet, a)
    if isinstance(a, Guard):
        cond = compile_expr(a.cond)
        body = compile_action(a.body, universe)

        def guarded(s, ctx):
            c = cond(s)
            if not isinstance(c, bool):
                raise EvalError(f"guard evaluated to non-boolean {c!r}")
            return body(s, ctx) if c else []
        return _located(guarded, Guard(a.cond, Skip()))
    if isinstance(a, Choice):
        parts = [compile_action(b, universe) for b in S.flatten_choice(a)]

        def choose(s, ctx):
            out = []
            for p in parts:
                out.extend(p(s, ctx))
            return out
        return choose
    if isinstance(a, Seq):
        return _compile_seq(S.flatten_seq(a), universe)
    if isinstance(a, Call):
        raise ModelError(f"unexpanded procedure call `{S.render_action(a)}`")
    raise TypeError(f"not an action: {a!r}")


def _compile_seq(items: list[Action], universe: ValueUniverse) -> Compiled:
    steps: list[Compiled] = []
    i = 0
    while i < len(items):
        a = items[i]
        nxt = items[i + 1] if i + 1 < len(items) else None
        # `var x; x := e` introduces x directly at e's value: same relation,
        # without enumerating x's domain first.
        if (isinstance(a, DeclareVar) and isinstance(nxt, (Assign, NondetAssign))
                and nxt.name == a.name
                and a.name not in S.expr_vars(nxt.expr if isinstance(nxt, Assign) else nxt.choices)):
            steps.append(_fused_declare(a.name, nxt, universe))
            i += 2
            continue
        steps.append(compile_action(a, universe))
        i += 1
    if len(steps) == 1:
        return steps[0]

    def run(s, ctx):
        cur = [s]
        for st in steps:
            nxt_states = []
            for c in cur:
                nxt_states.extend(st(c, ctx))
            if not nxt_states:
                return []
            cur = nxt_states
        return cur
    return run


def _fused_declare(name: str, assign: Assign | NondetAssign, universe: ValueUniverse) -> Compiled:
    declared = universe.domains.get(name)
    if isinstance(assign, Assign):
        f = compile_expr(assign.expr)

        def gen(s):
            return (f(s),)
    else:
        g = compile_expr(assign.choices)
        gen = g

    def run(s, ctx):
        if name in s:
            return []
        out = []
        for v in gen(s):
            if declared is not None and v not in declared:
                ctx.bound_hit = True
                continue
            d = dict(s)
            d[name] = v
            out.append(d)
        return out
    return _located(run, Seq(DeclareVar(name), assign))


_CACHE: dict[tuple[int, int], tuple[Action, ValueUniverse, Compiled]] = {}


def compiled(a: Action, universe: ValueUniverse = EMPTY_UNIVERSE) -> Compiled:
    key = (id(a), id(universe))
    hit = _CACHE.get(key)
    if hit is not None and hit[0] is a and hit[1] is universe:
        return hit[2]
    fn = compile_action(a, universe)
    _CACHE[key] = (a, universe, fn)
    return fn


def _as_dict(sigma) -> dict:
    return sigma._d if isinstance(sigma, State) else dict(sigma)


def successors(a: Action, sigma, universe: ValueUniverse = EMPTY_UNIVERSE) -> tuple[set[State], bool]:
    """Image of ``sigma`` under ``rel.a`` plus whether a domain bound cut a branch."""
    ctx = _Ctx()
    out = compiled(a, universe)(_as_dict(sigma), ctx)
    return {State(d) for d in out}, ctx.bound_hit


def eval_action(a: Action, sigma, universe: ValueUniverse = EMPTY_UNIVERSE) -> set[State]:
    return successors(a, sigma, universe)[0]


def guard(a: Action, sigma, universe: ValueUniverse = EMPTY_UNIVERSE) -> bool:
    return bool(compiled(a, universe)(_as_dict(sigma), _Ctx()))


def iterate_image(a: Action, sigma, k: int, universe: ValueUniverse = EMPTY_UNIVERSE) -> set[State]:
    if k < 0:
        raise ValueError("k must be non-negative")
    cur = {State(_as_dict(sigma))}
    for _ in range(k):
        nxt: set[State] = set()
        for s in cur:
            nxt |= eval_action(a, s, universe)
        cur = nxt
    return cur


def closure(a: Action, roots: Iterable[State], universe: ValueUniverse = EMPTY_UNIVERSE) -> dict[State, set[State]]:
    """All states reachable from ``roots`` under ``rel.a``, with their edges."""
    edges: dict[State, set[State]] = {}
    stack = list(roots)
    while stack:
        s = stack.pop()
        if s in edges:
            continue
        succ = eval_action(a, s, universe)
        edges[s] = succ
        stack.extend(t for t in succ if t not in edges)
    return edges


def divergent_states(edges: Mapping[State, set[State]]) -> set[State]:
    """States from which an infinite path exists (they reach a cycle)."""
    # iteratively strip states whose successors are all terminating
    remaining = {s: set(ts) for s, ts in edges.items()}
    preds: dict[State, set[State]] = {s: set() for s in remaining}
    for s, ts in remaining.items():
        for t in ts:
            preds.setdefault(t, set()).add(s)
    outdeg = {s: len(ts) for s, ts in remaining.items()}
    work = [s for s, n in outdeg.items() if n == 0]
    done = set()
    while work:
        s = work.pop()
        if s in done:
            continue
        done.add(s)
        for p in preds.get(s, ()):
            outdeg[p] -= 1
            if outdeg[p] == 0:
                work.append(p)
    return {s for s in remaining if s not in done}


def terminates_iterated(a: Action, sigma, universe: ValueUniverse = EMPTY_UNIVERSE) -> bool:
    start = State(_as_dict(sigma))
    edges = closure(a, [start], universe)
    return start not in divergent_states(edges)


# ----------------------------------------------------------------- expansion

@dataclass
class ComposedSystem:
    """An action system ready for exploration: no calls, no idle tests."""

    name: str
    observables: frozenset[str]
    unobservables: frozenset[str]
    init: Action
    main: Action
    universe: ValueUniverse
    threads: tuple[int, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def variables(self) -> frozenset[str]:
        return self.observables | self.unobservables

    def initial_states(self) -> tuple[set[State], bool]:
        return initial_states(self.init, self.variables, self.universe)


def initial_states(init: Action, declared: Iterable[str], universe: ValueUniverse) -> tuple[set[State], bool]:
    """Images of the initialisation from every state over the declared variables.

    Variables the initialisation leaves untouched range over their domains.
    """
    declared = sorted(declared)
    start = {v: UNSET for v in declared}
    ctx = _Ctx()
    out = compiled(init, universe)(start, ctx)
    result: set[State] = set()
    for d in out:
        pending = [k for k, v in d.items() if v is UNSET]
        partial = [dict(d)]
        for k in pending:
            partial = [{**p, k: v} for p in partial for v in universe.values_for(k)]
        result.update(State(p) for p in partial)
    return result, ctx.bound_hit


def local_name(name: str, thread: int) -> str:
    return f"{name}_{thread}"


def rename_expr(e: Expr, env: Mapping[str, str], thread: int | None, idle: Callable[[int], Expr] | None) -> Expr:
    if isinstance(e, Var):
        return Var(env.get(e.name, e.name))
    if isinstance(e, ThreadId):
        if thread is None:
            raise ModelError("tid used outside a procedure body")
        return Lit(thread)
    if isinstance(e, Idle):
        if idle is None:
            raise ModelError("idle[...] used outside a client composition")
        return idle(e.thread)
    if isinstance(e, Unary):
        return Unary(e.op, rename_expr(e.operand, env, thread, idle))
    if isinstance(e, Binary):
        return Binary(e.op, rename_expr(e.left, env, thread, idle), rename_expr(e.right, env, thread, idle))
    if isinstance(e, Fn):
        return Fn(e.name, tuple(rename_expr(x, env, thread, idle) for x in e.args))
    if isinstance(e, SeqLit):
        return SeqLit(tuple(rename_expr(x, env, thread, idle) for x in e.items))
    if isinstance(e, SetLit):
        return SetLit(tuple(rename_expr(x, env, thread, idle) for x in e.items))
    if isinstance(e, Index):
        return Index(rename_expr(e.seq, env, thread, idle), rename_expr(e.index, env, thread, idle))
    if isinstance(e, Range):
        return Range(rename_expr(e.lo, env, thread, idle), rename_expr(e.hi, env, thread, idle))
    return e


def rename_action(a: Action, env: Mapping[str, str], thread: int | None = None,
                  idle: Callable[[int], Expr] | None = None) -> Action:
    r = lambda x: rename_action(x, env, thread, idle)  # noqa: E731
    re = lambda x: rename_expr(x, env, thread, idle)  # noqa: E731
    if isinstance(a, DeclareVar):
        return DeclareVar(env.get(a.name, a.name))
    if isinstance(a, RemoveVar):
        return RemoveVar(env.get(a.name, a.name))
    if isinstance(a, Assign):
        return Assign(env.get(a.name, a.name), re(a.expr))
    if isinstance(a, NondetAssign):
        return NondetAssign(env.get(a.name, a.name), re(a.choices))
    if isinstance(a, Seq):
        return Seq(r(a.first), r(a.second))
    if isinstance(a, Choice):
        return Choice(r(a.left), r(a.right))
    if isinstance(a, Guard):
        return Guard(re(a.cond), r(a.body))
    if isinstance(a, Call):
        return Call(a.proc, None if a.arg is None else re(a.arg), a.result and env.get(a.result, a.result), a.thread)
    return a


def idle_expr(obj: ObjectDef, thread: int) -> Expr:
    """No local of any procedure of ``obj`` is declared for ``thread``."""
    conds = [Unary("not", Fn("dec", (Var(local_name(l, thread)),))) for l in obj.locals]
    if not conds:
        return Lit(True)
    out = conds[0]
    for c in conds[1:]:
        out = Binary("and", out, c)
    return out


def expand_call(call: Call, obj: ObjectDef) -> Action:
    """Inline one procedure call: locals get the thread suffix, the value
    parameter becomes a fresh initialised local, the result parameter is the
    caller's variable."""
    try:
        proc = obj.proc(call.proc)
    except KeyError:
        raise ModelError(f"unknown procedure '{call.proc}' of object '{obj.name}'") from None
    if (call.arg is None) != (proc.value_param is None):
        raise ModelError(f"call to '{proc.name}': value-parameter arity mismatch")
    if (call.result is None) != (proc.result_param is None):
        raise ModelError(f"call to '{proc.name}': result-parameter arity mismatch")
    t = call.thread
    env = {l: local_name(l, t) for l in proc.locals}
    if proc.value_param:
        env[proc.value_param] = local_name(proc.value_param, t)
    if proc.result_param:
        env[proc.result_param] = call.result
    for node in S.walk(proc.body):
        if isinstance(node, Call):
            raise ModelError(f"procedure '{proc.name}' calls '{node.proc}': nested calls are not supported")
    body = rename_action(proc.body, env, thread=t)
    if proc.value_param:
        v = local_name(proc.value_param, t)
        body = S.seq(DeclareVar(v), Assign(v, call.arg), body, RemoveVar(v))
    return body


def expand_action(a: Action, obj: ObjectDef | None) -> Action:
    idle = (lambda t: idle_expr(obj, t)) if obj is not None else None
    if isinstance(a, Call):
        if obj is None:
            raise ModelError("procedure call without an object")
        return expand_call(a, obj)
    if isinstance(a, Seq):
        return Seq(expand_action(a.first, obj), expand_action(a.second, obj))
    if isinstance(a, Choice):
        return Choice(expand_action(a.left, obj), expand_action(a.right, obj))
    if isinstance(a, Guard):
        return Guard(rename_expr(a.cond, {}, None, idle), expand_action(a.body, obj))
    if isinstance(a, Assign):
        return Assign(a.name, rename_expr(a.expr, {}, None, idle))
    if isinstance(a, NondetAssign):
        return NondetAssign(a.name, rename_expr(a.choices, {}, None, idle))
    return a


def called_threads(a: Action) -> list[int]:
    return sorted({n.thread for n in S.walk(a) if isinstance(n, Call)}
                  | {e.thread for x in S.action_exprs(a) for e in S.walk_expr(x) if isinstance(e, Idle)})


def literal_values(*nodes) -> list:
    """Scalar literals appearing anywhere in the given actions."""
    out = []
    for a in nodes:
        for e in S.action_exprs(a):
            for x in S.walk_expr(e):
                if isinstance(x, Lit) and not any(_eq(x.value, w) for w in out):
                    out.append(x.value)
    return out


def thread_domains(obj: ObjectDef, threads: Iterable[int]) -> dict[str, Domain]:
    """Object domains with thread-local entries replicated per thread."""
    doms = dict(obj.domains)
    out = {k: v for k, v in doms.items()}
    per_thread = set(obj.locals) | {p.value_param for p in obj.procs if p.value_param}
    for t in threads:
        for name in per_thread:
            if name in doms:
                out[local_name(name, t)] = doms[name]
    return out


def default_universe(domains: Mapping[str, Domain], *actions: Action) -> tuple:
    vals = literal_values(*actions)
    for d in domains.values():
        if not isinstance(d, S.SeqDomain):
            for v in d.values():
                if not any(_eq(v, w) for w in vals):
                    vals.append(v)
    return tuple(sorted(vals, key=value_key))


def compose(client: ClientDef, obj: ObjectDef) -> ComposedSystem:
    """Build C[O]: expanded ``I ; J`` and ``do A od``."""
    L = set(obj.unobservables)
    G = set(client.observables)
    U = set(client.unobservables)
    if L & G:
        raise ModelError(f"object variables {sorted(L & G)} clash with client observables")
    if L & U:
        raise ModelError(f"object variables {sorted(L & U)} clash with client variables")
    threads = called_threads(client.main)
    locals_ = {local_name(l, t) for t in threads for l in obj.locals}
    locals_ |= {local_name(p.value_param, t) for t in threads for p in obj.procs if p.value_param}
    transient = {n.name for a in (client.init, client.main) for n in S.walk(a) if isinstance(n, DeclareVar)}
    clash = locals_ & (L | G | U | transient)
    if clash:
        raise ModelError(f"thread-local names {sorted(clash)} clash with declared variables")
    domains = thread_domains(obj, threads)
    for k, v in client.domains:
        domains[k] = v
    main = expand_action(client.main, obj)
    init = Seq(obj.init, expand_action(client.init, obj))
    for n in S.walk(init):
        if isinstance(n, Call):
            raise ModelError("calls are not allowed in initialisation")
    universe = ValueUniverse(domains, default_universe(domains, main, init,
                                                      *[p.body for p in obj.procs]))
    return ComposedSystem(
        name=f"{client.name}[{obj.name}]",
        observables=frozenset(G),
        unobservables=frozenset(L | U),
        init=init,
        main=main,
        universe=universe,
        threads=tuple(threads),
        meta={"client": client.name, "object": obj.name},
    )


def expand_procedures(target: ClientDef | ObjectDef | tuple, obj: ObjectDef | None = None):
    """Eliminate procedure calls.

    ``expand_procedures(client, obj)`` (or a ``(client, obj)`` pair) yields the
    composed system; ``expand_procedures(obj)`` validates an object whose
    bodies contain no calls and returns it unchanged.
    """
    if isinstance(target, tuple):
        target, obj = target
    if isinstance(target, ObjectDef) and obj is None:
        for p in target.procs:
            for n in S.walk(p.body):
                if isinstance(n, Call):
                    raise ModelError(f"procedure '{p.name}' contains a call")
        return target
    if not isinstance(target, ClientDef) or obj is None:
        raise ModelError("expand_procedures expects a client and an object")
    return compose(target, obj)
