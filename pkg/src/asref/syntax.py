"""Abstract syntax for expressions, actions, domains and model declarations.

Every node is an immutable dataclass so ASTs compare structurally; the
canonical concrete syntax is produced by :func:`render`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Union

from .values import BOT, Event, format_value

# ---------------------------------------------------------------- expressions


@dataclass(frozen=True)
class Lit:
    value: Any


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class ThreadId:
    """The implicit thread parameter of a procedure body (``tid``)."""


@dataclass(frozen=True)
class Unary:
    op: str  # "not" | "-"
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Fn:
    name: str
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class SeqLit:
    items: tuple["Expr", ...]


@dataclass(frozen=True)
class Index:
    seq: "Expr"
    index: "Expr"


@dataclass(frozen=True)
class SetLit:
    items: tuple["Expr", ...]


@dataclass(frozen=True)
class Range:
    lo: "Expr"
    hi: "Expr"


@dataclass(frozen=True)
class Idle:
    """True iff thread ``thread`` has no procedure of the object in flight."""

    thread: int


Expr = Union[Lit, Var, ThreadId, Unary, Binary, Fn, SeqLit, Index, SetLit, Range, Idle]

BUILTINS = {
    "dec": 1, "head": 1, "tail": 1, "len": 1, "upd": 3, "inv": 3, "ret": 3,
    "ninv": 1, "take": 2, "drop": 2, "insert": 3, "lastpos": 2, "stackrun": 2,
}

# -------------------------------------------------------------------- actions


@dataclass(frozen=True)
class DeclareVar:
    name: str


@dataclass(frozen=True)
class RemoveVar:
    name: str


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    name: str
    expr: Expr


@dataclass(frozen=True)
class NondetAssign:
    name: str
    choices: Expr


@dataclass(frozen=True)
class Call:
    proc: str
    arg: Expr | None
    result: str | None
    thread: int


@dataclass(frozen=True)
class Seq:
    first: "Action"
    second: "Action"


@dataclass(frozen=True)
class Guard:
    cond: Expr
    body: "Action"


@dataclass(frozen=True)
class Choice:
    left: "Action"
    right: "Action"


Action = Union[DeclareVar, RemoveVar, Skip, Assign, NondetAssign, Call, Seq, Guard, Choice]


def seq(*actions: Action) -> Action:
    """Left-nested sequential composition (the parser's associativity)."""
    if not actions:
        return Skip()
    out = actions[0]
    for a in actions[1:]:
        out = Seq(out, a)
    return out


def choice(*actions: Action) -> Action:
    if not actions:
        raise ValueError("empty choice")
    out = actions[0]
    for a in actions[1:]:
        out = Choice(out, a)
    return out


def flatten_seq(a: Action) -> list[Action]:
    if isinstance(a, Seq):
        return flatten_seq(a.first) + flatten_seq(a.second)
    return [a]


def flatten_choice(a: Action) -> list[Action]:
    if isinstance(a, Choice):
        return flatten_choice(a.left) + flatten_choice(a.right)
    return [a]


def walk(a: Action) -> Iterator[Action]:
    yield a
    if isinstance(a, Seq):
        yield from walk(a.first)
        yield from walk(a.second)
    elif isinstance(a, Choice):
        yield from walk(a.left)
        yield from walk(a.right)
    elif isinstance(a, Guard):
        yield from walk(a.body)


def walk_expr(e: Expr) -> Iterator[Expr]:
    yield e
    if isinstance(e, Unary):
        yield from walk_expr(e.operand)
    elif isinstance(e, Binary):
        yield from walk_expr(e.left)
        yield from walk_expr(e.right)
    elif isinstance(e, (Fn, SeqLit, SetLit)):
        for x in (e.args if isinstance(e, Fn) else e.items):
            yield from walk_expr(x)
    elif isinstance(e, Index):
        yield from walk_expr(e.seq)
        yield from walk_expr(e.index)
    elif isinstance(e, Range):
        yield from walk_expr(e.lo)
        yield from walk_expr(e.hi)


def expr_vars(e: Expr) -> set[str]:
    return {x.name for x in walk_expr(e) if isinstance(x, Var)}


def action_exprs(a: Action) -> Iterator[Expr]:
    for node in walk(a):
        if isinstance(node, Assign):
            yield node.expr
        elif isinstance(node, NondetAssign):
            yield node.choices
        elif isinstance(node, Guard):
            yield node.cond
        elif isinstance(node, Call) and node.arg is not None:
            yield node.arg


# -------------------------------------------------------------------- domains


@dataclass(frozen=True)
class RangeDomain:
    lo: int
    hi: int

    def values(self) -> list:
        return list(range(self.lo, self.hi + 1))

    def __contains__(self, v) -> bool:
        return isinstance(v, int) and not isinstance(v, bool) and self.lo <= v <= self.hi


@dataclass(frozen=True)
class EnumDomain:
    items: tuple

    def values(self) -> list:
        return list(self.items)

    def __contains__(self, v) -> bool:
        return any(v == x and type(v) is type(x) for x in self.items)


@dataclass(frozen=True)
class BoolDomain:
    def values(self) -> list:
        return [False, True]

    def __contains__(self, v) -> bool:
        return isinstance(v, bool)


@dataclass(frozen=True)
class SeqDomain:
    elem: "Domain"
    maxlen: int

    def values(self) -> list:
        out: list = [()]
        layer: list = [()]
        for _ in range(self.maxlen):
            layer = [s + (x,) for s in layer for x in self.elem.values()]
            out.extend(layer)
        return out

    def __contains__(self, v) -> bool:
        return isinstance(v, tuple) and len(v) <= self.maxlen and all(x in self.elem for x in v)


Domain = Union[RangeDomain, EnumDomain, BoolDomain, SeqDomain]

# ------------------------------------------------------------- declarations


@dataclass(frozen=True)
class Procedure:
    name: str
    value_param: str | None
    result_param: str | None
    locals: tuple[str, ...]
    body: Action


@dataclass(frozen=True)
class ObjectDef:
    name: str
    unobservables: tuple[str, ...]
    procs: tuple[Procedure, ...]
    init: Action
    domains: tuple[tuple[str, Domain], ...] = ()

    def proc(self, name: str) -> Procedure:
        for p in self.procs:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def proc_names(self) -> list[str]:
        return [p.name for p in self.procs]

    @property
    def locals(self) -> list[str]:
        out: list[str] = []
        for p in self.procs:
            out.extend(x for x in p.locals if x not in out)
        return out


@dataclass(frozen=True)
class ClientDef:
    name: str
    observables: tuple[str, ...]
    unobservables: tuple[str, ...]
    init: Action
    main: Action
    domains: tuple[tuple[str, Domain], ...] = ()


@dataclass(frozen=True)
class Composition:
    name: str
    client: str
    object: str


@dataclass(frozen=True)
class Module:
    """A parsed source file: a sequence of model declarations."""

    items: tuple[ObjectDef | ClientDef | Composition, ...] = field(default=())


# ------------------------------------------------------------------ printing

_BIN_PREC = {
    "or": 1, "and": 2,
    "=": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4, "in": 4,
    "+": 5, "-": 5, "^": 5, "*": 6,
}


def render_expr(e: Expr, prec: int = 0) -> str:
    if isinstance(e, Lit):
        return format_value(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, ThreadId):
        return "tid"
    if isinstance(e, Idle):
        return f"idle[{e.thread}]"
    if isinstance(e, Unary):
        if e.op == "not":
            s = "not " + render_expr(e.operand, 3)
            return f"({s})" if prec > 3 else s
        s = "-(" + render_expr(e.operand) + ")"
        return f"({s})" if prec > 6 else s
    if isinstance(e, Binary):
        p = _BIN_PREC[e.op]
        # left-associative operators; comparisons are non-associative
        rp = p + 1
        lp = p + 1 if p == 4 else p
        s = f"{render_expr(e.left, lp)} {e.op} {render_expr(e.right, rp)}"
        return f"({s})" if prec > p else s
    if isinstance(e, Fn):
        return f"{e.name}(" + ", ".join(render_expr(a) for a in e.args) + ")"
    if isinstance(e, SeqLit):
        return "<" + ", ".join(render_expr(a, 5) for a in e.items) + ">"
    if isinstance(e, Index):
        return f"{render_expr(e.seq, 9)}[{render_expr(e.index)}]"
    if isinstance(e, SetLit):
        return "{" + ", ".join(render_expr(a) for a in e.items) + "}"
    if isinstance(e, Range):
        s = f"{render_expr(e.lo, 7)}..{render_expr(e.hi, 5)}"
        return f"({s})" if prec >= 5 else s
    raise TypeError(f"not an expression: {e!r}")


# action precedence: choice 0 < guard 1 < seq 2 < primitive 3
def render_action(a: Action, prec: int = 0) -> str:
    if isinstance(a, Choice):
        s = f"{render_action(a.left, 0)} [] {render_action(a.right, 1)}"
        return f"({s})" if prec > 0 else s
    if isinstance(a, Guard):
        s = f"{render_expr(a.cond)} -> {render_action(a.body, 1)}"
        return f"({s})" if prec > 1 else s
    if isinstance(a, Seq):
        s = f"{render_action(a.first, 2)}; {render_action(a.second, 3)}"
        return f"({s})" if prec > 2 else s
    if isinstance(a, Skip):
        return "skip"
    if isinstance(a, DeclareVar):
        return f"var {a.name}"
    if isinstance(a, RemoveVar):
        return f"rav {a.name}"
    if isinstance(a, Assign):
        return f"{a.name} := {render_expr(a.expr)}"
    if isinstance(a, NondetAssign):
        return f"{a.name} :in {render_expr(a.choices)}"
    if isinstance(a, Call):
        args = []
        if a.arg is not None:
            args.append(render_expr(a.arg))
        if a.result is not None:
            args.append(f"res {a.result}")
        return f"call {a.proc}[{a.thread}](" + ", ".join(args) + ")"
    raise TypeError(f"not an action: {a!r}")


def render_domain(d: Domain) -> str:
    if isinstance(d, RangeDomain):
        return f"{d.lo}..{d.hi}"
    if isinstance(d, EnumDomain):
        return "{" + ", ".join(format_value(v) for v in d.items) + "}"
    if isinstance(d, BoolDomain):
        return "bool"
    if isinstance(d, SeqDomain):
        return f"seq {render_domain(d.elem)} max {d.maxlen}"
    raise TypeError(d)


def _render_domains(domains) -> list[str]:
    return [f"  domain {name} : {render_domain(d)};" for name, d in domains]


def render(node) -> str:
    """Canonical text for any AST node; ``parse(render(x)) == x``."""
    if isinstance(node, Module):
        return "\n\n".join(render(x) for x in node.items) + "\n"
    if isinstance(node, ObjectDef):
        lines = [f"object {node.name} {{"]
        if node.unobservables:
            lines.append("  varu " + ", ".join(node.unobservables) + ";")
        lines += _render_domains(node.domains)
        lines.append(f"  init {render_action(node.init)};")
        for p in node.procs:
            params = []
            if p.value_param:
                params.append(f"val {p.value_param}")
            if p.result_param:
                params.append(f"res {p.result_param}")
            head = f"  proc {p.name}(" + ", ".join(params) + ")"
            if p.locals:
                head += " local " + ", ".join(p.locals)
            branches = flatten_choice(p.body) if isinstance(p.body, Choice) else [p.body]
            if len(branches) > 1 and _left_nested(p.body):
                body = "\n       [] ".join(render_action(b, 1) for b in branches)
            else:
                body = render_action(p.body)
            lines.append(f"{head} =\n       {body};")
        lines.append("}")
        return "\n".join(lines)
    if isinstance(node, ClientDef):
        lines = [f"client {node.name} {{"]
        if node.observables:
            lines.append("  varo " + ", ".join(node.observables) + ";")
        if node.unobservables:
            lines.append("  varu " + ", ".join(node.unobservables) + ";")
        lines += _render_domains(node.domains)
        lines.append(f"  init {render_action(node.init)};")
        branches = flatten_choice(node.main)
        if len(branches) > 1 and _left_nested(node.main):
            body = "\n  [] ".join(render_action(b, 1) for b in branches)
        else:
            body = render_action(node.main)
        lines.append(f"  do\n     {body}\n  od")
        lines.append("}")
        return "\n".join(lines)
    if isinstance(node, Composition):
        return f"system {node.name} = {node.client}[{node.object}];"
    if isinstance(node, (Lit, Var, ThreadId, Unary, Binary, Fn, SeqLit, Index, SetLit, Range, Idle)):
        return render_expr(node)
    return render_action(node)


def _left_nested(a: Action) -> bool:
    while isinstance(a, Choice):
        if isinstance(a.right, Choice):
            return False
        a = a.left
    return True


__all__ = [name for name in dir() if not name.startswith("_")] + ["BOT", "Event"]
