"""Concrete syntax for ``.as`` model files: lexer, parser, semantic checks.

``parse(render(x)) == x`` for every AST the printer accepts.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from . import syntax as S
from .syntax import (
    Action, Assign, Binary, BoolDomain, Call, Choice, ClientDef, Composition, DeclareVar,
    EnumDomain, Fn, Guard, Idle, Index, Lit, Module, NondetAssign, ObjectDef, Procedure,
    Range, RangeDomain, RemoveVar, Seq, SeqDomain, SeqLit, SetLit, Skip, ThreadId, Unary,
    Var, render,
)
from .values import BOT


class DSLError(Exception):
    def __init__(self, message: str, line: int, col: int):
        self.message = message
        self.line = line
        self.col = col
        super().__init__(f"line {line}, col {col}: {message}")


@dataclass(frozen=True)
class Token:
    kind: str  # INT, IDENT, SYM, OP, KW, EOF
    text: str
    line: int
    col: int


KEYWORDS = {
    "object", "client", "system", "varu", "varo", "domain", "init", "proc", "local",
    "val", "res", "do", "od", "var", "rav", "skip", "call", "and", "or", "not", "in",
    "true", "false", "bot", "tid", "idle", "bool", "seq", "max",
}

_UNICODE = {
    "⊓": "[]", "→": "->", "⟨⟩": "<>", "⟨": "<", "⟩": ">", "⌢": "^", "⊥": "bot",
    "≠": "!=", "≤": "<=", "≥": ">=", "¬": "not", "∧": "and", "∨": "or", ":∈": ":in", "∈": "in",
}

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>(?://|\#)[^\n]*)
  | (?P<INT>\d+)
  | (?P<SYM>'[A-Za-z_][A-Za-z0-9_]*)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<UNI>:∈|⟨⟩|[⊓→⟨⟩⌢⊥≠≤≥¬∧∨∈])
  | (?P<OP>:in\b|:=|->|\[\]|<>|<=|>=|!=|\.\.|[-+*^=<>()\[\]{},;:])
""", re.VERBOSE)


def tokenize(text: str) -> list[Token]:
    out: list[Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise DSLError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        pos = m.end()
        if kind == "nl":
            line += 1
            line_start = pos
            continue
        if kind in ("ws", "comment"):
            continue
        if kind == "UNI":
            tok = _UNICODE[tok]
            kind = "KW" if tok in KEYWORDS else "OP"
        elif kind == "IDENT" and tok in KEYWORDS:
            kind = "KW"
        out.append(Token(kind, tok, line, col))
    out.append(Token("EOF", "", line, pos - line_start + 1))
    return out


# tokens that cannot start an action: a `;` followed by one of these ends a sequence
_STOP = {"proc", "init", "varu", "varo", "domain", "do", "od", "}", ")", "[]", "object",
         "client", "system", ""}

_REL = {"=", "!=", "<", "<=", ">", ">="}


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        # (name, line, col) of every variable occurrence, per declaration
        self.uses: list[tuple[str, int, int]] = []
        self.proc_uses: list[tuple[Procedure, list]] = []

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, *texts: str) -> bool:
        t = self.tok
        return t.kind in ("OP", "KW") and t.text in texts

    def error(self, msg: str, tok: Token | None = None) -> DSLError:
        t = tok or self.tok
        return DSLError(msg, t.line, t.col)

    def expect(self, text: str) -> Token:
        if not self.at(text):
            got = self.tok.text or "end of input"
            raise self.error(f"expected '{text}', got '{got}'")
        t = self.tok
        self.i += 1
        return t

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "IDENT":
            raise self.error(f"expected identifier, got '{t.text or 'end of input'}'")
        self.i += 1
        return t

    def int_lit(self) -> int:
        neg = self.accept("-")
        t = self.tok
        if t.kind != "INT":
            raise self.error("expected integer")
        self.i += 1
        return -int(t.text) if neg else int(t.text)

    # -- expressions
    def expr(self):
        return self.or_expr()

    def or_expr(self):
        e = self.and_expr()
        while self.accept("or"):
            e = Binary("or", e, self.and_expr())
        return e

    def and_expr(self):
        e = self.not_expr()
        while self.accept("and"):
            e = Binary("and", e, self.not_expr())
        return e

    def not_expr(self):
        if self.accept("not"):
            return Unary("not", self.not_expr())
        return self.rel_expr()

    def rel_expr(self):
        e = self.add_expr()
        t = self.tok
        if t.kind == "OP" and t.text in _REL or self.at("in"):
            self.i += 1
            e = Binary(t.text, e, self.add_expr())
            if self.tok.kind == "OP" and self.tok.text in _REL:
                raise self.error("comparisons do not chain; add parentheses")
        return e

    def add_expr(self):
        e = self.mul_expr()
        while self.tok.kind == "OP" and self.tok.text in ("+", "-", "^"):
            op = self.tok.text
            self.i += 1
            e = Binary(op, e, self.mul_expr())
        return e

    def mul_expr(self):
        e = self.unary_expr()
        while self.accept("*"):
            e = Binary("*", e, self.unary_expr())
        return e

    def unary_expr(self):
        if self.at("-"):
            if self.peek().kind == "INT":
                self.i += 1
                v = -int(self.tok.text)
                self.i += 1
                return self.range_tail(self.postfix(Lit(v)))
            self.i += 1
            self.expect("(")
            e = self.expr()
            self.expect(")")
            return self.range_tail(Unary("-", e))
        return self.range_tail(self.postfix(self.primary()))

    def range_tail(self, e):
        if self.accept(".."):
            return Range(e, self.add_expr())
        return e

    def postfix(self, e):
        while self.at("["):
            self.i += 1
            idx = self.expr()
            self.expect("]")
            e = Index(e, idx)
        return e

    def primary(self):
        t = self.tok
        if t.kind == "INT":
            self.i += 1
            return Lit(int(t.text))
        if t.kind == "SYM":
            self.i += 1
            return Lit(t.text[1:])
        if self.at("true", "false"):
            self.i += 1
            return Lit(t.text == "true")
        if self.at("bot"):
            self.i += 1
            return Lit(BOT)
        if self.at("tid"):
            self.i += 1
            return ThreadId()
        if self.at("idle"):
            self.i += 1
            self.expect("[")
            k = self.int_lit()
            self.expect("]")
            return Idle(k)
        if t.kind == "IDENT":
            self.i += 1
            if self.at("("):
                return self.fn_call(t)
            self.uses.append((t.text, t.line, t.col))
            return Var(t.text)
        if self.at("("):
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        if self.at("<>"):
            self.i += 1
            return SeqLit(())
        if self.at("<"):
            self.i += 1
            items = [self.add_expr()]
            while self.accept(","):
                items.append(self.add_expr())
            self.expect(">")
            return SeqLit(tuple(items))
        if self.at("{"):
            self.i += 1
            items = []
            if not self.at("}"):
                items.append(self.expr())
                while self.accept(","):
                    items.append(self.expr())
            self.expect("}")
            return SetLit(tuple(items))
        raise self.error(f"expected expression, got '{t.text or 'end of input'}'")

    def fn_call(self, name: Token):
        if name.text not in S.BUILTINS:
            raise self.error(f"unknown function '{name.text}'", name)
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.expr())
            while self.accept(","):
                args.append(self.expr())
        self.expect(")")
        if len(args) != S.BUILTINS[name.text]:
            raise self.error(f"{name.text}() takes {S.BUILTINS[name.text]} argument(s), got {len(args)}", name)
        if name.text == "dec" and not isinstance(args[0], Var):
            raise self.error("dec() takes a variable name", name)
        return Fn(name.text, tuple(args))

    # -- actions
    def action(self) -> Action:
        a = self.guarded()
        while self.accept("[]"):
            a = Choice(a, self.guarded())
        return a

    def guarded(self) -> Action:
        save, nuses = self.i, len(self.uses)
        try:
            cond = self.expr()
            is_guard = self.at("->")
        except DSLError:
            is_guard = False
        if is_guard:
            self.i += 1
            return Guard(cond, self.guarded())
        self.i = save
        del self.uses[nuses:]
        return self.sequence()

    def sequence(self) -> Action:
        a = self.basic()
        while self.at(";") and not (self.peek().text in _STOP and self.peek().kind != "IDENT"):
            self.i += 1
            a = Seq(a, self.basic())
        return a

    def basic(self) -> Action:
        t = self.tok
        if self.accept("("):
            a = self.action()
            self.expect(")")
            return a
        if self.accept("skip"):
            return Skip()
        if self.accept("var"):
            n = self.ident()
            self.uses.append((n.text, n.line, n.col))
            return DeclareVar(n.text)
        if self.accept("rav"):
            n = self.ident()
            self.uses.append((n.text, n.line, n.col))
            return RemoveVar(n.text)
        if self.accept("call"):
            return self.call()
        if t.kind == "IDENT":
            return self.assignment()
        raise self.error(f"expected action, got '{t.text or 'end of input'}'")

    def call(self) -> Call:
        name = self.ident()
        self.expect("[")
        thread = self.int_lit()
        self.expect("]")
        self.expect("(")
        arg, result = None, None
        if self.accept("res"):
            r = self.ident()
            self.uses.append((r.text, r.line, r.col))
            result = r.text
        elif not self.at(")"):
            arg = self.expr()
            if self.accept(","):
                self.expect("res")
                r = self.ident()
                self.uses.append((r.text, r.line, r.col))
                result = r.text
        self.expect(")")
        return Call(name.text, arg, result, thread)

    def assignment(self) -> Action:
        targets = [self.ident()]
        while self.accept(","):
            targets.append(self.ident())
        for t in targets:
            self.uses.append((t.text, t.line, t.col))
        if len(targets) == 1 and self.at(":in"):
            self.i += 1
            return NondetAssign(targets[0].text, self.expr())
        op = self.expect(":=")
        exprs = [self.expr()]
        while self.accept(","):
            exprs.append(self.expr())
        if len(exprs) != len(targets):
            raise self.error(f"{len(targets)} target(s) but {len(exprs)} value(s)", op)
        if len(targets) == 1:
            return Assign(targets[0].text, exprs[0])
        # a, b := e1, e2 is evaluated sequentially; refuse forms where that differs
        # from a simultaneous update
        names = [t.text for t in targets]
        if len(set(names)) != len(names):
            raise self.error("duplicate assignment target", op)
        for k, e in enumerate(exprs):
            clash = S.expr_vars(e) & set(names[:k])
            if clash:
                raise self.error(f"multiple assignment reads earlier target '{sorted(clash)[0]}'", op)
        return S.seq(*[Assign(n, e) for n, e in zip(names, exprs)])

    # -- domains
    def domain(self) -> S.Domain:
        if self.accept("bool"):
            return BoolDomain()
        if self.accept("seq"):
            elem = self.domain()
            self.expect("max")
            t = self.tok
            n = self.int_lit()
            if n < 0:
                raise self.error("negative maximum length", t)
            return SeqDomain(elem, n)
        if self.accept("{"):
            items = []
            if not self.at("}"):
                items.append(self.domain_value())
                while self.accept(","):
                    items.append(self.domain_value())
            self.expect("}")
            return EnumDomain(tuple(items))
        t = self.tok
        lo = self.int_lit()
        self.expect("..")
        hi = self.int_lit()
        if hi < lo:
            raise self.error("empty range", t)
        return RangeDomain(lo, hi)

    def domain_value(self):
        t = self.tok
        if t.kind == "INT" or self.at("-"):
            return self.int_lit()
        if t.kind == "SYM":
            self.i += 1
            return t.text[1:]
        if self.at("true", "false"):
            self.i += 1
            return t.text == "true"
        if self.at("bot"):
            self.i += 1
            return BOT
        raise self.error("expected a literal value")

    # -- declarations
    def names(self) -> list[Token]:
        out = [self.ident()]
        while self.accept(","):
            out.append(self.ident())
        return out

    def module(self) -> tuple[Module, dict]:
        items = []
        info = {}
        while self.tok.kind != "EOF":
            start = len(self.uses)
            self.proc_uses = []
            t = self.tok
            if self.at("object"):
                item = self.object_def()
            elif self.at("client"):
                item = self.client_def()
            elif self.at("system"):
                item = self.system()
            else:
                raise self.error("expected 'object', 'client' or 'system'")
            info[id(item)] = (t, self.uses[start:], self.proc_uses)
            items.append(item)
        return Module(tuple(items)), info

    def object_def(self) -> ObjectDef:
        self.expect("object")
        name = self.ident().text
        self.expect("{")
        varu: list[str] = []
        domains = []
        init: Action = Skip()
        procs: list[Procedure] = []
        seen_procs: set[str] = set()
        while not self.accept("}"):
            if self.accept("varu"):
                varu += [t.text for t in self.names()]
                self.expect(";")
            elif self.accept("domain"):
                domains.append(self.domain_decl())
            elif self.accept("init"):
                init = self.action()
                self.expect(";")
            elif self.at("proc"):
                t = self.peek()
                p = self.proc()
                if p.name in seen_procs:
                    raise self.error(f"duplicate procedure '{p.name}'", t)
                seen_procs.add(p.name)
                procs.append(p)
            else:
                raise self.error("expected 'varu', 'domain', 'init', 'proc' or '}'")
        return ObjectDef(name, tuple(varu), tuple(procs), init, tuple(domains))

    def domain_decl(self):
        n = self.ident().text
        self.expect(":")
        d = self.domain()
        self.expect(";")
        return (n, d)

    def proc(self) -> Procedure:
        self.expect("proc")
        name = self.ident().text
        self.expect("(")
        val = res = None
        if self.accept("val"):
            val = self.ident().text
            if self.accept(","):
                self.expect("res")
                res = self.ident().text
        elif self.accept("res"):
            res = self.ident().text
        self.expect(")")
        locals_: list[str] = []
        if self.accept("local"):
            locals_ = [t.text for t in self.names()]
        self.expect("=")
        start = len(self.uses)
        body = self.action()
        self.expect(";")
        p = Procedure(name, val, res, tuple(locals_), body)
        self.proc_uses.append((p, self.uses[start:]))
        return p

    def client_def(self) -> ClientDef:
        self.expect("client")
        name = self.ident().text
        self.expect("{")
        varo: list[str] = []
        varu: list[str] = []
        domains = []
        init: Action = Skip()
        main: Action | None = None
        while not self.accept("}"):
            if self.accept("varo"):
                varo += [t.text for t in self.names()]
                self.expect(";")
            elif self.accept("varu"):
                varu += [t.text for t in self.names()]
                self.expect(";")
            elif self.accept("domain"):
                domains.append(self.domain_decl())
            elif self.accept("init"):
                init = self.action()
                self.expect(";")
            elif self.accept("do"):
                if main is not None:
                    raise self.error("client has more than one loop")
                main = self.action()
                self.expect("od")
            else:
                raise self.error("expected 'varo', 'varu', 'domain', 'init', 'do' or '}'")
        if main is None:
            raise self.error(f"client '{name}' has no 'do ... od' loop")
        return ClientDef(name, tuple(varo), tuple(varu), init, main, tuple(domains))

    def system(self) -> Composition:
        self.expect("system")
        name = self.ident().text
        self.expect("=")
        client = self.ident().text
        self.expect("[")
        obj = self.ident().text
        self.expect("]")
        self.expect(";")
        return Composition(name, client, obj)


# ------------------------------------------------------------ semantic checks

def _first_unknown(uses, allowed: set[str], where: str, head: Token):
    for name, line, col in uses:
        if name not in allowed:
            raise DSLError(f"undeclared variable '{name}' in {where}", line, col)


def _dup(names, what: str, head: Token):
    seen = set()
    for n in names:
        if n in seen:
            raise DSLError(f"duplicate {what} '{n}'", head.line, head.col)
        seen.add(n)


def _introduced(*actions: Action) -> set[str]:
    return {n.name for a in actions for n in S.walk(a) if isinstance(n, DeclareVar)}


def check_object(obj: ObjectDef, uses, head: Token, proc_uses=()) -> None:
    _dup(obj.unobservables, "variable", head)
    shared = set(obj.unobservables) | _introduced(obj.init)
    allowed = set(obj.unobservables)
    for p, puses in proc_uses:
        own = set(p.locals) | {x for x in (p.value_param, p.result_param) if x}
        _first_unknown(puses, shared | own | _introduced(p.body), f"procedure '{p.name}'", head)
    for p in obj.procs:
        own = set(p.locals) | {x for x in (p.value_param, p.result_param) if x}
        clash = own & set(obj.unobservables)
        if clash:
            raise DSLError(f"procedure '{p.name}' parameter/local '{sorted(clash)[0]}' shadows an object variable",
                           head.line, head.col)
        _dup(list(p.locals) + [x for x in (p.value_param, p.result_param) if x], f"name in procedure '{p.name}'", head)
        allowed |= own
        for n in S.walk(p.body):
            if isinstance(n, Call):
                raise DSLError(f"procedure '{p.name}' calls '{n.proc}': nested calls are not supported",
                               head.line, head.col)
    allowed |= _introduced(obj.init, *[p.body for p in obj.procs])
    allowed |= {n for n, _ in obj.domains}
    _first_unknown(uses, allowed, f"object '{obj.name}'", head)
    for n, _ in obj.domains:
        if n not in set(obj.unobservables) | set(obj.locals) | {p.value_param for p in obj.procs if p.value_param}:
            raise DSLError(f"domain for unknown variable '{n}'", head.line, head.col)


def check_client(cl: ClientDef, uses, head: Token) -> None:
    _dup(list(cl.observables) + list(cl.unobservables), "variable", head)
    allowed = set(cl.observables) | set(cl.unobservables) | _introduced(cl.init, cl.main)
    _first_unknown(uses, allowed, f"client '{cl.name}'", head)
    for n, _ in cl.domains:
        if n not in allowed:
            raise DSLError(f"domain for unknown variable '{n}'", head.line, head.col)


def check_composition(comp: Composition, items: dict, head: Token) -> None:
    cl = items.get(comp.client)
    obj = items.get(comp.object)
    if not isinstance(cl, ClientDef):
        raise DSLError(f"unknown client '{comp.client}'", head.line, head.col)
    if not isinstance(obj, ObjectDef):
        raise DSLError(f"unknown object '{comp.object}'", head.line, head.col)
    validate_pair(cl, obj, head)


def validate_pair(cl: ClientDef, obj: ObjectDef, head: Token | None = None) -> None:
    line, col = (head.line, head.col) if head else (0, 0)
    overlap = set(cl.observables) & set(obj.unobservables)
    if overlap:
        raise DSLError(f"client observables and object variables overlap: {sorted(overlap)}", line, col)
    overlap = set(cl.unobservables) & set(obj.unobservables)
    if overlap:
        raise DSLError(f"client and object variables overlap: {sorted(overlap)}", line, col)
    for n in S.walk(cl.main):
        if isinstance(n, Call):
            try:
                p = obj.proc(n.proc)
            except KeyError:
                raise DSLError(f"unknown procedure '{n.proc}' of object '{obj.name}'", line, col) from None
            if (n.arg is None) != (p.value_param is None) or (n.result is None) != (p.result_param is None):
                raise DSLError(f"call to '{n.proc}' does not match its parameters", line, col)


def _check(module: Module, info: dict) -> None:
    names: dict[str, object] = {}
    for item in module.items:
        head, uses, proc_uses = info[id(item)]
        if item.name in names:
            raise DSLError(f"duplicate declaration '{item.name}'", head.line, head.col)
        names[item.name] = item
        if isinstance(item, ObjectDef):
            check_object(item, uses, head, proc_uses)
        elif isinstance(item, ClientDef):
            check_client(item, uses, head)
    for item in module.items:
        if isinstance(item, Composition):
            check_composition(item, names, info[id(item)][0])


# ------------------------------------------------------------------ public API

def parse_module(text: str) -> Module:
    p = _Parser(text)
    module, info = p.module()
    _check(module, info)
    return module


def parse(text: str):
    """Parse model text. A single declaration is returned bare, several as a Module."""
    m = parse_module(text)
    if len(m.items) == 1:
        return m.items[0]
    return m


def _parse_fragment(text: str, rule: str):
    p = _Parser(text)
    out = getattr(p, rule)()
    if p.tok.kind != "EOF":
        raise p.error(f"unexpected '{p.tok.text}'")
    return out


def parse_action(text: str) -> Action:
    return _parse_fragment(text, "action")


def parse_expr(text: str):
    return _parse_fragment(text, "expr")


def parse_domain(text: str) -> S.Domain:
    return _parse_fragment(text, "domain")


def pretty(node) -> str:
    return render(node)


print = pretty  # noqa: A001  (dsl.print mirrors dsl.parse)

__all__ = ["DSLError", "Token", "tokenize", "parse", "parse_module", "parse_action", "parse_expr",
           "parse_domain", "pretty", "render", "validate_pair"]
