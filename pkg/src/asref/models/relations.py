"""Simulation relations for the bundled stacks."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..kernel import State
from ..progress import canonicalize, result_var
from ..refinement import SimRelation
from ..syntax import ObjectDef, SeqDomain
from ..values import BOT
from . import load

THREADS = (1, 2)


@dataclass
class SimSetup:
    """Everything a simulation check needs."""

    kind: str  # "forward" | "backward"
    abstract: ObjectDef
    concrete: ObjectDef
    relation: SimRelation
    options: dict = field(default_factory=dict)


def _results(s: State) -> tuple:
    return tuple(s.get(result_var(t), BOT) for t in THREADS)


def _data_key(s: State) -> tuple:
    return (s["S"],) + _results(s)


def stack_data() -> SimRelation:
    """Equal stack contents and equal per-thread results."""
    return SimRelation.from_keys(_data_key, _data_key, "S and results equal")


def _history_key(s: State) -> tuple:
    return (s["S"], s["H"]) + _results(s)


def stack_history() -> SimRelation:
    """Equal stack contents, results and recorded histories."""
    return SimRelation.from_keys(_history_key, _history_key, "S, H and results equal")


def canonical_forward() -> SimSetup:
    return SimSetup("forward", load("abstract_stack"), load("canonical_AS"), stack_data())


def popless_forward() -> SimSetup:
    # results alone can be matched by a pop followed by a push, the history cannot
    return SimSetup("forward", load("abstract_stack"), load("popless"), stack_history(),
                    {"history": True, "max_history": 8})


def livelock_forward() -> SimSetup:
    return SimSetup("forward", load("abstract_stack"), load("livelock_pop"), stack_data())


# ----------------------------------------------------------------- Treiber

def with_capacity(obj: ObjectDef, var: str, max_len: int) -> ObjectDef:
    doms = tuple((n, replace(d, maxlen=max_len) if n == var and isinstance(d, SeqDomain) else d)
                 for n, d in obj.domains)
    return replace(obj, domains=doms)


def chain(s: State) -> tuple:
    """Values of the nodes reachable from Head."""
    out = []
    n = s["Head"]
    seen = set()
    while n != "null" and n not in seen:
        seen.add(n)
        out.append(s["value"][n])
        n = s["next"][n]
    return tuple(out)


_PUSH_BEFORE = {"H1", "H2", "H3", "H4", "H5"}
_POP_BEFORE = {"P1", "P4", "P5", "P6"}


def treiber_abstraction(s: State) -> dict:
    """The canonical-stack state a Treiber state stands for.

    A push takes effect at its successful CAS, a pop at its successful CAS
    or at reading an empty Head.
    """
    a = {"S": chain(s), "ninv": s["ninv"]}
    for t in THREADS:
        r = result_var(t)
        a[r] = s[r]
        pc = s.get(f"pc_{t}")
        if pc is None:
            continue
        if pc in _PUSH_BEFORE or pc == "H6":
            a[f"pc_{t}"] = "push1" if pc in _PUSH_BEFORE else "push2"
            a[f"a_{t}"] = s[f"v_{t}"]
        elif pc in _POP_BEFORE or (pc == "P2" and s[f"ss_{t}"] != "null"):
            a[f"pc_{t}"] = "pop1"
        else:
            # P2 after reading null, P3 or P7: the pop has taken effect and
            # the canonical stack has already written its result
            a[f"pc_{t}"] = "pop2"
            a[r] = "empty" if pc in ("P2", "P3") else s[f"lv_{t}"]
    return a


def treiber_to_abstract(s: State) -> dict:
    """The sequential-stack state: operations that have not taken effect yet
    are not counted as invoked."""
    c = treiber_abstraction(s)
    waiting = sum(1 for t in THREADS if c.pop(f"pc_{t}", None) in ("push1", "pop1"))
    c.pop("a_1", None)
    c.pop("a_2", None)
    c["ninv"] -= waiting
    return c


def treiber_forward(values=(1, 2), budget: int = 4) -> SimSetup:
    return SimSetup("forward", with_capacity(load("abstract_stack"), "S", 4), load("treiber_stack"),
                    SimRelation.from_abstraction(treiber_to_abstract, "S is the Head chain"),
                    {"values": tuple(values), "budget": budget})


def treiber_backward(values=(1, 2), budget: int = 4) -> SimSetup:
    # the Treiber model allocates at most four nodes, so its chain can be four deep
    abstract = with_capacity(canonicalize(load("abstract_stack")), "S", 4)
    return SimSetup("backward", abstract, load("treiber_stack"),
                    SimRelation.from_abstraction(treiber_abstraction, "Treiber abstraction"),
                    {"values": tuple(values), "budget": budget})


SETUPS = {
    "canonical": canonical_forward,
    "popless": popless_forward,
    "livelock": livelock_forward,
    "treiber": treiber_backward,
    "treiber-forward": treiber_forward,
}
