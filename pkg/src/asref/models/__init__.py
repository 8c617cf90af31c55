"""Bundled ``.as`` models: stacks, clients and mutants."""
from __future__ import annotations

from functools import lru_cache
from importlib import resources

from ..dsl import parse, render
from ..kernel import ComposedSystem, ModelError, compose
from ..syntax import ClientDef, ObjectDef

OBJECTS = ("abstract_stack", "treiber_stack", "sc_stack", "qc_stack", "canonical_AS",
           "blocking_pop", "livelock_pop", "popless")
CLIENTS = ("client_D", "client_fig3", "client_fig4")
MUTANTS = ("blocking_pop", "livelock_pop", "popless")
GENERATED = {"canonical_AS": "abstract_stack"}


def names() -> list[str]:
    return sorted(OBJECTS + CLIENTS)


def source(name: str) -> str:
    if name not in OBJECTS + CLIENTS:
        raise KeyError(f"unknown model '{name}'; bundled models: {', '.join(names())}")
    return resources.files(__package__).joinpath(f"{name}.as").read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def load(name: str) -> ObjectDef | ClientDef:
    """Parse and validate a bundled model by name."""
    return parse(source(name))


def generate_canonical_source() -> str:
    from ..progress import canonicalize
    return ("// Generated: three-step canonical form of the abstract stack.\n"
            + render(canonicalize(load("abstract_stack"))))


def system(client: str | ClientDef, obj: str | ObjectDef) -> ComposedSystem:
    c = load(client) if isinstance(client, str) else client
    o = load(obj) if isinstance(obj, str) else obj
    if not isinstance(c, ClientDef) or not isinstance(o, ObjectDef):
        raise ModelError("system() needs a client and an object")
    return compose(c, o)
