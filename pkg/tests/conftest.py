from __future__ import annotations

import pytest

from asref.dsl import parse
from asref.explorer import build_graph
from asref.kernel import ComposedSystem, compose
from asref.syntax import ObjectDef, Skip

EMPTY_OBJECT = ObjectDef("None", (), (), Skip())


def standalone(text: str) -> ComposedSystem:
    """Compose a call-free client with an empty object."""
    return compose(parse(text), EMPTY_OBJECT)


def graph_of(text: str):
    return build_graph(standalone(text))


@pytest.fixture(scope="session")
def graphs():
    """Lazily built, shared transition graphs keyed by ``CLIENT[OBJECT]``."""
    from asref.models import system

    cache: dict = {}

    def get(client: str, obj: str):
        key = (client, obj)
        if key not in cache:
            cache[key] = build_graph(system(client, obj))
        return cache[key]

    return get


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if not mod or not mod.RESULTS:
        return
    terminalreporter.section("acceptance")
    for n, (ok, detail) in sorted(mod.RESULTS.items()):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
