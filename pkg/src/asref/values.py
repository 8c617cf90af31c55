"""Value universe primitives: bottom, events, ordering and formatting."""
from __future__ import annotations

from typing import Any, NamedTuple


class _Bottom:
    __slots__ = ()
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "BOT"

    def __reduce__(self):
        return (_Bottom, ())


BOT = _Bottom()


class Event(NamedTuple):
    kind: str  # "inv" | "ret"
    thread: int
    op: str
    value: Any = BOT

    @property
    def is_inv(self) -> bool:
        return self.kind == "inv"

    @property
    def is_ret(self) -> bool:
        return self.kind == "ret"

    def __str__(self) -> str:
        return f"{self.kind}({self.thread}, {self.op}, {format_value(self.value)})"


def inv(thread: int, op: str, value: Any = BOT) -> Event:
    return Event("inv", thread, op, value)


def ret(thread: int, op: str, value: Any = BOT) -> Event:
    return Event("ret", thread, op, value)


def value_key(v: Any) -> tuple:
    """Total order over heterogeneous values, used for canonical state order."""
    if v is BOT:
        return (0,)
    if isinstance(v, bool):
        return (1, v)
    if isinstance(v, int):
        return (2, v)
    if isinstance(v, str):
        return (3, v)
    if isinstance(v, Event):
        return (4, v.kind, v.thread, v.op, value_key(v.value))
    if isinstance(v, tuple):
        return (5, len(v), tuple(value_key(x) for x in v))
    raise TypeError(f"not a model value: {v!r}")


def format_value(v: Any) -> str:
    if v is BOT:
        return "bot"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return "'" + v
    if isinstance(v, Event):
        return f"{v.kind}({v.thread}, '{v.op}, {format_value(v.value)})"
    if isinstance(v, tuple):
        return "<" + ", ".join(format_value(x) for x in v) + ">"
    raise TypeError(f"not a model value: {v!r}")


def to_json(v: Any) -> Any:
    """JSON-friendly rendering; symbols stay strings, bottom becomes null."""
    if v is BOT:
        return None
    if isinstance(v, Event):
        return {"kind": v.kind, "thread": v.thread, "op": v.op, "value": to_json(v.value)}
    if isinstance(v, tuple):
        return [to_json(x) for x in v]
    return v


def from_json(v: Any) -> Any:
    if v is None:
        return BOT
    if isinstance(v, dict):
        return Event(v["kind"], int(v["thread"]), v["op"], from_json(v.get("value")))
    if isinstance(v, list):
        return tuple(from_json(x) for x in v)
    return v
