"""Command-line front end.

Every command prints one JSON record per line on stdout and a short human
summary on stderr.  Exit status: 0 holds, 1 refuted, 2 inconclusive or only
holds up to a bound, 3 usage or model error.
"""
from __future__ import annotations

import argparse
import json
import re
import sys
import time
from pathlib import Path
from typing import Sequence

from . import models
from .dsl import DSLError, parse_module, render
from .explorer import (
    DEFAULT_MAX_STATES, BoundExhausted, build_graph, observable_trace_records, observable_traces,
    resolve_jobs, to_dot,
)
from .histories import CONDITIONS, check_all, check_condition, read_history
from .kernel import ComposedSystem, EvalError, ModelError, compose
from .progress import DEFAULT_MAX_HISTORY, build_mgc, check_minimal_progress, histories_of
from .refinement import (
    check_backward_simulation, check_forward_simulation, check_trace_refinement, trace_from_tuples,
    trace_membership,
)
from .syntax import ClientDef, Composition, Module, ObjectDef, Skip
from .values import to_json

EXIT = {"yes": 0, "no": 1, "yes-up-to-bound": 2, "inconclusive": 2}
OBS = ("x", "y", "z")


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- inputs

def _module_items(ref: str) -> list:
    path = Path(ref)
    if path.suffix == ".as" or path.exists():
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as err:
            raise UsageError(f"cannot read '{ref}': {err.strerror}") from None
        try:
            return list(parse_module(text).items)
        except DSLError as err:
            raise DSLError(f"{ref}: {err.message}", err.line, err.col) from None
    try:
        return [models.load(ref)]
    except KeyError as err:
        raise UsageError(err.args[0]) from None


def load_object(ref: str) -> ObjectDef:
    objs = [x for x in _module_items(ref) if isinstance(x, ObjectDef)]
    if len(objs) != 1:
        raise UsageError(f"'{ref}' should contain exactly one object, found {len(objs)}")
    return objs[0]


def load_client(ref: str) -> ClientDef:
    cls = [x for x in _module_items(ref) if isinstance(x, ClientDef)]
    if len(cls) != 1:
        raise UsageError(f"'{ref}' should contain exactly one client, found {len(cls)}")
    return cls[0]


_PAIR = re.compile(r"^(?P<client>[^\[\]]+)\[(?P<object>[^\[\]]+)\]$")


def load_system(ref: str) -> ComposedSystem:
    """``CLIENT[OBJECT]`` with bundled names or ``.as`` paths, or a file
    holding a ``system`` declaration."""
    m = _PAIR.match(ref.strip())
    if m:
        sys_ = compose(load_client(m["client"]), load_object(m["object"]))
        sys_.name = ref
        return sys_
    items = _module_items(ref)
    comps = [x for x in items if isinstance(x, Composition)]
    byname = {x.name: x for x in items if not isinstance(x, Composition)}
    if comps:
        c = comps[0]
        sys_ = compose(byname[c.client], byname[c.object])
        sys_.name = c.name
        return sys_
    cls = [x for x in items if isinstance(x, ClientDef)]
    objs = [x for x in items if isinstance(x, ObjectDef)]
    if len(cls) == 1 and len(objs) == 1:
        return compose(cls[0], objs[0])
    if len(cls) == 1 and not objs:
        return compose(cls[0], ObjectDef("None", (), (), Skip()))
    raise UsageError(f"'{ref}' does not name a system; use CLIENT[OBJECT] or a file with a 'system' line")


def _values(text: str | None):
    if not text:
        return None
    out = []
    for part in text.split(","):
        part = part.strip()
        out.append(int(part) if re.fullmatch(r"-?\d+", part) else part.lstrip("'"))
    return tuple(out)


# ---------------------------------------------------------------- output

class Out:
    def __init__(self, stream=None, err=None):
        self.stream = stream or sys.stdout
        self.err = err or sys.stderr

    def record(self, rec: dict) -> None:
        self.stream.write(json.dumps(rec, sort_keys=True, default=str) + "\n")

    def say(self, text: str) -> None:
        self.err.write(text + "\n")


def verdict(command: str, inputs: dict, holds: str, bounds: dict, t0: float, **payload) -> dict:
    rec = {"command": command, "inputs": inputs, "holds": holds, "bounds": bounds,
           "seconds": round(time.perf_counter() - t0, 3)}
    rec.update(payload)
    return rec


# --------------------------------------------------------------- commands

def cmd_parse(args, out: Out) -> int:
    t0 = time.perf_counter()
    items = _module_items(args.file)
    if args.render:
        out.stream.write(render(Module(tuple(items))) + "\n")
        return 0
    out.record(verdict("parse", {"file": args.file}, "yes", {}, t0,
                       items=[{"kind": type(x).__name__, "name": x.name} for x in items]))
    out.say(f"parsed {len(items)} declaration(s) from {args.file}")
    return 0


def cmd_explore(args, out: Out) -> int:
    t0 = time.perf_counter()
    if args.mgc:
        sys_ = build_mgc(load_object(args.system), max_history=args.max_history,
                         values=_values(args.values), stop=not args.no_stop)
    else:
        sys_ = load_system(args.system)
    bounds = {"max_states": args.max_states}
    try:
        g = build_graph(sys_, args.max_states, args.jobs)
    except BoundExhausted as err:
        out.record(verdict("explore", {"system": args.system}, "inconclusive", bounds, t0, detail=str(err)))
        out.say(str(err))
        return 2
    stats = {"states": len(g), "edges": g.edge_count, "initial": len(g.initial),
             "terminal": len(g.terminal()), "bound_hit": len(g.bound_hit)}
    payload = dict(stats)
    if args.max_depth:
        bounds["max_depth"] = args.max_depth
        traces = sorted(observable_traces(g, args.max_depth), key=str)
        payload["observable_traces"] = len(traces)
        payload["complete"] = sum(1 for t in traces if not t.prefix)
    if args.dot:
        Path(args.dot).write_text(to_dot(g), encoding="utf-8")
        payload["dot"] = args.dot
    holds = "yes-up-to-bound" if g.bound_hit else "yes"
    out.record(verdict("explore", {"system": args.system}, holds, bounds, t0, **payload))
    if args.max_depth and args.traces:
        for t in traces:
            for line in observable_trace_records(t):
                out.stream.write(line + "\n")
    out.say(f"{sys_.name}: {len(g)} states, {g.edge_count} edges, {stats['terminal']} terminal")
    return 0


def cmd_refine(args, out: Out) -> int:
    t0 = time.perf_counter()
    a, c = load_system(args.abstract), load_system(args.concrete)
    v = check_trace_refinement(a, c, args.max_states, args.jobs)
    names = sorted(a.observables)
    rec = v.as_record(names)
    del rec["holds"]
    out.record(verdict("refine", {"abstract": args.abstract, "concrete": args.concrete}, v.holds,
                       rec.pop("bounds"), t0, **rec))
    if v.counterexample is not None:
        out.say(f"refinement fails ({v.reason}): {v.counterexample}")
    else:
        out.say(f"refinement {v.holds}")
    return EXIT[v.holds]


def cmd_simulate(args, out: Out) -> int:
    from .models.relations import SETUPS
    t0 = time.perf_counter()
    if args.setup not in SETUPS:
        raise UsageError(f"unknown setup '{args.setup}'; choose from {', '.join(sorted(SETUPS))}")
    st = SETUPS[args.setup]()
    fn = check_forward_simulation if st.kind == "forward" else check_backward_simulation
    rep = fn(st.abstract, st.concrete, st.relation, max_states=args.max_states, jobs=args.jobs, **st.options)
    for line in rep.records():
        out.stream.write(line + "\n")
    out.record(verdict("simulate", {"setup": args.setup, "kind": rep.kind, "abstract": rep.abstract,
                                    "concrete": rep.concrete, "relation": rep.relation},
                       rep.holds, {"max_states": args.max_states, **st.options}, t0,
                       failed=rep.failed(), stats=rep.stats))
    out.say(f"{rep.kind} simulation {rep.abstract} / {rep.concrete}: {rep.holds}"
            + (f" (failed: {', '.join(rep.failed())})" if rep.failed() else ""))
    return EXIT[rep.holds]


def cmd_history(args, out: Out) -> int:
    t0 = time.perf_counter()
    spec = load_object(args.spec)
    bounds = {"node_budget": args.node_budget}
    if args.from_object:
        bounds["max_history"] = args.max_history
        g = build_graph(build_mgc(load_object(args.from_object), max_history=args.max_history,
                                  values=_values(args.values), stop=False), args.max_states, args.jobs)
        hs = histories_of(g)
        res = check_all(hs, spec, args.condition, args.node_budget)
        holds = "no" if res["no"] else "inconclusive" if res["inconclusive"] else "yes"
        fails = [f.as_record() for f in res["failures"][:args.max_failures]]
        out.record(verdict("history", {"object": args.from_object, "spec": args.spec,
                                       "condition": args.condition}, holds, bounds, t0,
                           checked=res["checked"], passed=res["yes"], failed=res["no"],
                           inconclusive=res["inconclusive"], failures=fails))
        out.say(f"{res['checked']} histories: {res['yes']} pass, {res['no']} fail, "
                f"{res['inconclusive']} inconclusive ({args.condition})")
        return EXIT[holds]
    if not args.file:
        raise UsageError("give a history file or --from-object")
    try:
        with open(args.file, encoding="utf-8") as fh:
            h = read_history(fh)
    except OSError as err:
        raise UsageError(f"cannot read '{args.file}': {err.strerror}") from None
    except ValueError as err:
        raise UsageError(f"{args.file}: {err}") from None
    res = check_condition(h, spec, args.condition, args.node_budget)
    out.record(verdict("history", {"file": args.file, "spec": args.spec, "condition": args.condition},
                       res.verdict, bounds, t0, result=res.as_record()))
    out.say(f"{args.condition}: {res.verdict}")
    return EXIT[res.verdict]


def cmd_progress(args, out: Out) -> int:
    t0 = time.perf_counter()
    obj = load_object(args.object)
    rep = check_minimal_progress(obj, max_history=args.max_history, max_states=args.max_states,
                                 jobs=args.jobs, values=_values(args.values))
    holds = {"SATISFIED": "yes", "VIOLATED": "no"}.get(rep.verdict, "inconclusive")
    payload = {"verdict": rep.verdict, "states": rep.states, "edges": rep.edges}
    if rep.cycle:
        payload["path"] = [_state(s) for s in rep.path]
        payload["cycle"] = [_state(s) for s in rep.cycle]
    if rep.detail:
        payload["detail"] = rep.detail
    out.record(verdict("progress", {"object": args.object}, holds,
                       {"max_history": args.max_history, "max_states": args.max_states,
                        "values": _values(args.values)}, t0, **payload))
    out.say(f"minimal progress of {obj.name}: {rep.verdict}")
    return EXIT[holds]


def _state(s) -> dict:
    return {k: to_json(s[k]) for k in s}


# ------------------------------------------------------------------ repro

EX1_TRACE = [(0, 0, 0), (0, 1, 0), (2, 1, 0), (2, 1, 1)]
# T1, T2, U1, T3, U2 each run to completion
EX1_SCHEDULE = [(0, 0, 0), (0, 2, 0), (1, 2, 0), (1, 2, 1)]
SC_TRACE = [(0, 0, 0), (1, 0, 0), (1, 0, 1), (1, 2, 1)]
QC_TRACE = [(0, 0, 0), (1, 0, 0), (1, 2, 0), (1, 2, 3)]


def repro_ex1(args) -> dict:
    t = trace_from_tuples(OBS, EX1_TRACE)
    s = trace_from_tuples(OBS, EX1_SCHEDULE)
    res = {}
    for obj in ("abstract_stack", "treiber_stack"):
        g = build_graph(models.system("client_D", obj), args.max_states, args.jobs)
        res[obj] = {"trace": trace_membership(g, t), "schedule_trace": trace_membership(g, s)}
    ok = all(r["trace"] for r in res.values())
    return {"holds": "yes" if ok else "no", "trace": EX1_TRACE, "schedule_trace": EX1_SCHEDULE,
            "membership": res}


def _repro_counterexample(args, client: str, obj: str, rows) -> dict:
    a, c = models.system(client, "abstract_stack"), models.system(client, obj)
    ga, gc = build_graph(a, args.max_states, args.jobs), build_graph(c, args.max_states, args.jobs)
    v = check_trace_refinement(ga, gc)
    target = trace_from_tuples(OBS, rows)
    in_conc, in_abs = trace_membership(gc, target), trace_membership(ga, target)
    reproduced = v.holds == "no" and in_conc and not in_abs
    rec = {"holds": "yes" if reproduced else "no", "refinement": v.holds,
           "trace": rows, "in_concrete": in_conc, "in_abstract": in_abs}
    found = None
    if v.counterexample is not None:
        found = [list(map(to_json, r)) for r in v.counterexample.tuples(OBS)]
        rec["first_counterexample"] = found
    if reproduced:
        rec["counterexample"] = rows
    elif found is not None:
        rec["counterexample"] = found
        rec["note"] = "refinement fails, but the stated trace is not a refuting trace"
    return rec


def repro_sc(args) -> dict:
    return _repro_counterexample(args, "client_fig3", "sc_stack", SC_TRACE)


def repro_qc(args) -> dict:
    return _repro_counterexample(args, "client_fig4", "qc_stack", QC_TRACE)


def repro_canonical(args) -> dict:
    from .models.relations import canonical_forward
    st = canonical_forward()
    rep = check_forward_simulation(st.abstract, st.concrete, st.relation, max_states=args.max_states, jobs=args.jobs)
    clients = {}
    for cl in models.CLIENTS:
        v = check_trace_refinement(models.system(cl, "abstract_stack"), models.system(cl, "canonical_AS"),
                                   args.max_states, args.jobs)
        clients[cl] = v.holds
    parts = [rep.holds] + list(clients.values())
    holds = "no" if "no" in parts else "yes-up-to-bound" if "yes-up-to-bound" in parts else "yes"
    return {"holds": holds, "simulation": rep.holds,
            "obligations": {o.id: {"holds": o.holds, "checked": o.checked, "skipped_at_bound": o.skipped}
                            for o in rep.obligations},
            "clients": clients}


def repro_treiber(args) -> dict:
    values = _values(args.values) or (1, 2)
    obj = models.load("treiber_stack")
    g = build_graph(build_mgc(obj, max_history=DEFAULT_MAX_HISTORY, values=values, stop=False),
                    args.max_states, args.jobs)
    hs = histories_of(g)
    lin = check_all(hs, models.load("abstract_stack"), "lin")
    prog = check_minimal_progress(obj, graph=g)
    del g
    clients = {}
    for cl in models.CLIENTS:
        v = check_trace_refinement(models.system(cl, "abstract_stack"), models.system(cl, "treiber_stack"),
                                   args.max_states, args.jobs)
        clients[cl] = {"holds": v.holds}
        if v.counterexample is not None:
            clients[cl]["counterexample"] = [list(map(to_json, r)) for r in v.counterexample.tuples(OBS)]
    lin_ok = lin["no"] == 0 and lin["inconclusive"] == 0
    ok = lin_ok and prog.satisfied and all(c["holds"] == "yes" for c in clients.values())
    return {"holds": "yes" if ok else "no", "values": list(values),
            "histories": lin["checked"], "linearizable": lin["yes"], "minimal_progress": prog.verdict,
            "clients": clients}


REPRO = {"ex1": repro_ex1, "thm-sc": repro_sc, "thm-qc": repro_qc,
         "canonical": repro_canonical, "treiber-lin": repro_treiber}
# the Treiber MGC at default bounds has about 617k states
REPRO_STATES = {"treiber-lin": 1_000_000}


def cmd_repro(args, out: Out) -> int:
    t0 = time.perf_counter()
    if args.max_states is None:
        args.max_states = REPRO_STATES.get(args.target, DEFAULT_MAX_STATES)
    res = REPRO[args.target](args)
    holds = res.pop("holds")
    out.record(verdict("repro", {"target": args.target}, holds, {"max_states": args.max_states}, t0, **res))
    out.say(f"repro {args.target}: {holds}")
    return EXIT[holds]


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asref", description="Explicit-state checks for action-system models "
                                "of concurrent objects and their clients.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--max-states", type=int, default=DEFAULT_MAX_STATES, help="state-count limit per graph")
        sp.add_argument("--jobs", type=int, default=None,
                        help="worker processes for graph construction (default: $ASREF_JOBS or 1)")

    sp = sub.add_parser("parse", help="parse and check a model file")
    sp.add_argument("file")
    sp.add_argument("--render", action="store_true", help="print the normalised source instead of a record")
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("explore", help="build a transition graph")
    sp.add_argument("system", help="CLIENT[OBJECT], a file with a system line, or an object with --mgc")
    sp.add_argument("--mgc", action="store_true", help="explore the most general client of an object")
    sp.add_argument("--no-stop", action="store_true", help="leave the stop flag out of the most general client")
    sp.add_argument("--max-history", type=int, default=DEFAULT_MAX_HISTORY)
    sp.add_argument("--values", help="argument values for --mgc, comma separated")
    sp.add_argument("--max-depth", type=int, default=0, help="also enumerate traces up to this length")
    sp.add_argument("--traces", action="store_true", help="print the observable traces (needs --max-depth)")
    sp.add_argument("--dot", help="write the graph in DOT format to this file")
    common(sp)
    sp.set_defaults(func=cmd_explore)

    sp = sub.add_parser("refine", help="check trace refinement between two systems")
    sp.add_argument("abstract")
    sp.add_argument("concrete")
    common(sp)
    sp.set_defaults(func=cmd_refine)

    sp = sub.add_parser("simulate", help="check a bundled simulation setup")
    sp.add_argument("setup", help="canonical, popless, livelock, treiber or treiber-forward")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("history", help="check histories against a correctness condition")
    sp.add_argument("file", nargs="?", help="history as line-delimited event records")
    sp.add_argument("--from-object", help="check every history of this object's most general client")
    sp.add_argument("--spec", default="abstract_stack")
    sp.add_argument("--condition", choices=CONDITIONS, default="lin")
    sp.add_argument("--node-budget", type=int, default=200_000)
    sp.add_argument("--max-history", type=int, default=DEFAULT_MAX_HISTORY)
    sp.add_argument("--values", help="argument values for --from-object, comma separated")
    sp.add_argument("--max-failures", type=int, default=5)
    common(sp)
    sp.set_defaults(func=cmd_history)

    sp = sub.add_parser("progress", help="check minimal progress")
    sp.add_argument("object")
    sp.add_argument("--max-history", type=int, default=DEFAULT_MAX_HISTORY)
    sp.add_argument("--values", help="argument values, comma separated")
    common(sp)
    sp.set_defaults(func=cmd_progress)

    sp = sub.add_parser("repro", help="reproduce a bundled result")
    sp.add_argument("target", choices=sorted(REPRO))
    sp.add_argument("--values", help="argument values for treiber-lin (default 1,2)")
    common(sp)
    sp.set_defaults(max_states=None)
    sp.set_defaults(func=cmd_repro)
    return p


def main(argv: Sequence[str] | None = None, out: Out | None = None) -> int:
    out = out or Out()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 3
    args.jobs = resolve_jobs(getattr(args, "jobs", None))
    try:
        return args.func(args, out)
    except (UsageError, DSLError, ModelError, EvalError, KeyError) as err:
        msg = str(err) if not isinstance(err, KeyError) else err.args[0]
        out.record({"command": args.command, "holds": "error", "error": msg})
        out.say(f"error: {msg}")
        return 3
    except BoundExhausted as err:
        out.record({"command": args.command, "holds": "inconclusive", "error": str(err)})
        out.say(str(err))
        return 2


if __name__ == "__main__":
    sys.exit(main())
