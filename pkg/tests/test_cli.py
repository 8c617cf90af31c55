import json

import pytest

from asref.cli import EXIT, main
from asref.histories import history_records
from asref.models import names, source
from asref.values import inv, ret


def run(capsys, *argv):
    code = main(list(argv))
    cap = capsys.readouterr()
    records = [json.loads(line) for line in cap.out.splitlines() if line.startswith("{")]
    return code, records, cap.err


def test_exit_codes():
    assert EXIT == {"yes": 0, "no": 1, "yes-up-to-bound": 2, "inconclusive": 2}


@pytest.mark.parametrize("name", names())
def test_parse_bundled(capsys, tmp_path, name):
    f = tmp_path / f"{name}.as"
    f.write_text(source(name))
    code, recs, _ = run(capsys, "parse", str(f))
    assert code == 0 and recs[-1]["holds"] == "yes"


def test_parse_garbage(capsys, tmp_path):
    f = tmp_path / "bad.as"
    f.write_text("object O {\n  varu S;\n  init S := ;\n}\n")
    code, recs, err = run(capsys, "parse", str(f))
    assert code == 3
    assert recs[-1]["holds"] == "error" and "line 3" in recs[-1]["error"]
    assert "line 3" in err


def test_parse_render_round_trip(capsys, tmp_path):
    f = tmp_path / "ts.as"
    f.write_text(source("treiber_stack"))
    assert main(["parse", str(f), "--render"]) == 0
    once = capsys.readouterr().out
    g = tmp_path / "again.as"
    g.write_text(once)
    assert main(["parse", str(g), "--render"]) == 0
    assert capsys.readouterr().out == once


def test_explore_is_deterministic(capsys):
    a = run(capsys, "explore", "client_D[abstract_stack]")
    b = run(capsys, "explore", "client_D[abstract_stack]", "--jobs", "2")
    strip = [{k: v for k, v in r.items() if k != "seconds"} for r in (a[1][-1], b[1][-1])]
    assert a[0] == 0 and strip[0] == strip[1]
    assert strip[0]["states"] > 0 and strip[0]["edges"] > 0


def test_explore_one_state(capsys, tmp_path):
    f = tmp_path / "one.as"
    f.write_text("client c { varo x; init x := 0; do x = 1 -> skip od }")
    code, recs, _ = run(capsys, "explore", str(f))
    assert code == 0 and recs[-1]["states"] == 1 and recs[-1]["edges"] == 0


def test_explore_dot(capsys, tmp_path):
    f = tmp_path / "g.dot"
    code, _, _ = run(capsys, "explore", "client_fig3[abstract_stack]", "--dot", str(f))
    text = f.read_text()
    assert code == 0 and text.startswith("digraph") and text.rstrip().endswith("}")


def test_explore_bound(capsys):
    code, recs, _ = run(capsys, "explore", "client_D[treiber_stack]", "--max-states", "10")
    assert code == 2 and recs[-1]["holds"] == "inconclusive"


def test_refine_self(capsys):
    code, recs, _ = run(capsys, "refine", "client_D[abstract_stack]", "client_D[abstract_stack]")
    assert code == 0 and recs[-1]["holds"] == "yes"


def test_refine_sc_stack(capsys):
    code, recs, _ = run(capsys, "refine", "client_fig3[abstract_stack]", "client_fig3[sc_stack]")
    assert code == 1
    cx = recs[-1]["counterexample"]
    assert cx["variables"] == ["x", "y", "z"] and cx["observations"][0] == [0, 0, 0]


def test_refine_unknown_model(capsys):
    code, recs, _ = run(capsys, "refine", "client_D[abstract_stack]", "client_D[nope]")
    assert code == 3 and recs[-1]["holds"] == "error"


FIG3 = (inv(1, "push", 1), ret(1, "push"), inv(1, "push", 2), ret(1, "push"),
        inv(1, "pop"), ret(1, "pop", 1), inv(2, "pop"), ret(2, "pop", 2))


@pytest.fixture
def fig3_file(tmp_path):
    f = tmp_path / "fig3.jsonl"
    f.write_text("\n".join(history_records(FIG3)) + "\n")
    return str(f)


def test_history_simple(capsys, tmp_path):
    f = tmp_path / "h.jsonl"
    f.write_text("\n".join(history_records(FIG3[:2] + (inv(1, "pop"), ret(1, "pop", 1)))))
    code, recs, _ = run(capsys, "history", str(f), "--condition", "lin")
    assert code == 0


def test_history_fig3(capsys, fig3_file):
    code, recs, _ = run(capsys, "history", fig3_file, "--condition", "lin")
    assert code == 1 and recs[-1]["holds"] == "no"
    code, recs, _ = run(capsys, "history", fig3_file, "--condition", "sc")
    assert code == 0
    assert recs[-1]["result"]["mapping"] == {"0": 0, "1": 1, "2": 2, "3": 3, "4": 6, "5": 7, "6": 4, "7": 5}


def test_history_from_object(capsys):
    code, recs, _ = run(capsys, "history", "--from-object", "sc_stack", "--condition", "lin", "--max-history", "6")
    assert code == 1
    assert recs[-1]["failed"] > 0 and recs[-1]["failures"]


def test_history_needs_input(capsys):
    code, _, _ = run(capsys, "history")
    assert code == 3


@pytest.mark.parametrize("obj, code", [("abstract_stack", 0), ("blocking_pop", 1)])
def test_progress(capsys, obj, code):
    got, recs, _ = run(capsys, "progress", obj)
    assert got == code
    if code:
        assert recs[-1]["cycle"]


def test_progress_treiber_small(capsys):
    code, recs, _ = run(capsys, "progress", "treiber_stack", "--values", "1", "--max-history", "4")
    assert code == 0 and recs[-1]["holds"] == "yes"


def test_simulate_popless(capsys):
    code, recs, _ = run(capsys, "simulate", "popless")
    assert code == 1
    step = next(r for r in recs if r.get("obligation") == "step")
    assert step["verdict"] == "fails" and step["witnesses"]


def test_simulate_unknown(capsys):
    code, _, _ = run(capsys, "simulate", "nope")
    assert code == 3


def test_bad_flag(capsys):
    assert main(["explore", "--bogus"]) == 3
    capsys.readouterr()


def test_jobs_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("ASREF_JOBS", "2")
    code, recs, _ = run(capsys, "explore", "client_fig3[abstract_stack]")
    assert code == 0


def test_repro_qc(capsys):
    code, recs, _ = run(capsys, "repro", "thm-qc")
    assert code == 0
    assert recs[-1]["counterexample"] == [[0, 0, 0], [1, 0, 0], [1, 2, 0], [1, 2, 3]]
    assert recs[-1]["refinement"] == "no" and recs[-1]["in_abstract"] is False


def test_repro_bound_exhausted_is_inconclusive(capsys):
    code, recs, _ = run(capsys, "repro", "treiber-lin", "--max-states", "100")
    assert code == EXIT["inconclusive"] == 2
    assert recs[-1]["holds"] == "inconclusive" and "bound exhausted" in recs[-1]["error"]
