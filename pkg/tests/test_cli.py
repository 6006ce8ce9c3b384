import csv
import io
import subprocess
import sys

import pytest

from wfqueue.bench import CSV_COLUMNS, BenchConfig, run_native, table_rows
from wfqueue.cli import main
from wfqueue.harness import RandomSchedule, make_programs, run_schedule
from wfqueue.history import History


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue()


# -- bench ---------------------------------------------------------------------


def test_bench_csv_schema(tmp_path):
    path = tmp_path / "m.csv"
    code, _ = run("bench", "--p", "1", "2", "--ops", "30", "--out", str(path))
    assert code == 0
    rows = list(csv.DictReader(path.open()))
    assert tuple(rows[0].keys()) == CSV_COLUMNS
    assert {r["p"] for r in rows} == {"1", "2"}
    for r in rows:
        assert r["op_kind"] in ("enq", "deq", "deq_null")
        assert float(r["max_steps"]) >= float(r["mean_steps"]) > 0
        assert int(r["max_cas"]) >= float(r["mean_cas"]) >= 1
        assert float(r["throughput"]) > 0


def test_bench_to_stdout_bounded():
    code, text = run("bench", "--p", "2", "--ops", "20", "--variant", "bounded", "--gc-constant", "2")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(text)))
    assert rows and all(r["variant"] == "bounded" for r in rows)
    assert all(int(r["max_container"]) <= 2 * 40 + 4 * 2 + 1 + 2 for r in rows)


def test_bench_rejects_bad_arguments():
    with pytest.raises(SystemExit) as exc:
        run("bench", "--p", "0")
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        run("bench", "--enq-fraction", "1.5")


def test_bench_prefill_counts_separately():
    r = run_native(BenchConfig(processes=2, ops=10, prefill=25, enq_fraction=0.0, seed=1))
    assert len(r.prefill_ops) == 25 and len(r.ops) == 20
    rows = table_rows(r)
    assert {row["op_kind"] for row in rows} == {"deq"}  # the prefix covers every dequeue
    assert r.history.events[0].arg == "pre.1"


def test_uncontended_enqueue_cas():
    r = run_native(BenchConfig(processes=1, ops=50, enq_fraction=1.0))
    (row,) = table_rows(r)
    assert row["mean_cas"] == 4 and row["max_cas"] == 4


# -- simulate ------------------------------------------------------------------


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", "--p", "3", "--ops", "4", "--seed", "9", "--out", str(a))[0] == 0
    assert run("simulate", "--p", "3", "--ops", "4", "--seed", "9", "--out", str(b))[0] == 0
    assert (a / "history-9.jsonl").read_text() == (b / "history-9.jsonl").read_text()
    assert (a / "metrics-9.txt").read_text() == (b / "metrics-9.txt").read_text()
    h = History.load((a / "history-9.jsonl").open())
    assert len(h) == 12


def test_simulate_many_runs_summary():
    code, text = run("simulate", "--p", "3", "--ops", "3", "--runs", "25", "--variant", "bounded", "--gc-constant", "1")
    assert code == 0 and "25/25 runs passed" in text


def test_simulate_adversarial():
    code, text = run("simulate", "--p", "4", "--ops", "2", "--runs", "10", "--schedule", "adversarial")
    assert code == 0 and "10/10" in text


def test_simulate_exhaustive_small():
    code, text = run("simulate", "--exhaustive", "--p", "2", "--ops", "1", "--all-programs")
    assert code == 0
    assert text.startswith("9 program set(s)") and "all pass" in text


@pytest.mark.parametrize("mutant", ["single-refresh", "no-help-advance"])
def test_simulate_mutant_fails_with_replay(mutant):
    code, text = run("simulate", "--exhaustive", "--p", "2", "--ops", "2", "--mutant", mutant, "--all-programs")
    assert code == 1 and "FAIL" in text and "schedule:" in text


def test_replay_hint_reproduces_failure():
    code, text = run("simulate", "--exhaustive", "--p", "2", "--ops", "2", "--seed", "0", "--mutant", "no-help-advance",
                     "--enq-fraction", "0.5")
    if code == 0:
        pytest.skip("this program set does not expose the mutant")
    hint = next(line for line in text.splitlines() if line.startswith("replay: "))
    argv = hint.split()[2:]
    code2, text2 = run(*argv)
    assert code2 == 1 and "FAIL" in text2


def test_simulate_bad_replay_is_input_error():
    code, _ = run("simulate", "--p", "2", "--ops", "1", "--replay", "5")
    assert code == 2


# -- check ---------------------------------------------------------------------


def _history_file(tmp_path, seed=0):
    r = run_schedule(make_programs(3, 3, 0.5, seed), RandomSchedule(seed))
    path = tmp_path / "h.jsonl"
    path.write_text(r.history.dumps())
    return path, r.history


def test_check_accepts(tmp_path):
    path, _ = _history_file(tmp_path)
    assert run("check", str(path)) == (0, "accept\n")


def test_check_rejects(tmp_path):
    path, h = _history_file(tmp_path, seed=2)
    deq = next(e for e in h.events if e.kind == "deq")
    deq.response = "never"
    path.write_text(h.dumps())
    code, text = run("check", str(path))
    assert code == 1 and text.startswith("reject: ")


def test_check_truncated_file(tmp_path):
    path, _ = _history_file(tmp_path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    assert run("check", str(path))[0] == 2


def test_check_missing_file(tmp_path):
    assert run("check", str(tmp_path / "nope.jsonl"))[0] == 2


def test_module_entry_point(tmp_path):
    path, _ = _history_file(tmp_path)
    proc = subprocess.run([sys.executable, "-m", "wfqueue", "check", str(path)], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == "accept\n"
