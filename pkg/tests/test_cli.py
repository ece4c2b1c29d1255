import json
import subprocess
import sys

import pytest

from decprov.cli import main
from decprov.provlog import ProvLog


def run(*argv, env=None):
    return subprocess.run([sys.executable, "-m", "decprov", *argv], capture_output=True,
                          text=True, env=env)


@pytest.fixture(scope="module")
def simlog(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    out, trace = d / "city.jsonl", d / "trace.jsonl"
    assert main(["simulate", "--out", str(out), "--trace-out", str(trace)]) == 0
    return out


def _json(capsys, *argv):
    capsys.readouterr()
    assert main(list(argv)) == 0
    return json.loads(capsys.readouterr().out)


def test_verify_ok(simlog, capsys):
    assert main(["verify", "--log", str(simlog)]) == 0
    assert capsys.readouterr().out.strip() == "ok"


def test_verify_tampered_exits_1(simlog, tmp_path, capsys):
    text = simlog.read_text().replace('"role":"component"', '"role":"c0mponent"', 1)
    bad = tmp_path / "bad.jsonl"
    bad.write_text(text)
    assert main(["verify", "--log", str(bad)]) == 1
    out = capsys.readouterr()
    assert "5" in out.out + out.err


def test_simulate_is_deterministic(simlog, tmp_path):
    other = tmp_path / "again.jsonl"
    assert main(["simulate", "--out", str(other)]) == 0
    assert other.read_bytes() == simlog.read_bytes()


def test_trace_json_lists_three_immediate_sources(simlog, capsys):
    log = ProvLog.load(simlog)
    snap = log.snapshot()
    from decprov.sim.investigate import thread_root
    root = thread_root(snap, "ambulance")
    doc = _json(capsys, "trace", "--log", str(simlog), "--id", root, "--format", "json")
    cats = sorted(snap.get_node(n).attrs["category"] for n in doc["immediate"])
    assert cats == ["congestion_report", "density_report", "historic_summary"]
    assert root in doc["nodes"]


def test_json_outputs_parse(simlog, capsys):
    from decprov.sim import bundled_path
    from decprov.sim.investigate import thread_root
    root = thread_root(ProvLog.load(simlog).snapshot(), "lighting")
    for argv in (["actors", "--id", root], ["flows", "--id", root],
                 ["report", "--id", root, "--audience", "user"],
                 ["art30", "--controller", "EmerSolutions"],
                 ["audit", "--rules", str(bundled_path("rules.json"))]):
        doc = _json(capsys, *argv, "--log", str(simlog), "--format", "json")
        assert doc is not None


def test_dot_output(simlog, capsys):
    from decprov.sim.investigate import thread_root
    root = thread_root(ProvLog.load(simlog).snapshot(), "driver")
    assert main(["trace", "--log", str(simlog), "--id", root, "--format", "dot"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("digraph") and root in out


def test_investigate_records_and_no_record(simlog, tmp_path, capsys):
    copy = tmp_path / "copy.jsonl"
    copy.write_bytes(simlog.read_bytes())
    n = len(copy.read_text().splitlines())
    doc = _json(capsys, "investigate", "--log", str(copy), "--thread", "ambulance",
                "--no-record", "--format", "json")
    assert len(copy.read_text().splitlines()) == n
    assert {f["cause"] for f in doc["findings"]} == {"overdue-process", "faulty-release"}
    _json(capsys, "investigate", "--log", str(copy), "--thread", "ambulance", "--format", "json")
    assert len(copy.read_text().splitlines()) > n
    assert main(["verify", "--log", str(copy)]) == 0


def test_ingest_with_policy(tmp_path, capsys):
    from decprov.sim import bundled_path
    log = tmp_path / "ingest.jsonl"
    src = tmp_path / "in.jsonl"
    src.write_text(
        json.dumps({"kind": "Agent", "timestamp": "2024-01-01T00:00:00.000Z",
                    "attrs": {"name": "A"}}) + "\n" +
        json.dumps({"kind": "Entity", "timestamp": "2024-01-01T00:00:01.000Z",
                    "attrs": {"pd": "true", "email": "x@example.org"},
                    "personal": ["email"]}) + "\n")
    doc = _json(capsys, "ingest", "--log", str(log), "--input", str(src),
                "--policy", str(bundled_path("redaction-policy.json")), "--format", "json")
    assert [r["action"] for r in doc] == ["record_full", "redact"]
    assert "x@example.org" not in log.read_text()
    assert main(["verify", "--log", str(log)]) == 0


def test_expire_refuses_to_overwrite(simlog, tmp_path):
    from decprov.sim import bundled_path
    pol = str(bundled_path("redaction-policy.json"))
    out = tmp_path / "exp.jsonl"
    assert main(["expire", "--log", str(simlog), "--policy", pol, "--out", str(out)]) == 0
    assert main(["expire", "--log", str(simlog), "--policy", pol, "--out", str(out)]) == 1
    assert main(["verify", "--log", str(out)]) == 0


@pytest.mark.parametrize("argv,code", [
    (["verify"], 2),                                   # no log given
    (["trace", "--log", "x.jsonl"], 2),                # missing --id
    (["frobnicate"], 2),
    (["report", "--id", "1", "--audience", "press", "--log", "x.jsonl"], 2),
])
def test_usage_errors_exit_2(argv, code, tmp_path):
    env = {"PATH": "", "PYTHONPATH": ":".join(sys.path)}
    assert run(*argv, env=env).returncode == code


def test_runtime_errors_exit_1(simlog, tmp_path):
    assert run("trace", "--log", str(simlog), "--id", "9999999999").returncode == 1
    assert run("verify", "--log", str(tmp_path / "missing.jsonl")).returncode in (1, 2)
    assert run("investigate", "--log", str(simlog), "--thread", "driver",
               "--no-record").returncode == 0


def test_env_log_fallback(simlog, capsys, monkeypatch):
    monkeypatch.setenv("DECPROV_LOG", str(simlog))
    assert main(["verify"]) == 0
    assert capsys.readouterr().out.strip() == "ok"
