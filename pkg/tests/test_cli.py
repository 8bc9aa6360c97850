import json
import os
import subprocess
import sys

import yaml

from clusterbft.harness.cli import main
from clusterbft.harness.scenario import load_scenario


def test_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out.split()
    assert "two_clusters" in out and "grow_4_to_7" in out


def test_run_writes_trace_and_report(tmp_path, capsys):
    trace, report = tmp_path / "t.trace", tmp_path / "r.json"
    rc = main(["run", "--scenario", "two_clusters", "--seed", "1", "--trace", str(trace), "--report", str(report)])
    assert rc == 0
    assert "violations=0" in capsys.readouterr().out
    rep = json.loads(report.read_text())
    assert rep["seed"] == 1 and rep["violations"] == []
    assert rep["summary"]["messages"]["global"] > 0
    assert trace.read_text().splitlines()[0].split(" | ")[2] == "meta"
    assert main(["check", "--trace", str(trace), "--status", "quiescent"]) == 0
    assert main(["report", "--trace", str(trace), "--report", str(tmp_path / "m.json")]) == 0
    assert json.loads((tmp_path / "m.json").read_text())["messages"]["global"] == rep["summary"]["messages"]["global"]


def test_check_flags_tampered_trace(tmp_path, capsys):
    trace = tmp_path / "t.trace"
    main(["run", "--scenario", "two_clusters", "--trace", str(trace)])
    lines = trace.read_text().splitlines()
    for i, line in enumerate(lines):
        parts = line.split(" | ")
        if parts[2] == "execute" and parts[1] == "c1n02":
            data = json.loads(parts[4])
            data["state"] = "0" * 16
            parts[4] = json.dumps(data)
            lines[i] = " | ".join(parts)
            break
    trace.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["check", "--trace", str(trace)]) == 1
    assert "state_agreement" in capsys.readouterr().out


def test_negative_control_exits_nonzero(tmp_path, capsys):
    doc = load_scenario("complaint_replay").to_dict()
    doc["protocol"]["replay_defense"] = False
    p = tmp_path / "off.yaml"
    p.write_text(yaml.safe_dump(doc))
    assert main(["run", "--scenario", str(p), "--seed", "0", "--safety-only"]) == 1
    assert "overthrow_resistance" in capsys.readouterr().out


def test_sweep(tmp_path, capsys):
    report = tmp_path / "s.json"
    assert main(["sweep", "--scenario", "two_clusters", "--seeds", "0..2", "--report", str(report)]) == 0
    rows = json.loads(report.read_text())["runs"]
    assert [r["seed"] for r in rows] == [0, 1, 2]
    assert "3 runs, 0 failing" in capsys.readouterr().out


def test_bad_scenario_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump({"schema": "clusterbft/scenario/v1", "clusters": [{"size": 4}],
                                 "faults": [{"node": "c0n00", "strategy": "mute"},
                                            {"node": "c0n01", "strategy": "mute"}]}))
    assert main(["run", "--scenario", str(p)]) == 2
    assert "Byzantine" in capsys.readouterr().err


def test_max_events_truncates(capsys):
    assert main(["run", "--scenario", "two_clusters", "--max-events", "50"]) == 1
    assert "truncated" in capsys.readouterr().out


def _trace_via_subprocess(tmp_path, hashseed, tag):
    out = tmp_path / f"{tag}.trace"
    env = dict(os.environ, PYTHONHASHSEED=str(hashseed))
    subprocess.run([sys.executable, "-m", "clusterbft", "run", "--scenario", "grow_4_to_7", "--seed", "4",
                    "--trace", str(out)], check=True, env=env, capture_output=True)
    return out.read_bytes()


def test_trace_independent_of_hash_seed(tmp_path):
    assert _trace_via_subprocess(tmp_path, 1, "a") == _trace_via_subprocess(tmp_path, 12345, "b")
