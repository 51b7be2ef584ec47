from __future__ import annotations

import io
import json
import subprocess
import sys

import pytest

from vulnlab.cli import main
from vulnlab.scenarios import FIXTURE_DIR, MANIFEST_DIR


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("VULNLAB_FORMAT", raising=False)


def test_list_scenarios():
    code, out, _ = run("list-scenarios")
    assert code == 0
    assert out.splitlines() == [
        "overflow_bec", "overflow_safemath_bec", "overflow_safemath_smt", "overflow_smt",
        "reentrancy_cei", "reentrancy_lock", "reentrancy_transfer", "reentrancy_vulnerable",
        "reentrancy_withdrawal",
    ]


def test_parse_ok():
    code, out, _ = run("parse", str(FIXTURE_DIR / "bank_vulnerable.ctr"))
    assert code == 0 and out.startswith("contract Bank {")


def test_parse_error_exit_2(tmp_path):
    bad = tmp_path / "bad.ctr"
    bad.write_text("contract A {\n  fn f( {}\n}\n")
    code, out, err = run("parse", str(bad))
    assert code == 2 and out == ""
    assert f"{bad}:2:9:" in err


def test_parse_structured():
    code, out, _ = run("parse", "--format", "structured", str(FIXTURE_DIR / "token_bec.ctr"))
    rec = json.loads(out)
    assert code == 0 and rec["name"] == "BecToken" and "batchTransfer" in rec["functions"]


def test_attack_vulnerable_human():
    code, out, _ = run("attack", "reentrancy_vulnerable")
    assert code == 0
    assert "bank      10 ether 2 wei -> 2 wei" in out


def test_attack_structured_is_byte_identical():
    a = run("attack", "reentrancy_vulnerable", "--format", "structured")
    b = run("attack", "reentrancy_vulnerable", "--format", "structured")
    assert a == b and a[0] == 0
    records = [json.loads(line) for line in a[1].splitlines()]
    summary = records[-1]
    assert summary["record"] == "summary" and summary["exploit_succeeded"] is True


def test_env_var_selects_format(monkeypatch):
    monkeypatch.setenv("VULNLAB_FORMAT", "structured")
    code, out, _ = run("attack", "overflow_smt")
    assert code == 0 and json.loads(out.splitlines()[0])["record"] == "scenario"


def test_attack_unmet_expectations_exit_3():
    code, out, _ = run("attack", "reentrancy_lock", "--set", "withdraw=2 ether")
    assert code == 3 and "EXPECTATIONS NOT MET" in out


def test_attack_unknown_scenario_exit_64():
    code, _, err = run("attack", "nope")
    assert code == 64 and "unknown scenario" in err


def test_attack_bad_override_exit_64():
    assert run("attack", "reentrancy_cei", "--set", "bogus=1")[0] == 64
    assert run("attack", "reentrancy_cei", "--set", "novalue")[0] == 64


def test_run_manifest_file():
    code, out, _ = run("run", str(MANIFEST_DIR / "overflow_bec.yaml"))
    assert code == 0 and "all expectations met" in out


def test_analyze_fail_on_high():
    code, out, _ = run("analyze", "fixtures/bank_vulnerable", "--fail-on", "high")
    assert code == 4 and "CEI_VIOLATION" in out


def test_analyze_without_threshold_exits_0():
    assert run("analyze", "fixtures/bank_vulnerable")[0] == 0


def test_analyze_threshold_not_reached():
    code, _, _ = run("analyze", "token_safemath_bec", "--fail-on", "medium")
    assert code == 0


def test_analyze_medium_threshold():
    assert run("analyze", "attacker", "--fail-on", "high")[0] == 0
    assert run("analyze", "attacker", "--fail-on", "medium")[0] == 4


def test_analyze_structured_multiple_files():
    code, out, _ = run("analyze", "--format", "structured", "bank_cei", "token_smt")
    recs = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and {r["contract"] for r in recs} == {"Bank", "SmtToken"}
    assert recs[0]["severity"] == "high"


def test_trace_structured():
    code, out, _ = run("trace", "reentrancy_vulnerable", "--format", "structured")
    events = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and events[0]["event"] == "frame_enter" and events[-1]["event"] == "frame_exit"


def test_trace_human():
    code, out, _ = run("trace", "overflow_bec")
    assert code == 0 and out.startswith("> [0] tx mallory -> token.batchTransfer")


@pytest.mark.parametrize("argv", [["bogus"], ["attack"], ["attack", "x", "--nope"], [],
                                  ["analyze", "x.ctr", "--fail-on", "low"]])
def test_usage_errors_exit_64(argv):
    code, _, err = run(*argv)
    assert code == 64 and "usage:" in err


def test_missing_file_exit_64():
    code, _, err = run("analyze", "does/not/exist.ctr")
    assert code == 64 and "no such contract file" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "vulnlab", "list-scenarios"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and len(proc.stdout.splitlines()) == 9
