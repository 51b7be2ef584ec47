"""``vulnlab`` command line: parse, run, attack, analyze, trace, list-scenarios.

Exit codes: 0 success, 2 unparseable input, 3 scenario expectations not met,
4 findings at or above the ``--fail-on`` threshold, 64 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from vulnlab import analyzer
from vulnlab.lang import ParseError, parse_source, pretty_print
from vulnlab.numeric import format_wei
from vulnlab.scenarios import (
    FIXTURE_DIR, OverrideError, ScenarioError, SetupError, load_manifest, run_manifest, run_scenario, scenario_names,
)
from vulnlab.vm.trace import BalanceChange, FrameEnter, FrameExit, StatementExec, to_record

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_EXPECTATIONS = 3
EXIT_FINDINGS = 4
EXIT_USAGE = 64

FORMAT_ENV = "VULNLAB_FORMAT"
FORMATS = ("human", "structured")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--format", choices=FORMATS, default=argparse.SUPPRESS,
                     help=f"output format (default: ${FORMAT_ENV} or human)")

    parser = _Parser(prog="vulnlab", parents=[fmt],
                     description="Toy smart-contract VM, attack replays and static analyzer.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("parse", parents=[fmt], help="parse and pretty-print contract source")
    p.add_argument("files", nargs="+", metavar="FILE")

    overrides = argparse.ArgumentParser(add_help=False)
    overrides.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V",
                           help="override a declared scenario parameter")

    p = sub.add_parser("run", parents=[fmt, overrides], help="replay a scenario manifest file")
    p.add_argument("manifest", metavar="MANIFEST")

    p = sub.add_parser("attack", parents=[fmt, overrides], help="replay a shipped scenario")
    p.add_argument("scenario", metavar="SCENARIO")

    p = sub.add_parser("analyze", parents=[fmt], help="run the static detectors")
    p.add_argument("files", nargs="+", metavar="FILE")
    p.add_argument("--fail-on", choices=("high", "medium"), default=None,
                   help="exit 4 if any finding is at least this severe")

    p = sub.add_parser("trace", parents=[fmt, overrides], help="emit the attack's trace events")
    p.add_argument("scenario", metavar="SCENARIO")

    sub.add_parser("list-scenarios", parents=[fmt], help="list shipped scenario names")
    return parser


def _emit(out, record: dict) -> None:
    out.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


def _parse_overrides(items) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"vulnlab: error: --set expects K=V, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def resolve_source(name: str) -> Path:
    """Find a contract file, trying a ``.ctr`` suffix and the packaged fixtures."""
    path = Path(name)
    candidates = [path, path.with_name(path.name + ".ctr"),
                  FIXTURE_DIR / path.name, FIXTURE_DIR / (path.name + ".ctr")]
    for c in candidates:
        if c.is_file():
            return c
    raise UsageError(f"vulnlab: error: no such contract file: {name}")


def _read_contracts(name: str):
    path = resolve_source(name)
    try:
        return path, parse_source(path.read_text())
    except ParseError as exc:
        exc.path = path
        raise


def cmd_parse(args, out, err) -> int:
    for name in args.files:
        path, contracts = _read_contracts(name)
        for c in contracts:
            text = pretty_print(c)
            if args.format == "structured":
                _emit(out, {"record": "contract", "file": str(path), "name": c.name,
                            "storage": [d.name for d in c.storage],
                            "functions": [f.name for f in c.all_functions()], "source": text})
            else:
                out.write(text)
    return EXIT_OK


def _report(report, args, out) -> int:
    if args.format == "structured":
        for rec in report.to_records():
            _emit(out, rec)
    else:
        out.write(report.render() + "\n")
    return EXIT_OK if report.expectations_met else EXIT_EXPECTATIONS


def _setup_failed(exc: SetupError, args, out) -> int:
    if args.format == "structured":
        _emit(out, {"record": "setup_error", "tx": exc.index, "status": exc.outcome.status.value,
                    "message": str(exc)})
    else:
        out.write(f"setup failed: {exc}\n")
    return EXIT_EXPECTATIONS


def cmd_run(args, out, err) -> int:
    path = Path(args.manifest)
    if not path.is_file():
        raise UsageError(f"vulnlab: error: no such manifest: {args.manifest}")
    manifest = load_manifest(path)
    try:
        report = run_manifest(manifest, _parse_overrides(args.overrides))
    except SetupError as exc:
        return _setup_failed(exc, args, out)
    return _report(report, args, out)


def _scenario(args):
    if args.scenario not in scenario_names():
        raise UsageError(f"vulnlab: error: unknown scenario {args.scenario!r} "
                         "(see 'vulnlab list-scenarios')")
    return run_scenario(args.scenario, _parse_overrides(args.overrides))


def cmd_attack(args, out, err) -> int:
    try:
        report = _scenario(args)
    except SetupError as exc:
        return _setup_failed(exc, args, out)
    return _report(report, args, out)


def cmd_analyze(args, out, err) -> int:
    parsed = [_read_contracts(name) for name in args.files]
    contracts = [c for _, cs in parsed for c in cs]
    with ThreadPoolExecutor() as pool:
        per_contract = list(pool.map(analyzer.analyze, contracts))
    findings = sorted((f for fs in per_contract for f in fs), key=analyzer.Finding.sort_key)
    if args.format == "structured":
        for f in findings:
            _emit(out, f.to_record())
    else:
        for f in findings:
            out.write(f.render() + "\n")
            for ev in f.evidence:
                out.write(f"         {ev}\n")
        out.write(f"{len(findings)} finding(s) in {len(contracts)} contract(s)\n")
    if args.fail_on is None:
        return EXIT_OK
    threshold = analyzer.Severity(args.fail_on)
    return EXIT_FINDINGS if any(f.severity.at_least(threshold) for f in findings) else EXIT_OK


def _human_event(ev) -> str:
    if isinstance(ev, FrameEnter):
        target = f"{ev.callee}.{ev.function}" if ev.function else ev.callee
        return (f"{'  ' * ev.depth}> [{ev.depth}] {ev.via} {ev.caller} -> {target} "
                f"value={format_wei(ev.value)} gas={ev.gas}")
    if isinstance(ev, FrameExit):
        return f"{'  ' * ev.depth}< [{ev.depth}] {ev.status.value} gas_used={ev.gas_used}"
    if isinstance(ev, StatementExec):
        return f"{'  ' * ev.depth}  {ev.kind} {ev.location}"
    if isinstance(ev, BalanceChange):
        return f"    balance {ev.address}: {format_wei(ev.old)} -> {format_wei(ev.new)}"
    raise TypeError(ev)


def cmd_trace(args, out, err) -> int:
    try:
        report = _scenario(args)
    except SetupError as exc:
        return _setup_failed(exc, args, out)
    for ev in report.trace:
        if args.format == "structured":
            _emit(out, to_record(ev))
        else:
            out.write(_human_event(ev) + "\n")
    return EXIT_OK


def cmd_list(args, out, err) -> int:
    for name in scenario_names():
        out.write(name + "\n")
    return EXIT_OK


COMMANDS = {
    "parse": cmd_parse,
    "run": cmd_run,
    "attack": cmd_attack,
    "analyze": cmd_analyze,
    "trace": cmd_trace,
    "list-scenarios": cmd_list,
}


def main(argv: Optional[list] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        if argv is None:
            argv = sys.argv[1:]
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return EXIT_OK if not exc.code else EXIT_USAGE
        if getattr(args, "format", None) is None:
            env = os.environ.get(FORMAT_ENV, "human")
            if env not in FORMATS:
                raise UsageError(f"vulnlab: error: ${FORMAT_ENV} must be one of {', '.join(FORMATS)}")
            args.format = env
        return COMMANDS[args.command](args, out, err)
    except UsageError as exc:
        err.write(f"{exc}\n")
        return EXIT_USAGE
    except OverrideError as exc:
        err.write(f"vulnlab: error: {exc}\n")
        return EXIT_USAGE
    except ParseError as exc:
        where = getattr(exc, "path", None)
        err.write(f"{where}:{exc.line}:{exc.col}: {exc.message}\n" if where else f"{exc}\n")
        return EXIT_PARSE
    except ScenarioError as exc:
        err.write(f"vulnlab: error: {exc}\n")
        return EXIT_PARSE


def main_entry() -> None:
    sys.exit(main())
