"""Load scenario manifests, replay their transactions and check expectations."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from vulnlab.lang import ir
from vulnlab.lang.parser import parse_source
from vulnlab.numeric import ETHER, format_wei
from vulnlab.vm import CallOutcome, Transaction, WorldState, execute_transaction

PACKAGE_DIR = Path(__file__).parent
FIXTURE_DIR = PACKAGE_DIR / "fixtures"
MANIFEST_DIR = PACKAGE_DIR / "manifests"
U256_MOD = 1 << 256
DEFAULT_GAS = 10_000_000

_PARAM_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
_TERM_RE = re.compile(r"\s*([+-])?\s*(0[xX][0-9a-fA-F_]+|[0-9][0-9_]*)\s*(ether|wei)?\s*")
_OPS = {
    "==": lambda a, b: a == b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


class ScenarioError(Exception):
    """Malformed manifest, unknown scenario or bad override."""


class OverrideError(ScenarioError):
    """An override names a parameter the scenario does not declare."""


class SetupError(ScenarioError):
    def __init__(self, index: int, tx: Transaction, outcome: CallOutcome):
        self.index = index
        self.tx = tx
        self.outcome = outcome
        super().__init__(f"setup transaction {index} ({tx.sender} -> {tx.to}.{tx.function}) "
                         f"ended {outcome.status.value}")


def substitute(text: str, params: dict) -> str:
    def repl(m):
        name = m.group(1)
        if name not in params:
            raise ScenarioError(f"unknown parameter ${{{name}}}")
        return str(params[name])
    return _PARAM_RE.sub(repl, text)


def parse_amount(text, params: Optional[dict] = None) -> int:
    """Evaluate ``"2 ether - 10 ether + ${deposit}"``-style amounts to wei (may be negative)."""
    if isinstance(text, bool):
        raise ScenarioError(f"not an amount: {text!r}")
    if isinstance(text, int):
        return text
    s = substitute(str(text), params or {})
    total, pos, first = 0, 0, True
    while pos < len(s):
        m = _TERM_RE.match(s, pos)
        if m is None or m.end() == pos or (m.group(1) is None and not first):
            raise ScenarioError(f"not an amount: {text!r}")
        digits = m.group(2).replace("_", "")
        value = int(digits, 16) if digits[:2].lower() == "0x" else int(digits)
        if m.group(3) == "ether":
            value *= ETHER
        total += -value if m.group(1) == "-" else value
        pos, first = m.end(), False
    if first:
        raise ScenarioError(f"not an amount: {text!r}")
    return total


@dataclass(frozen=True)
class Expectation:
    check: str  # balance, balance_delta, storage, storage_delta, status, state_unchanged
    fields: dict

    def describe(self) -> str:
        s = self.fields
        op = s.get("op", "==")
        if self.check in ("balance", "balance_delta"):
            return f"{self.check}({s['address']}) {op} {s['value']}"
        if self.check in ("storage", "storage_delta"):
            key = f"[{s['key']}]" if "key" in s else ""
            wrap = " (mod 2^256)" if s.get("wrap") else ""
            return f"{self.check}({s['address']}.{s['slot']}{key}) {op} {s['value']}{wrap}"
        if self.check == "status":
            return f"status(attack[{s.get('tx', 0)}]) == {s['value']}"
        return "state unchanged by attack"


@dataclass
class Manifest:
    name: str
    description: str
    fixtures: list
    params: dict
    accounts: list
    setup: list
    attack: list
    expect: list
    exploit: list
    exploit_expected: bool
    path: Optional[Path] = None


def _expectations(raw, where: str) -> list:
    out = []
    for item in raw or []:
        if not isinstance(item, dict) or "check" not in item:
            raise ScenarioError(f"{where}: each expectation needs a 'check' field")
        fields = {k: v for k, v in item.items() if k != "check"}
        if item["check"] not in ("balance", "balance_delta", "storage", "storage_delta",
                                 "status", "state_unchanged"):
            raise ScenarioError(f"{where}: unknown check {item['check']!r}")
        if fields.get("op", "==") not in _OPS:
            raise ScenarioError(f"{where}: unknown comparison {fields['op']!r}")
        out.append(Expectation(item["check"], fields))
    return out


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: manifest must be a mapping")
    missing = [k for k in ("name", "fixtures", "accounts", "attack") if k not in data]
    if missing:
        raise ScenarioError(f"{path}: missing field(s) {', '.join(missing)}")
    return Manifest(
        name=data["name"],
        description=data.get("description", "").strip(),
        fixtures=list(data["fixtures"]),
        params=dict(data.get("params") or {}),
        accounts=list(data["accounts"]),
        setup=list(data.get("setup") or []),
        attack=list(data["attack"]),
        expect=_expectations(data.get("expect"), str(path)),
        exploit=_expectations(data.get("exploit"), str(path)),
        exploit_expected=bool(data.get("exploit_expected", False)),
        path=path,
    )


def registry() -> dict:
    """Shipped scenarios by name."""
    out = {}
    for path in sorted(MANIFEST_DIR.glob("*.yaml")):
        m = load_manifest(path)
        out[m.name] = path
    return out


def scenario_names() -> list:
    return sorted(registry())


@dataclass
class ScenarioReport:
    name: str
    params: dict
    initial_balances: dict
    final_balances: dict
    storage_deltas: list  # (address, slot, key, old, new)
    outcomes: list  # CallOutcome per attack transaction
    exploit_succeeded: bool
    exploit_expected: bool
    expectation_results: list  # (role, description, passed, actual)
    pre_attack_hash: str
    post_attack_hash: str
    trace: list = field(repr=False, default_factory=list)

    @property
    def expectations_met(self) -> bool:
        return (all(r[2] for r in self.expectation_results if r[0] == "expect")
                and self.exploit_succeeded == self.exploit_expected)

    def balance_delta(self, address: str) -> int:
        return self.final_balances[address] - self.initial_balances[address]

    def to_records(self) -> list:
        """Line-oriented structured form; one dict per output line."""
        records = [{"record": "scenario", "name": self.name,
                    "params": {k: str(v) for k, v in self.params.items()}}]
        for address in sorted(self.initial_balances):
            records.append({"record": "balance", "address": address,
                            "initial": self.initial_balances[address],
                            "final": self.final_balances[address],
                            "delta": self.balance_delta(address)})
        for address, slot, key, old, new in self.storage_deltas:
            records.append({"record": "storage", "address": address, "slot": slot, "key": key,
                            "old": old, "new": new})
        for i, o in enumerate(self.outcomes):
            records.append({"record": "outcome", "tx": i, "status": o.status.value,
                            "gas_used": o.gas_used})
        for role, desc, passed, actual in self.expectation_results:
            records.append({"record": "expectation", "role": role, "check": desc,
                            "passed": passed, "actual": actual})
        records.append({"record": "summary", "exploit_succeeded": self.exploit_succeeded,
                        "exploit_expected": self.exploit_expected,
                        "expectations_met": self.expectations_met,
                        "pre_attack_hash": self.pre_attack_hash,
                        "post_attack_hash": self.post_attack_hash,
                        "trace_events": len(self.trace)})
        return records

    def render(self) -> str:
        lines = [f"scenario {self.name}"]
        if self.params:
            lines.append("  params: " + ", ".join(f"{k}={v}" for k, v in self.params.items()))
        lines.append("  balances:")
        width = max(len(a) for a in self.initial_balances) if self.initial_balances else 0
        for address in sorted(self.initial_balances):
            old, new = self.initial_balances[address], self.final_balances[address]
            delta = new - old
            change = f"  ({'+' if delta > 0 else ''}{format_wei(delta)})" if delta else ""
            lines.append(f"    {address:<{width}}  {format_wei(old)} -> {format_wei(new)}{change}")
        if self.storage_deltas:
            lines.append("  storage changes:")
            for address, slot, key, old, new in self.storage_deltas:
                ref = f"{address}.{slot}" + (f"[{key}]" if key is not None else "")
                lines.append(f"    {ref}: {old} -> {new}")
        for i, o in enumerate(self.outcomes):
            lines.append(f"  attack tx {i}: {o.status.value} (gas used {o.gas_used})")
        lines.append("  expectations:")
        for role, desc, passed, actual in self.expectation_results:
            mark = "PASS" if passed else "FAIL"
            tag = " [exploit]" if role == "exploit" else ""
            lines.append(f"    {mark}{tag} {desc}  (actual: {actual})")
        verdict = "succeeded" if self.exploit_succeeded else "failed"
        lines.append(f"  exploit {verdict} (expected to {'succeed' if self.exploit_expected else 'fail'})")
        lines.append(f"  result: {'all expectations met' if self.expectations_met else 'EXPECTATIONS NOT MET'}")
        return "\n".join(lines)


def _load_contracts(manifest: Manifest) -> dict:
    base = manifest.path.parent if manifest.path else MANIFEST_DIR
    contracts = {}
    for name in manifest.fixtures:
        path = base / name
        if not path.exists():
            path = FIXTURE_DIR / name
        if not path.exists():
            raise ScenarioError(f"fixture {name!r} not found")
        for c in parse_source(path.read_text()):
            if c.name in contracts and contracts[c.name] != c:
                raise ScenarioError(f"contract {c.name!r} defined by more than one fixture")
            contracts[c.name] = c
    return contracts


def _convert_args(raw_args, fn: Optional[ir.Function], params: dict) -> tuple:
    raw_args = list(raw_args or [])
    if fn is None or len(fn.params) != len(raw_args):
        # left for the VM to reject
        return tuple(substitute(a, params) if isinstance(a, str) else a for a in raw_args)
    out = []
    for p, a in zip(fn.params, raw_args):
        if p.type is ir.ValueType.U256:
            out.append(parse_amount(a, params))
        elif p.type is ir.ValueType.ADDRESS:
            out.append(substitute(str(a), params))
        else:
            out.append(tuple(substitute(str(x), params) for x in a))
    return tuple(out)


def _build_tx(raw: dict, world: WorldState, params: dict, where: str) -> Transaction:
    try:
        sender = substitute(str(raw["from"]), params)
        to = substitute(str(raw["to"]), params)
    except KeyError as exc:
        raise ScenarioError(f"{where}: transaction needs {exc.args[0]!r}") from None
    function = raw.get("function")
    acct = world.accounts.get(to)
    fn = acct.contract.function(function) if acct and acct.contract and function else None
    value = parse_amount(raw.get("value", 0), params)
    gas = parse_amount(raw.get("gas", DEFAULT_GAS), params)
    if value < 0 or gas < 0:
        raise ScenarioError(f"{where}: value and gas must not be negative")
    return Transaction(
        sender=sender,
        to=to,
        function=function,
        args=_convert_args(raw.get("args"), fn, params),
        value=value,
        gas_limit=gas,
    )


def _storage_value(world: WorldState, address: str, slot: str, key) -> int:
    acct = world.accounts.get(address)
    if acct is None or slot not in acct.storage:
        raise ScenarioError(f"no storage slot {address}.{slot}")
    value = world.load(address, slot, key)
    return int(value.value if hasattr(value, "value") else value)


def _flat_storage(world: WorldState) -> dict:
    flat = {}
    for address, acct in world.accounts.items():
        for slot, value in acct.storage.items():
            if isinstance(value, dict):
                for k, v in value.items():
                    flat[(address, slot, k)] = v.value
            else:
                flat[(address, slot, None)] = int(value.value if hasattr(value, "value") else value)
    return flat


def _same_param(actual, wanted) -> bool:
    try:
        return parse_amount(actual) == parse_amount(wanted)
    except ScenarioError:
        return str(actual) == str(wanted)


def _applies(exp: Expectation, params: dict) -> bool:
    when = exp.fields.get("when") or {}
    return all(k in params and _same_param(params[k], v) for k, v in when.items())


def _evaluate(exp: Expectation, ctx: dict) -> tuple:
    s, params = exp.fields, ctx["params"]
    world: WorldState = ctx["world"]
    op = _OPS[s.get("op", "==")]
    if exp.check == "state_unchanged":
        actual = world.state_hash() == ctx["pre_hash"]
        return actual, "unchanged" if actual else "changed"
    if exp.check == "status":
        idx = int(s.get("tx", 0))
        actual = ctx["outcomes"][idx].status.value
        return actual == s["value"], actual
    if exp.check in ("balance", "balance_delta"):
        address = substitute(str(s["address"]), params)
        actual = world.balance(address).value
        if exp.check == "balance_delta":
            actual -= ctx["initial"].get(address, 0)
        want = parse_amount(s["value"], params)
        return op(actual, want), actual
    address = substitute(str(s["address"]), params)
    key = substitute(str(s["key"]), params) if "key" in s else None
    actual = _storage_value(world, address, s["slot"], key)
    if exp.check == "storage_delta":
        actual -= ctx["initial_storage"].get((address, s["slot"], key), 0)
    want = parse_amount(s["value"], params)
    if s.get("wrap"):
        want %= U256_MOD
    return op(actual, want), actual


def resolve_params(manifest: Manifest, overrides: Optional[dict]) -> dict:
    params = dict(manifest.params)
    for k, v in (overrides or {}).items():
        if k not in params:
            declared = ", ".join(sorted(params)) or "none"
            raise OverrideError(f"scenario {manifest.name!r} has no parameter {k!r} (declared: {declared})")
        params[k] = v
    return params


def run_manifest(manifest: Manifest, overrides: Optional[dict] = None) -> ScenarioReport:
    params = resolve_params(manifest, overrides)
    contracts = _load_contracts(manifest)
    world = WorldState()
    for acct in manifest.accounts:
        address = substitute(str(acct["address"]), params)
        code = None
        if acct.get("contract"):
            cname = substitute(str(acct["contract"]), params)
            if cname not in contracts:
                raise ScenarioError(f"unknown contract {cname!r} for account {address!r}")
            code = contracts[cname]
        world.create_account(address, parse_amount(acct.get("balance", 0), params), code)

    for i, raw in enumerate(manifest.setup):
        tx = _build_tx(raw, world, params, f"setup[{i}]")
        _, outcome, _ = execute_transaction(world, tx)
        if not outcome.ok:
            raise SetupError(i, tx, outcome)

    initial = {a: acct.balance.value for a, acct in world.accounts.items()}
    initial_storage = _flat_storage(world)
    pre_hash = world.state_hash()
    outcomes, trace = [], []
    for i, raw in enumerate(manifest.attack):
        tx = _build_tx(raw, world, params, f"attack[{i}]")
        _, outcome, events = execute_transaction(world, tx)
        outcomes.append(outcome)
        trace.extend(events)

    final = {a: acct.balance.value for a, acct in world.accounts.items()}
    final_storage = _flat_storage(world)
    deltas = []
    for key in sorted(set(initial_storage) | set(final_storage), key=lambda k: (k[0], k[1], k[2] or "")):
        old, new = initial_storage.get(key, 0), final_storage.get(key, 0)
        if old != new:
            deltas.append((key[0], key[1], key[2], old, new))

    ctx = {"world": world, "params": params, "initial": initial, "initial_storage": initial_storage,
           "pre_hash": pre_hash, "outcomes": outcomes}
    results = []
    for role, group in (("expect", manifest.expect), ("exploit", manifest.exploit)):
        for exp in group:
            if _applies(exp, params):
                passed, actual = _evaluate(exp, ctx)
                results.append((role, exp.describe(), bool(passed), actual))
    exploit_results = [r[2] for r in results if r[0] == "exploit"]
    return ScenarioReport(
        name=manifest.name,
        params=params,
        initial_balances=initial,
        final_balances=final,
        storage_deltas=deltas,
        outcomes=outcomes,
        exploit_succeeded=bool(exploit_results) and all(exploit_results),
        exploit_expected=manifest.exploit_expected,
        expectation_results=results,
        pre_attack_hash=pre_hash,
        post_attack_hash=world.state_hash(),
        trace=trace,
    )


def run_scenario(name: str, overrides: Optional[dict] = None) -> ScenarioReport:
    """Replay a shipped scenario by name."""
    paths = registry()
    if name not in paths:
        raise ScenarioError(f"unknown scenario {name!r}; known: {', '.join(sorted(paths))}")
    return run_manifest(load_manifest(paths[name]), overrides)
