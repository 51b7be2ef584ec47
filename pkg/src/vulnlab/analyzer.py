"""Static detectors for reentrancy and overflow patterns over contract IR.

Every detector is a pure function of one :class:`~vulnlab.lang.ir.Contract`,
so analysing several contracts in parallel is safe.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional

from vulnlab.lang import ir
from vulnlab.lang.printer import format_expr


class Severity(enum.Enum):
    HIGH = "high"
    MEDIUM = "medium"
    INFO = "info"

    @property
    def rank(self) -> int:
        return _RANK[self]

    def at_least(self, threshold: "Severity") -> bool:
        return self.rank <= threshold.rank


_RANK = {Severity.HIGH: 0, Severity.MEDIUM: 1, Severity.INFO: 2}


class DetectorId(enum.Enum):
    CEI_VIOLATION = "CEI_VIOLATION"
    UNCHECKED_ARITH = "UNCHECKED_ARITH"
    UNBOUNDED_GAS_CALL = "UNBOUNDED_GAS_CALL"
    UNCHECKED_CALL_RESULT = "UNCHECKED_CALL_RESULT"
    MISSING_REENTRANCY_GUARD = "MISSING_REENTRANCY_GUARD"

    @property
    def severity(self) -> Severity:
        return _SEVERITY[self]


_SEVERITY = {
    DetectorId.CEI_VIOLATION: Severity.HIGH,
    DetectorId.UNCHECKED_ARITH: Severity.HIGH,
    DetectorId.UNBOUNDED_GAS_CALL: Severity.MEDIUM,
    DetectorId.UNCHECKED_CALL_RESULT: Severity.MEDIUM,
    DetectorId.MISSING_REENTRANCY_GUARD: Severity.INFO,
}


@dataclass(frozen=True)
class Finding:
    detector: DetectorId
    contract: str
    function: str
    path: tuple
    message: str
    evidence: tuple = ()
    line: Optional[int] = field(default=None, compare=False)
    col: Optional[int] = field(default=None, compare=False)

    @property
    def severity(self) -> Severity:
        return self.detector.severity

    @property
    def location(self) -> str:
        return ir.format_path(self.path)

    def sort_key(self) -> tuple:
        path_key = tuple((0, p, "") if isinstance(p, int) else (1, 0, p) for p in self.path)
        return (self.severity.rank, self.contract, self.function, path_key, self.detector.value)

    def to_record(self) -> dict:
        return {
            "detector": self.detector.value,
            "severity": self.severity.value,
            "contract": self.contract,
            "function": self.function,
            "location": self.location,
            "line": self.line,
            "col": self.col,
            "message": self.message,
            "evidence": list(self.evidence),
        }

    def render(self) -> str:
        pos = f"{self.line}:{self.col} " if self.line is not None else ""
        return (f"{self.severity.value.upper():<6} {self.detector.value} "
                f"{self.contract}.{self.function} @{self.location} {pos}- {self.message}")


def _finding(detector, contract, fn, path, stmt, message, evidence=()) -> Finding:
    loc = getattr(stmt, "loc", None)
    return Finding(detector, contract.name, fn.name, path, message, tuple(evidence),
                   loc.line if loc else None, loc.col if loc else None)


def _sends_value(stmt) -> bool:
    """External statement whose value is not the literal 0."""
    if not isinstance(stmt, ir.EXTERNAL_CALLS):
        return False
    return not (isinstance(stmt.value, ir.IntLit) and stmt.value.value == 0)


def _slots_read(expr, lets: dict) -> set:
    slots = set()
    for e in ir.walk_expr(expr):
        if isinstance(e, (ir.SlotRead, ir.MapRead)):
            slots.add(e.slot)
        elif isinstance(e, ir.Local):
            slots |= lets.get(e.name, set())
    return slots


def _describe(stmt) -> str:
    kind = ir.statement_kind(stmt)
    if isinstance(stmt, ir.Invoke):
        return f"invoke {format_expr(stmt.target)}.{stmt.function}"
    if isinstance(stmt, ir.Assign):
        key = f"[{format_expr(stmt.key)}]" if stmt.key is not None else ""
        return f"write {stmt.slot}{key}"
    if isinstance(stmt, ir.EXTERNAL_CALLS):
        return f"{kind} {format_expr(stmt.target)}"
    return kind


# -- CEI_VIOLATION -------------------------------------------------------------

@dataclass(frozen=True)
class _Pending:
    path: tuple
    stmt: object
    guards: frozenset


class _CeiWalker:
    """Straight-line walk with If-branch union.

    A storage write after a value-sending call counts only when it dominates
    every path after that call, and only for slots read by a ``require`` that
    guarded the call (one ``let`` step of propagation).
    """

    def __init__(self):
        self.lets: dict = {}
        self.hits: dict = {}  # call path -> (_Pending, [(write path, write stmt)])

    def _hit(self, pending: _Pending, path, stmt):
        entry = self.hits.setdefault(pending.path, (pending, []))
        if all(p != path for p, _ in entry[1]):
            entry[1].append((path, stmt))

    def block(self, body, prefix, pending: list, guards: set) -> tuple:
        """Returns (pending after the block, slots written on every path, stopped)."""
        pending = list(pending)
        guards = set(guards)
        must_write: dict = {}
        for i, stmt in enumerate(body):
            path = prefix + (i,)
            if isinstance(stmt, ir.Require):
                guards |= _slots_read(stmt.cond, self.lets)
            elif isinstance(stmt, ir.Let):
                self.lets[stmt.name] = _slots_read(stmt.rhs, self.lets)
            elif isinstance(stmt, ir.Assign):
                for p in pending:
                    if stmt.slot in p.guards:
                        self._hit(p, path, stmt)
                must_write.setdefault(stmt.slot, (path, stmt))
            elif isinstance(stmt, ir.If):
                t_pending, t_writes, t_stop = self.block(stmt.then, path + ("then",), [], guards)
                e_pending, e_writes, e_stop = self.block(stmt.orelse, path + ("else",), [], guards)
                # a write dominates the outer calls only if every live branch performs it
                live = [w for w, stopped in ((t_writes, t_stop), (e_writes, e_stop)) if not stopped]
                if live:
                    common = set(live[0]).intersection(*live[1:])
                    for slot in sorted(common):
                        wpath, wstmt = live[0][slot]
                        for p in pending:
                            if slot in p.guards:
                                self._hit(p, wpath, wstmt)
                        must_write.setdefault(slot, (wpath, wstmt))
                pending.extend(t_pending + e_pending)
                if t_stop and e_stop:
                    return pending, must_write, True
            elif isinstance(stmt, ir.ForEach):
                # second pass catches a write that follows the call in the next iteration
                inner = pending
                for _ in range(2):
                    inner, _, _ = self.block(stmt.body, path + ("body",), inner, guards)
                pending = inner
            elif isinstance(stmt, ir.Stop):
                return pending, must_write, True
            if _sends_value(stmt):
                pending.append(_Pending(path, stmt, frozenset(guards)))
        return pending, must_write, False


def _cei(contract, fn) -> list:
    walker = _CeiWalker()
    walker.block(fn.body, (), [], set())
    out = []
    for call_path, (pending, writes) in walker.hits.items():
        slots = sorted({w.slot for _, w in writes})
        evidence = [f"{ir.format_path(call_path)}: {_describe(pending.stmt)}"]
        evidence += [f"{ir.format_path(p)}: {_describe(w)}" for p, w in writes]
        out.append(_finding(
            DetectorId.CEI_VIOLATION, contract, fn, call_path, pending.stmt,
            f"{_describe(pending.stmt)} sends value before guarded storage "
            f"({', '.join(slots)}) is updated",
            evidence))
    return out


# -- UNCHECKED_ARITH -----------------------------------------------------------

def _influenced(expr, lets: dict) -> bool:
    if isinstance(expr, (ir.Param, ir.SlotRead, ir.MapRead)):
        return True
    if isinstance(expr, ir.Local):
        return lets.get(expr.name, False)
    return False


def _direct_input(expr) -> bool:
    return any(isinstance(e, (ir.Param, ir.SlotRead, ir.MapRead)) for e in ir.walk_expr(expr))


def _unchecked_arith(contract, fn) -> list:
    lets = {}
    out = []
    for path, stmt in ir.iter_statements(fn.body):
        seen = set()
        for root in ir.stmt_exprs(stmt):
            for e in ir.walk_expr(root):
                if not isinstance(e, ir.Arith) or e.checked:
                    continue
                if not (_influenced(e.left, lets) or _influenced(e.right, lets)):
                    continue
                text = format_expr(e)
                if text in seen:
                    continue
                seen.add(text)
                out.append(_finding(
                    DetectorId.UNCHECKED_ARITH, contract, fn, path, stmt,
                    f"unchecked {e.kind.value} '{text}' on parameter or storage input can wrap",
                    (f"{ir.format_path(path)}: {text}",)))
        if isinstance(stmt, ir.Let):
            lets[stmt.name] = _direct_input(stmt.rhs)
    return out


# -- UNBOUNDED_GAS_CALL --------------------------------------------------------

def _unbounded_gas(contract, fn) -> list:
    out = []
    for path, stmt in ir.iter_statements(fn.body):
        if isinstance(stmt, (ir.Call, ir.Invoke)) and stmt.gas is None:
            out.append(_finding(
                DetectorId.UNBOUNDED_GAS_CALL, contract, fn, path, stmt,
                f"{_describe(stmt)} forwards all available gas to the callee",
                (f"{ir.format_path(path)}: {_describe(stmt)}",)))
    return out


# -- UNCHECKED_CALL_RESULT -----------------------------------------------------

def _unchecked_result(contract, fn) -> list:
    stmts = list(ir.iter_statements(fn.body))
    out = []
    for i, (path, stmt) in enumerate(stmts):
        if not isinstance(stmt, (ir.Call, ir.Send)):
            continue
        if stmt.result is None:
            why = "has no result variable"
        else:
            used = any(isinstance(e, ir.Local) and e.name == stmt.result
                       for _, later in stmts[i + 1:]
                       for root in ir.stmt_exprs(later)
                       for e in ir.walk_expr(root))
            if used:
                continue
            why = f"its result '{stmt.result}' is never read"
        out.append(_finding(
            DetectorId.UNCHECKED_CALL_RESULT, contract, fn, path, stmt,
            f"{_describe(stmt)} does not revert on failure and {why}",
            (f"{ir.format_path(path)}: {_describe(stmt)}",)))
    return out


# -- MISSING_REENTRANCY_GUARD --------------------------------------------------

def _bool_slots(contract) -> set:
    return {d.name for d in contract.storage if d.kind is ir.StorageKind.BOOL}


def _is_flag_write(stmt, slots, value: bool) -> Optional[str]:
    if (isinstance(stmt, ir.Assign) and stmt.slot in slots and stmt.key is None
            and isinstance(stmt.rhs, ir.BoolLit) and stmt.rhs.value is value):
        return stmt.slot
    return None


def _checked_call(body, idx) -> bool:
    """The call at ``body[idx]`` propagates failure or has its result required."""
    stmt = body[idx]
    if isinstance(stmt, ir.Transfer) or (isinstance(stmt, ir.Invoke) and stmt.result is None):
        return True
    result = getattr(stmt, "result", None)
    return result is not None and any(
        isinstance(s, ir.Require) and isinstance(s.cond, ir.Local) and s.cond.name == result
        for s in body[idx + 1:])


def _exact_lock(body, slots) -> set:
    """Top-level ``require(!L); L = true; ...; <call>; ...; L = false;`` shapes.

    Returns the paths of calls covered by such a lock.
    """
    covered = set()
    for i, s in enumerate(body):
        if not (isinstance(s, ir.Require) and isinstance(s.cond, ir.Not)
                and isinstance(s.cond.operand, ir.SlotRead) and s.cond.operand.slot in slots):
            continue
        lock = s.cond.operand.slot
        set_at = next((j for j in range(i + 1, len(body)) if _is_flag_write(body[j], {lock}, True)), None)
        if set_at is None:
            continue
        clear_at = next((j for j in range(set_at + 1, len(body))
                         if _is_flag_write(body[j], {lock}, False)), None)
        if clear_at is None:
            continue
        for j in range(set_at + 1, clear_at):
            if _sends_value(body[j]) and _checked_call(body, j):
                covered.add((j,))
    return covered


def _missing_guard(contract, fn) -> list:
    calls = [(p, s) for p, s in ir.iter_statements(fn.body) if _sends_value(s)]
    if not calls:
        return []
    slots = _bool_slots(contract)
    covered = _exact_lock(fn.body, slots)
    out = []
    written_true = {_is_flag_write(s, slots, True) for _, s in ir.iter_statements(fn.body)} - {None}
    written_false = {_is_flag_write(s, slots, False) for _, s in ir.iter_statements(fn.body)} - {None}
    partial = sorted(written_true & written_false)
    for path, stmt in calls:
        if path in covered:
            continue
        if partial:
            msg = (f"{_describe(stmt)} sits under a boolean lock on '{partial[0]}' that does not match "
                   "the require/set/clear shape; known limitation: the lock is cleared whether or not "
                   "the guarded call succeeded, so a re-entrant call can still alter state")
        else:
            msg = f"{_describe(stmt)} sends value with no boolean reentrancy lock around it"
        out.append(_finding(DetectorId.MISSING_REENTRANCY_GUARD, contract, fn, path, stmt, msg,
                            (f"{ir.format_path(path)}: {_describe(stmt)}",)))
    return out


_DETECTORS = (_cei, _unchecked_arith, _unbounded_gas, _unchecked_result, _missing_guard)


def analyze(contract: ir.Contract) -> list:
    """All findings for one contract, sorted by severity, function and location."""
    findings = []
    for fn in contract.all_functions():
        for detector in _DETECTORS:
            findings.extend(detector(contract, fn))
    return sorted(findings, key=Finding.sort_key)


def analyze_all(contracts: Iterable[ir.Contract]) -> list:
    findings = []
    for c in contracts:
        findings.extend(analyze(c))
    return sorted(findings, key=Finding.sort_key)
