"""Message-call interpreter for the toy contract IR.

Gas table (all other expressions are free):

=====================================  ==========================
transaction intrinsic cost             100
any statement                          10
storage write (``Assign``)             10 + 200
call / invoke / transfer / send        100 + forwarded gas
=====================================  ==========================

``call`` and ``invoke`` forward all but 1/64 of the remaining gas (or the
explicit ``gas=`` cap, if smaller); ``transfer`` and ``send`` forward exactly
the 2300 stipend.  Unused forwarded gas is refunded to the caller, except
after an out-of-gas failure.
"""
from __future__ import annotations

import sys
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional, Sequence

from vulnlab.lang import ir
from vulnlab.lang.ir import ValueType, format_path
from vulnlab.numeric import CheckedOverflowError, UInt, checked_arith, wrap_arith
from vulnlab.vm.state import WorldState
from vulnlab.vm.trace import BalanceChange, FrameEnter, FrameExit, StatementExec, Status

GAS_TX = 100
GAS_STATEMENT = 10
GAS_STORAGE_WRITE = 200
GAS_CALL = 100
STIPEND = 2300
MAX_CALL_DEPTH = 1024


@dataclass(frozen=True)
class Transaction:
    sender: str
    to: str
    function: Optional[str] = None
    args: tuple = ()
    value: int = 0
    gas_limit: int = 10_000_000


@dataclass(frozen=True)
class CallOutcome:
    status: Status
    gas_used: int

    @property
    def ok(self) -> bool:
        return self.status is Status.OK


@dataclass
class Frame:
    caller: str
    callee: str
    value: UInt
    gas: int
    depth: int
    contract: Optional[ir.Contract] = None
    function: Optional[ir.Function] = None
    args: dict = field(default_factory=dict)
    locals: dict = field(default_factory=dict)


class _Abort(Exception):
    """Unwinds the current frame with a failure status."""

    def __init__(self, status: Status, reason: str):
        self.status = status
        self.reason = reason
        super().__init__(reason)


class _Stop(Exception):
    pass


class Interpreter:
    def __init__(self, world: WorldState):
        self.world = world
        self.trace: list = []

    # -- value movement ------------------------------------------------------

    def move_value(self, sender: str, to: str, amount: UInt) -> None:
        if not amount.value:
            return
        world = self.world
        old_from = world.balance(sender)
        if old_from.value < amount.value:
            raise _Abort(Status.REVERTED, f"insufficient balance in {sender}")
        new_from = UInt(256, old_from.value - amount.value)
        world.set_balance(sender, new_from)
        self.trace.append(BalanceChange(sender, old_from.value, new_from.value))
        old_to = world.balance(to)
        new_to = UInt(256, old_to.value + amount.value)
        world.set_balance(to, new_to)
        self.trace.append(BalanceChange(to, old_to.value, new_to.value))

    # -- frames --------------------------------------------------------------

    def run_frame(self, via: str, caller: str, callee: str, function: Optional[str],
                  args: Sequence, value: UInt, gas: int, depth: int) -> tuple:
        """Execute one message call; returns ``(status, gas_left)``."""
        world = self.world
        acct = world.accounts.get(callee)
        code = acct.contract if acct is not None else None
        fn = None
        if code is not None:
            fn = code.function(function) if function is not None else None
            if fn is None:
                fn = code.fallback
        shown = fn.name if fn is not None else function
        self.trace.append(FrameEnter(depth, via, caller, callee, shown, value.value, gas))
        if depth >= MAX_CALL_DEPTH:
            self.trace.append(FrameExit(depth, Status.DEPTH_EXCEEDED, 0))
            return Status.DEPTH_EXCEEDED, gas

        frame = Frame(caller, callee, value, gas, depth, code, fn)
        cp = world.snapshot()
        status = Status.OK
        try:
            if acct is None:
                raise _Abort(Status.REVERTED, f"unknown account {callee}")
            self.move_value(caller, callee, value)
            if code is None:
                if function is not None:
                    raise _Abort(Status.REVERTED, f"{callee} has no code")
            elif fn is None:
                raise _Abort(Status.REVERTED, f"{code.name} has no function {function!r} and no fallback")
            else:
                if value.value and not fn.payable:
                    raise _Abort(Status.REVERTED, f"{code.name}.{fn.name} is not payable")
                if not fn.is_fallback:
                    frame.args = self.bind_args(fn, args)
                try:
                    self.exec_block(frame, fn.body, ())
                except _Stop:
                    pass
        except _Abort as abort:
            status = abort.status
        if status is Status.OK:
            world.release(cp)
        else:
            world.rollback(cp)
            if status is Status.OUT_OF_GAS:
                frame.gas = 0
        self.trace.append(FrameExit(depth, status, gas - frame.gas))
        return status, frame.gas

    def bind_args(self, fn: ir.Function, args: Sequence) -> dict:
        if len(args) != len(fn.params):
            raise _Abort(Status.REVERTED, f"{fn.name} takes {len(fn.params)} argument(s), {len(args)} given")
        bound = {}
        for p, a in zip(fn.params, args):
            bound[p.name] = coerce_arg(p.type, a)
        return bound

    # -- statements ----------------------------------------------------------

    def charge(self, frame: Frame, amount: int) -> None:
        if frame.gas < amount:
            frame.gas = 0
            raise _Abort(Status.OUT_OF_GAS, "out of gas")
        frame.gas -= amount

    def exec_block(self, frame: Frame, body: tuple, prefix: tuple) -> None:
        for i, stmt in enumerate(body):
            self.exec_stmt(frame, stmt, prefix + (i,))

    def exec_stmt(self, frame: Frame, stmt, path: tuple) -> None:
        is_call = isinstance(stmt, ir.EXTERNAL_CALLS)
        self.charge(frame, GAS_CALL if is_call else GAS_STATEMENT)
        self.trace.append(StatementExec(
            frame.depth, ir.statement_kind(stmt),
            f"{frame.contract.name}.{frame.function.name}:{format_path(path)}"))
        if is_call:
            self.exec_external(frame, stmt)
        elif isinstance(stmt, ir.Require):
            if not self.eval(frame, stmt.cond):
                raise _Abort(Status.REVERTED, "require failed")
        elif isinstance(stmt, ir.Assign):
            self.charge(frame, GAS_STORAGE_WRITE)
            key = self.eval(frame, stmt.key) if stmt.key is not None else None
            self.world.store(frame.callee, stmt.slot, key, self.eval(frame, stmt.rhs))
        elif isinstance(stmt, ir.Let):
            frame.locals[stmt.name] = self.eval(frame, stmt.rhs)
        elif isinstance(stmt, ir.If):
            if self.eval(frame, stmt.cond):
                self.exec_block(frame, stmt.then, path + ("then",))
            else:
                self.exec_block(frame, stmt.orelse, path + ("else",))
        elif isinstance(stmt, ir.ForEach):
            for item in frame.args[stmt.over]:
                frame.locals[stmt.var] = item
                self.exec_block(frame, stmt.body, path + ("body",))
        elif isinstance(stmt, ir.Stop):
            raise _Stop()
        else:
            raise TypeError(f"unknown statement {stmt!r}")

    def exec_external(self, frame: Frame, stmt) -> None:
        target = self.eval(frame, stmt.target)
        value = self.eval(frame, stmt.value)
        if isinstance(stmt, (ir.Transfer, ir.Send)):
            via = "transfer" if isinstance(stmt, ir.Transfer) else "send"
            status = self.dispatch_call(frame, via, target, None, (), value, None)
            if isinstance(stmt, ir.Transfer):
                if status is not Status.OK:
                    raise _Abort(Status.REVERTED, f"transfer to {target} failed ({status.value})")
            else:
                frame.locals[stmt.result] = status is Status.OK
            return
        cap = self.eval(frame, stmt.gas).value if stmt.gas is not None else None
        if isinstance(stmt, ir.Call):
            status = self.dispatch_call(frame, "call", target, None, (), value, cap)
        else:
            args = tuple(self.eval(frame, a) for a in stmt.args)
            status = self.dispatch_call(frame, "invoke", target, stmt.function, args, value, cap)
            if stmt.result is None and status is not Status.OK:
                raise _Abort(Status.REVERTED, f"{target}.{stmt.function} failed ({status.value})")
        if stmt.result is not None:
            frame.locals[stmt.result] = status is Status.OK

    def dispatch_call(self, frame: Frame, kind: str, target: str, function: Optional[str],
                      args: tuple, value: UInt, gas_cap: Optional[int]) -> Status:
        """Run a sub-call from ``frame``; gas forwarding follows the table in the module docstring."""
        if kind in ("transfer", "send"):
            self.charge(frame, STIPEND)
            forwarded = STIPEND
        else:
            forwarded = frame.gas - frame.gas // 64
            if gas_cap is not None:
                forwarded = min(forwarded, gas_cap)
            frame.gas -= forwarded
        status, left = self.run_frame(kind, frame.callee, target, function, args,
                                      value, forwarded, frame.depth + 1)
        frame.gas += left
        return status

    # -- expressions ---------------------------------------------------------

    def eval(self, frame: Frame, e):
        t = type(e)
        if t is ir.IntLit:
            return UInt(256, e.value)
        if t is ir.Local:
            return frame.locals[e.name]
        if t is ir.Param:
            return frame.args[e.name]
        if t is ir.MapRead:
            return self.world.load(frame.callee, e.slot, self.eval(frame, e.key))
        if t is ir.SlotRead:
            return self.world.load(frame.callee, e.slot)
        if t is ir.Arith:
            a = self.eval(frame, e.left)
            b = self.eval(frame, e.right)
            if not e.checked:
                return wrap_arith(e.kind, a, b)
            try:
                return checked_arith(e.kind, a, b)
            except CheckedOverflowError as exc:
                raise _Abort(Status.REVERTED, str(exc)) from None
        if t is ir.Compare:
            a = self.eval(frame, e.left)
            b = self.eval(frame, e.right)
            op = e.op
            if op == "==":
                return a == b
            a, b = a.value, b.value
            if op == "<":
                return a < b
            if op == "<=":
                return a <= b
            if op == ">":
                return a > b
            return a >= b
        if t is ir.BoolOp:
            if e.op == "&&":
                return self.eval(frame, e.left) and self.eval(frame, e.right)
            return self.eval(frame, e.left) or self.eval(frame, e.right)
        if t is ir.Not:
            return not self.eval(frame, e.operand)
        if t is ir.BoolLit:
            return e.value
        if t is ir.AddrLit:
            return e.name
        if t is ir.MsgSender:
            return frame.caller
        if t is ir.MsgValue:
            return frame.value
        if t is ir.ThisBalance:
            return self.world.balance(frame.callee)
        if t is ir.ThisAddress:
            return frame.callee
        if t is ir.BalanceOf:
            return self.world.balance(self.eval(frame, e.target))
        if t is ir.ListLen:
            return UInt(256, len(frame.args[e.param]))
        raise TypeError(f"unknown expression {e!r}")


def coerce_arg(vtype: ValueType, value):
    """Convert a host-level argument to its runtime representation."""
    if vtype is ValueType.U256:
        if isinstance(value, UInt):
            if value.width != 256:
                raise _Abort(Status.REVERTED, "u256 argument must be 256 bits wide")
            return value
        if isinstance(value, int) and not isinstance(value, bool) and 0 <= value < (1 << 256):
            return UInt(256, value)
    elif vtype is ValueType.ADDRESS:
        if isinstance(value, str):
            return value
    elif vtype is ValueType.ADDRESS_LIST:
        if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
            return tuple(value)
    raise _Abort(Status.REVERTED, f"bad {vtype.value} argument {value!r}")


# deep reentrancy nests several Python frames per message call
_RECURSION_LIMIT = 30_000
_THREAD_STACK = 256 * 1024 * 1024
_depth_lock = threading.Lock()
_active = 0
_saved_limit = 0


@contextmanager
def _deep_recursion():
    """Raise the interpreter recursion limit while any transaction is running."""
    global _active, _saved_limit
    with _depth_lock:
        if _active == 0:
            _saved_limit = sys.getrecursionlimit()
            sys.setrecursionlimit(max(_saved_limit, _RECURSION_LIMIT))
        _active += 1
    try:
        yield
    finally:
        with _depth_lock:
            _active -= 1
            if _active == 0:
                sys.setrecursionlimit(_saved_limit)


def _run_with_big_stack(fn):
    result = {}

    def target():
        try:
            result["value"] = fn()
        except BaseException as exc:  # re-raised in the calling thread
            result["error"] = exc

    old = threading.stack_size()
    threading.stack_size(_THREAD_STACK)
    try:
        worker = threading.Thread(target=target, name="vulnlab-vm")
        worker.start()
    finally:
        threading.stack_size(old)
    worker.join()
    if "error" in result:
        raise result["error"]
    return result["value"]


def execute_transaction(world: WorldState, tx: Transaction) -> tuple:
    """Run ``tx`` against ``world`` in place.

    Returns ``(world, CallOutcome, trace)``.  Any failure leaves ``world``
    exactly as it was before the call; out-of-gas bills the whole gas limit.
    """
    interp = Interpreter(world)
    value = UInt(256, tx.value)

    def run():
        if tx.gas_limit < GAS_TX:
            interp.trace.append(FrameEnter(0, "tx", tx.sender, tx.to, tx.function, value.value, tx.gas_limit))
            interp.trace.append(FrameExit(0, Status.OUT_OF_GAS, tx.gas_limit))
            return Status.OUT_OF_GAS, 0
        if tx.sender not in world:
            interp.trace.append(FrameEnter(0, "tx", tx.sender, tx.to, tx.function, value.value,
                                           tx.gas_limit - GAS_TX))
            interp.trace.append(FrameExit(0, Status.REVERTED, 0))
            return Status.REVERTED, tx.gas_limit - GAS_TX
        with _deep_recursion():
            return interp.run_frame("tx", tx.sender, tx.to, tx.function, tuple(tx.args), value,
                                    tx.gas_limit - GAS_TX, 0)

    status, left = _run_with_big_stack(run)
    gas_used = tx.gas_limit if status is Status.OUT_OF_GAS else tx.gas_limit - left
    return world, CallOutcome(status, gas_used), interp.trace
