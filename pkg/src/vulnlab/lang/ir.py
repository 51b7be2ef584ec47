"""Intermediate representation of the toy contract language.

All nodes are frozen dataclasses.  Source positions are carried in ``loc``
fields that are excluded from equality, so a contract re-parsed from its
pretty-printed form compares equal to the original.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from vulnlab.numeric import ArithKind

FALLBACK = "fallback"


@dataclass(frozen=True)
class Loc:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


def _loc():
    return field(default=None, compare=False, repr=False)


class ValueType(enum.Enum):
    U256 = "u256"
    BOOL = "bool"
    ADDRESS = "address"
    ADDRESS_LIST = "address[]"


class StorageKind(enum.Enum):
    MAP_ADDR_U256 = "map(address => u256)"
    U256 = "u256"
    BOOL = "bool"


PARAM_TYPES = (ValueType.U256, ValueType.ADDRESS, ValueType.ADDRESS_LIST)


# -- expressions -------------------------------------------------------------

@dataclass(frozen=True)
class IntLit:
    value: int
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class BoolLit:
    value: bool
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class AddrLit:
    name: str
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Local:
    name: str
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Param:
    name: str
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class SlotRead:
    slot: str
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class MapRead:
    slot: str
    key: "Expr"
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class MsgSender:
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class MsgValue:
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class ThisBalance:
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class ThisAddress:
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class BalanceOf:
    target: "Expr"
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class ListLen:
    param: str
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Arith:
    kind: ArithKind
    left: "Expr"
    right: "Expr"
    checked: bool = False
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Compare:
    op: str  # one of <, <=, ==, >=, >
    left: "Expr"
    right: "Expr"
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class BoolOp:
    op: str  # "&&" or "||"
    left: "Expr"
    right: "Expr"
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Not:
    operand: "Expr"
    loc: Optional[Loc] = _loc()


Expr = Union[IntLit, BoolLit, AddrLit, Local, Param, SlotRead, MapRead, MsgSender, MsgValue,
             ThisBalance, ThisAddress, BalanceOf, ListLen, Arith, Compare, BoolOp, Not]

COMPARE_OPS = ("<", "<=", "==", ">=", ">")


# -- statements --------------------------------------------------------------

@dataclass(frozen=True)
class Require:
    cond: Expr
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Assign:
    """Storage write; ``key`` is set for map entries and None for scalar slots."""
    slot: str
    key: Optional[Expr]
    rhs: Expr
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Let:
    name: str
    rhs: Expr
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class If:
    cond: Expr
    then: tuple
    orelse: tuple = ()
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class ForEach:
    var: str
    over: str
    body: tuple
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Call:
    """Low-level call: runs the target's fallback with forwarded gas."""
    target: Expr
    value: Expr
    gas: Optional[Expr] = None
    result: Optional[str] = None
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Transfer:
    target: Expr
    value: Expr
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Send:
    target: Expr
    value: Expr
    result: str
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Invoke:
    """External call of a named function on another (or the same) contract."""
    target: Expr
    function: str
    args: tuple
    value: Expr
    gas: Optional[Expr] = None
    result: Optional[str] = None
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Stop:
    loc: Optional[Loc] = _loc()


Statement = Union[Require, Assign, Let, If, ForEach, Call, Transfer, Send, Invoke, Stop]
EXTERNAL_CALLS = (Call, Transfer, Send, Invoke)


# -- declarations ------------------------------------------------------------

@dataclass(frozen=True)
class StorageDecl:
    name: str
    kind: StorageKind
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class ParamDecl:
    name: str
    type: ValueType
    loc: Optional[Loc] = _loc()


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple
    payable: bool
    body: tuple
    loc: Optional[Loc] = _loc()

    @property
    def is_fallback(self) -> bool:
        return self.name == FALLBACK


@dataclass(frozen=True)
class Contract:
    name: str
    storage: tuple = ()
    functions: tuple = ()
    fallback: Optional[Function] = None
    loc: Optional[Loc] = _loc()

    def function(self, name: str) -> Optional[Function]:
        for fn in self.functions:
            if fn.name == name:
                return fn
        return None

    def storage_kind(self, name: str) -> Optional[StorageKind]:
        for decl in self.storage:
            if decl.name == name:
                return decl.kind
        return None

    def all_functions(self) -> tuple:
        """Named functions followed by the fallback, if any."""
        return self.functions + ((self.fallback,) if self.fallback else ())


# -- traversal helpers -------------------------------------------------------

StmtPath = tuple


def format_path(path: StmtPath) -> str:
    return ".".join(str(p) for p in path)


def parse_path(text: str) -> StmtPath:
    return tuple(int(p) if p.isdigit() else p for p in text.split("."))


def iter_statements(body: tuple, prefix: StmtPath = ()) -> Iterator[tuple]:
    """Yield ``(path, statement)`` pairs in textual pre-order.

    Paths index into nested blocks: ``(3, "then", 0)`` is the first statement
    of the then-branch of the fourth top-level statement.
    """
    for i, stmt in enumerate(body):
        path = prefix + (i,)
        yield path, stmt
        if isinstance(stmt, If):
            yield from iter_statements(stmt.then, path + ("then",))
            yield from iter_statements(stmt.orelse, path + ("else",))
        elif isinstance(stmt, ForEach):
            yield from iter_statements(stmt.body, path + ("body",))


def resolve_path(body: tuple, path: StmtPath):
    """Return the statement at ``path`` or raise ``LookupError``."""
    block = body
    stmt = None
    i = 0
    while i < len(path):
        idx = path[i]
        if not isinstance(idx, int) or not 0 <= idx < len(block):
            raise LookupError(f"no statement at {format_path(path)}")
        stmt = block[idx]
        i += 1
        if i == len(path):
            return stmt
        branch = path[i]
        i += 1
        if isinstance(stmt, If) and branch == "then":
            block = stmt.then
        elif isinstance(stmt, If) and branch == "else":
            block = stmt.orelse
        elif isinstance(stmt, ForEach) and branch == "body":
            block = stmt.body
        else:
            raise LookupError(f"no statement at {format_path(path)}")
    raise LookupError("empty statement path")


def stmt_exprs(stmt) -> tuple:
    """Direct sub-expressions of a statement (not of nested blocks)."""
    if isinstance(stmt, (Require,)):
        return (stmt.cond,)
    if isinstance(stmt, Assign):
        return ((stmt.key,) if stmt.key is not None else ()) + (stmt.rhs,)
    if isinstance(stmt, Let):
        return (stmt.rhs,)
    if isinstance(stmt, If):
        return (stmt.cond,)
    if isinstance(stmt, (Call,)):
        return (stmt.target, stmt.value) + ((stmt.gas,) if stmt.gas is not None else ())
    if isinstance(stmt, (Transfer, Send)):
        return (stmt.target, stmt.value)
    if isinstance(stmt, Invoke):
        return (stmt.target,) + tuple(stmt.args) + (stmt.value,) + (
            (stmt.gas,) if stmt.gas is not None else ())
    return ()


def walk_expr(expr) -> Iterator:
    """Pre-order walk over an expression tree."""
    yield expr
    if isinstance(expr, (Arith, Compare, BoolOp)):
        yield from walk_expr(expr.left)
        yield from walk_expr(expr.right)
    elif isinstance(expr, Not):
        yield from walk_expr(expr.operand)
    elif isinstance(expr, MapRead):
        yield from walk_expr(expr.key)
    elif isinstance(expr, BalanceOf):
        yield from walk_expr(expr.target)


def statement_kind(stmt) -> str:
    return type(stmt).__name__.lower()
