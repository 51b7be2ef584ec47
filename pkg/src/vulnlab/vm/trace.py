"""Execution trace events and their line-delimited JSON export."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, fields
from typing import Iterable, Optional, TextIO, Union


class Status(str, enum.Enum):
    OK = "ok"
    REVERTED = "reverted"
    OUT_OF_GAS = "out-of-gas"
    DEPTH_EXCEEDED = "depth-exceeded"


@dataclass(frozen=True)
class FrameEnter:
    depth: int
    via: str  # "tx", "call", "invoke", "transfer" or "send"
    caller: str
    callee: str
    function: Optional[str]  # None for a plain value transfer to an account without code
    value: int
    gas: int

    event = "frame_enter"


@dataclass(frozen=True)
class FrameExit:
    depth: int
    status: Status
    gas_used: int

    event = "frame_exit"


@dataclass(frozen=True)
class StatementExec:
    depth: int
    kind: str
    location: str

    event = "statement"


@dataclass(frozen=True)
class BalanceChange:
    address: str
    old: int
    new: int

    event = "balance_change"


TraceEvent = Union[FrameEnter, FrameExit, StatementExec, BalanceChange]


def to_record(ev: TraceEvent) -> dict:
    record = {"event": ev.event}
    for f in fields(ev):
        value = getattr(ev, f.name)
        record[f.name] = value.value if isinstance(value, Status) else value
    return record


def dump_jsonl(events: Iterable[TraceEvent], out: TextIO) -> None:
    for ev in events:
        out.write(json.dumps(to_record(ev), separators=(",", ":")))
        out.write("\n")


def is_balanced(events: Iterable[TraceEvent]) -> bool:
    """True when FrameEnter/FrameExit events nest properly with matching depths."""
    stack = []
    for ev in events:
        if isinstance(ev, FrameEnter):
            stack.append(ev.depth)
        elif isinstance(ev, FrameExit):
            if not stack or stack.pop() != ev.depth:
                return False
    return not stack


def max_nesting(events: Iterable[TraceEvent]) -> int:
    depth = best = 0
    for ev in events:
        if isinstance(ev, FrameEnter):
            depth += 1
            best = max(best, depth)
        elif isinstance(ev, FrameExit):
            depth -= 1
    return best
