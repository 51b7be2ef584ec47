"""Message-call virtual machine: world state, journal, interpreter and trace."""
from vulnlab.vm.interpreter import (
    GAS_CALL, GAS_STATEMENT, GAS_STORAGE_WRITE, GAS_TX, MAX_CALL_DEPTH, STIPEND,
    CallOutcome, Frame, Transaction, execute_transaction,
)
from vulnlab.vm.state import Account, Checkpoint, JournalError, WorldState
from vulnlab.vm.trace import BalanceChange, FrameEnter, FrameExit, StatementExec, Status, dump_jsonl

__all__ = [
    "GAS_CALL", "GAS_STATEMENT", "GAS_STORAGE_WRITE", "GAS_TX", "MAX_CALL_DEPTH", "STIPEND",
    "CallOutcome", "Frame", "Transaction", "execute_transaction",
    "Account", "Checkpoint", "JournalError", "WorldState",
    "BalanceChange", "FrameEnter", "FrameExit", "StatementExec", "Status", "dump_jsonl",
]
