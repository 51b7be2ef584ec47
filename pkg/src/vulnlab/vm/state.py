"""World state, per-account storage and the undo journal behind reverts."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

from vulnlab.lang.ir import Contract, StorageKind
from vulnlab.numeric import UInt

ZERO = UInt(256, 0)
_MISSING = object()


class JournalError(RuntimeError):
    """Checkpoint misuse: rolling back or releasing a checkpoint that is not live."""


@dataclass
class Account:
    balance: UInt = ZERO
    contract: Optional[Contract] = None
    storage: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Checkpoint:
    id: int
    position: int


def initial_storage(contract: Optional[Contract]) -> dict:
    if contract is None:
        return {}
    storage = {}
    for decl in contract.storage:
        if decl.kind is StorageKind.MAP_ADDR_U256:
            storage[decl.name] = {}
        elif decl.kind is StorageKind.U256:
            storage[decl.name] = ZERO
        else:
            storage[decl.name] = False
    return storage


class Journal:
    """Ordered undo log with nested checkpoints.

    Checkpoints must be released innermost-first; rolling back to a live
    checkpoint discards every checkpoint taken after it.
    """

    def __init__(self):
        self.records: list = []
        self.live: list = []
        self._next_id = 0

    def checkpoint(self) -> Checkpoint:
        cp = Checkpoint(self._next_id, len(self.records))
        self._next_id += 1
        self.live.append(cp)
        return cp

    def _index(self, cp: Checkpoint) -> int:
        for i in range(len(self.live) - 1, -1, -1):
            if self.live[i] == cp:
                return i
        raise JournalError(f"checkpoint {cp.id} is not live (already released or rolled back)")

    def release(self, cp: Checkpoint) -> None:
        i = self._index(cp)
        if i != len(self.live) - 1:
            raise JournalError(f"checkpoint {cp.id} released before the {len(self.live) - 1 - i} "
                               "checkpoint(s) nested inside it")
        self.live.pop()
        if not self.live:
            self.records.clear()

    def undo_to(self, cp: Checkpoint, world: "WorldState") -> None:
        i = self._index(cp)
        while len(self.records) > cp.position:
            world._undo(self.records.pop())
        del self.live[i:]


class WorldState:
    """Accounts keyed by address label.

    Mutations are journaled while at least one checkpoint is live.
    """

    def __init__(self):
        self.accounts: dict = {}
        self.journal = Journal()

    # -- accounts ------------------------------------------------------------

    def create_account(self, address: str, balance: int = 0,
                       contract: Optional[Contract] = None) -> Account:
        if address in self.accounts:
            raise ValueError(f"account {address!r} already exists")
        acct = Account(UInt(256, int(balance)), contract, initial_storage(contract))
        self.accounts[address] = acct
        return acct

    def __contains__(self, address: str) -> bool:
        return address in self.accounts

    def balance(self, address: str) -> UInt:
        acct = self.accounts.get(address)
        return acct.balance if acct is not None else ZERO

    def set_balance(self, address: str, value: UInt) -> None:
        acct = self.accounts[address]
        if self.journal.live:
            self.journal.records.append(("balance", address, acct.balance))
        acct.balance = value

    def total_balance(self) -> int:
        return sum(a.balance.value for a in self.accounts.values())

    # -- storage -------------------------------------------------------------

    def load(self, address: str, slot: str, key: Optional[str] = None):
        value = self.accounts[address].storage[slot]
        if key is None:
            return value
        return value.get(key, ZERO)

    def store(self, address: str, slot: str, key: Optional[str], value) -> None:
        storage = self.accounts[address].storage
        if key is None:
            if self.journal.live:
                self.journal.records.append(("slot", address, slot, None, storage[slot]))
            storage[slot] = value
        else:
            mapping = storage[slot]
            if self.journal.live:
                self.journal.records.append(("slot", address, slot, key, mapping.get(key, _MISSING)))
            mapping[key] = value

    def _undo(self, record) -> None:
        if record[0] == "balance":
            _, address, old = record
            self.accounts[address].balance = old
            return
        _, address, slot, key, old = record
        storage = self.accounts[address].storage
        if key is None:
            storage[slot] = old
        elif old is _MISSING:
            del storage[slot][key]
        else:
            storage[slot][key] = old

    # -- checkpoints ---------------------------------------------------------

    def snapshot(self) -> Checkpoint:
        return self.journal.checkpoint()

    def rollback(self, cp: Checkpoint) -> "WorldState":
        self.journal.undo_to(cp, self)
        return self

    def release(self, cp: Checkpoint) -> None:
        self.journal.release(cp)

    # -- inspection ----------------------------------------------------------

    def canonical(self) -> list:
        """Sorted ``(address, balance, code, storage)`` tuples; the basis of :meth:`state_hash`."""
        out = []
        for address in sorted(self.accounts):
            acct = self.accounts[address]
            slots = []
            for slot in sorted(acct.storage):
                value = acct.storage[slot]
                if isinstance(value, dict):
                    value = [[k, value[k].value] for k in sorted(value)]
                elif isinstance(value, UInt):
                    value = value.value
                slots.append([slot, value])
            code = acct.contract.name if acct.contract is not None else None
            out.append([address, acct.balance.value, code, slots])
        return out

    def state_hash(self) -> str:
        blob = json.dumps(self.canonical(), separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def copy(self) -> "WorldState":
        if self.journal.live:
            raise JournalError("cannot copy a world with live checkpoints")
        other = WorldState()
        for address, acct in self.accounts.items():
            storage = {k: dict(v) if isinstance(v, dict) else v for k, v in acct.storage.items()}
            other.accounts[address] = Account(acct.balance, acct.contract, storage)
        return other
