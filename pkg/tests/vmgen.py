"""Random transactions over a small fixture world, with per-transaction invariant checks."""
from __future__ import annotations

import random

from vulnlab.lang import parse_contract, parse_source
from vulnlab.numeric import ETHER
from vulnlab.scenarios import FIXTURE_DIR
from vulnlab.vm import MAX_CALL_DEPTH, STIPEND, FrameEnter, Transaction, WorldState, execute_transaction
from vulnlab.vm.trace import BalanceChange, is_balanced

COUNTER = "contract K { storage n: u256; fn bump() { n = n + 1; } }"
RECURSE = "contract R { storage depth: u256; fn go() { depth = depth + 1; invoke this.go() value=0 -> ok; } }"


def random_world() -> WorldState:
    w = WorldState()
    contracts = {c.name: c for f in ("bank_vulnerable.ctr", "attacker.ctr", "benign_receiver.ctr",
                                     "token_bec.ctr", "token_safemath_smt.ctr")
                 for c in parse_source((FIXTURE_DIR / f).read_text())}
    w.create_account("bank", 3 * ETHER, contracts["Bank"])
    w.create_account("attacker", 0, contracts["Attacker"])
    w.create_account("benign", 0, contracts["BenignReceiver"])
    w.create_account("token", 0, contracts["BecToken"])
    w.create_account("smt", 0, contracts["SmtToken"])
    w.create_account("counter", 0, parse_contract(COUNTER))
    w.create_account("stipend", 0, parse_contract(
        "contract S { payable fn pay(to: address, v: u256) { transfer to value=v; send to value=v -> ok; } }"))
    w.create_account("r", 0, parse_contract(RECURSE))
    for name in ("owner", "alice", "bob", "eve"):
        w.create_account(name, 20 * ETHER)
    return w


def random_tx(rng: random.Random) -> Transaction:
    eoas = ["owner", "alice", "bob", "eve", "nobody"]
    addrs = eoas + ["bank", "attacker", "benign", "token", "smt", "counter", "stipend", "r"]
    amount = lambda: rng.choice([0, 1, ETHER, 2 * ETHER, rng.randrange(5 * ETHER), 2**255, 2**256 - 1])
    menu = [
        ("bank", "statistis", lambda: ()),
        ("bank", "withdraw", lambda: (amount(),)),
        ("attacker", "deposit", lambda: ()),
        ("attacker", "attack", lambda: (rng.choice([1, ETHER]),)),
        ("benign", "attack", lambda: (ETHER,)),
        ("token", "mint", lambda: (rng.choice(addrs), amount())),
        ("token", "transfer", lambda: (rng.choice(addrs), amount())),
        ("token", "batchTransfer", lambda: (tuple(rng.choice(addrs) for _ in range(rng.randrange(4))), amount())),
        ("smt", "mint", lambda: (rng.choice(addrs), amount())),
        ("smt", "transferProxy", lambda: (rng.choice(addrs), rng.choice(addrs), amount(), amount())),
        ("counter", "bump", lambda: ()),
        ("stipend", "pay", lambda: (rng.choice(addrs), rng.choice([0, 1, ETHER]))),
        ("r", "go", lambda: ()),
        (rng.choice(eoas), None, lambda: ()),
        ("bank", "nosuch", lambda: ()),
    ]
    to, fn, args = rng.choice(menu)
    value = rng.choice([0, 0, 1, ETHER, 3 * ETHER, 30 * ETHER])
    gas = rng.choice([0, 50, 150, 500, 3_000, 20_000, 200_000, 10_000_000])
    return Transaction(rng.choice(eoas), to, fn, args(), value, gas)


def check_invariants(rng: random.Random, count: int) -> set:
    """Run ``count`` random transactions, asserting the VM invariants after each."""
    w = random_world()
    statuses = set()
    for i in range(count):
        if i % 300 == 0:
            w = random_world()
        tx = random_tx(rng)
        total, before = w.total_balance(), w.state_hash()
        _, out, trace = execute_transaction(w, tx)
        statuses.add(out.status)
        # ether conservation: value only moves between accounts
        assert w.total_balance() == total
        # atomicity: a failed transaction leaves no trace in state
        if not out.ok:
            assert w.state_hash() == before
        assert is_balanced(trace)
        assert not w.journal.live
        assert 0 <= out.gas_used <= tx.gas_limit
        for e in trace:
            if isinstance(e, FrameEnter) and e.via in ("transfer", "send"):
                assert e.gas == STIPEND
            if isinstance(e, FrameEnter):
                assert e.depth <= MAX_CALL_DEPTH
            if isinstance(e, BalanceChange):
                assert e.new >= 0
    return statuses
