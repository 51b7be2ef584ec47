from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from vulnlab.lang import parse_contract
from vulnlab.numeric import ETHER, UInt
from vulnlab.scenarios import FIXTURE_DIR
from vulnlab.vm import (
    GAS_CALL, GAS_STATEMENT, GAS_STORAGE_WRITE, GAS_TX, MAX_CALL_DEPTH, STIPEND, FrameEnter, FrameExit,
    JournalError, Status, Transaction, WorldState, execute_transaction,
)
from vulnlab.vm.trace import is_balanced, max_nesting
from vmgen import COUNTER, RECURSE, check_invariants


def fixture(name):
    return parse_contract((FIXTURE_DIR / name).read_text())


def world_with(**contracts):
    w = WorldState()
    for address, src in contracts.items():
        w.create_account(address, 0, parse_contract(src) if isinstance(src, str) else src)
    w.create_account("eoa", 100 * ETHER)
    return w



class TestGas:
    def test_storage_writes_cost_table(self):
        w = world_with(k=COUNTER)
        _, out, _ = execute_transaction(w, Transaction("eoa", "k", "bump"))
        assert out.ok
        assert out.gas_used == GAS_TX + GAS_STATEMENT + GAS_STORAGE_WRITE

    def test_zero_gas_limit_is_out_of_gas(self):
        w = world_with(k="contract K { storage n: u256; fn bump() { n = n + 1; } }")
        before = w.state_hash()
        _, out, trace = execute_transaction(w, Transaction("eoa", "k", "bump", gas_limit=0))
        assert out.status is Status.OUT_OF_GAS and out.gas_used == 0
        assert w.state_hash() == before
        assert is_balanced(trace)

    def test_out_of_gas_bills_full_limit_and_rolls_back(self):
        w = world_with(k="contract K { storage n: u256; payable fn bump() { n = n + 1; n = n + 1; } }")
        before = w.state_hash()
        limit = GAS_TX + GAS_STATEMENT + GAS_STORAGE_WRITE + 5
        _, out, _ = execute_transaction(w, Transaction("eoa", "k", "bump", value=ETHER, gas_limit=limit))
        assert out.status is Status.OUT_OF_GAS and out.gas_used == limit
        assert w.state_hash() == before

    def test_call_forwards_all_but_one_64th(self):
        w = world_with(b="contract B { fn go() { call @sink value=0; } }")
        w.create_account("sink")
        _, out, trace = execute_transaction(w, Transaction("eoa", "b", "go", gas_limit=100_000))
        enters = [e for e in trace if isinstance(e, FrameEnter)]
        avail = 100_000 - GAS_TX - GAS_CALL
        assert enters[1].gas == avail - avail // 64

    def test_gas_cap_limits_forwarding(self):
        w = world_with(b="contract B { fn go() { call @sink value=0 gas=500; } }")
        w.create_account("sink")
        _, _, trace = execute_transaction(w, Transaction("eoa", "b", "go"))
        assert [e.gas for e in trace if isinstance(e, FrameEnter)][1] == 500

    @pytest.mark.parametrize("stmt", ["transfer @r value=1;", "send @r value=1 -> ok;"])
    def test_stipend_frames(self, stmt):
        w = world_with(b=f"contract B {{ payable fn go() {{ {stmt} }} }}",
                       r="contract R { fallback payable {} }")
        _, out, trace = execute_transaction(w, Transaction("eoa", "b", "go", value=5))
        assert out.ok
        assert [e.gas for e in trace if isinstance(e, FrameEnter) and e.depth == 1] == [STIPEND]
        assert w.balance("r").value == 1


class TestFailureSemantics:
    SRC = ("contract B {{ storage ok2: bool; payable fn go() {{ {stmt} ok2 = true; }} }}")
    GREEDY = "contract G { storage n: u256; fallback payable { n = n + 1; n = n + 1; n = n + 1; n = n + 1; n = n + 1; n = n + 1; n = n + 1; n = n + 1; n = n + 1; n = n + 1; n = n + 1; } }"

    def test_call_failure_is_caught(self):
        w = world_with(b=self.SRC.format(stmt="call @g value=1 -> ok;"), g=self.GREEDY.replace("payable ", ""))
        _, out, _ = execute_transaction(w, Transaction("eoa", "b", "go", value=5))
        assert out.ok and w.load("b", "ok2") is True
        assert w.balance("g").value == 0 and w.balance("b").value == 5

    def test_send_failure_is_caught(self):
        w = world_with(b=self.SRC.format(stmt="send @g value=1 -> ok;"), g=self.GREEDY)
        _, out, _ = execute_transaction(w, Transaction("eoa", "b", "go", value=5))
        assert out.ok and w.balance("g").value == 0

    def test_transfer_failure_reverts_parent(self):
        w = world_with(b=self.SRC.format(stmt="transfer @g value=1;"), g=self.GREEDY)
        before = w.state_hash()
        _, out, _ = execute_transaction(w, Transaction("eoa", "b", "go", value=5))
        assert out.status is Status.REVERTED and w.state_hash() == before

    def test_invoke_without_result_propagates(self):
        w = world_with(b=self.SRC.format(stmt="invoke @c.f() value=0;"),
                       c="contract C { fn f() { require(false); } }")
        _, out, _ = execute_transaction(w, Transaction("eoa", "b", "go"))
        assert out.status is Status.REVERTED

    def test_invoke_with_result_is_caught(self):
        w = world_with(b=self.SRC.format(stmt="invoke @c.f() value=0 -> r;"),
                       c="contract C { fn f() { require(false); } }")
        _, out, _ = execute_transaction(w, Transaction("eoa", "b", "go"))
        assert out.ok and w.load("b", "ok2") is True

    def test_value_to_non_payable_reverts(self):
        w = world_with(k=COUNTER)
        _, out, _ = execute_transaction(w, Transaction("eoa", "k", "bump", value=1))
        assert out.status is Status.REVERTED and w.balance("eoa").value == 100 * ETHER

    def test_unknown_function_uses_fallback(self):
        w = world_with(k="contract K { storage hit: bool; fallback { hit = true; } }")
        _, out, _ = execute_transaction(w, Transaction("eoa", "k", "nope"))
        assert out.ok and w.load("k", "hit") is True

    def test_unknown_function_without_fallback_reverts(self):
        w = world_with(k=COUNTER)
        _, out, _ = execute_transaction(w, Transaction("eoa", "k", "nope"))
        assert out.status is Status.REVERTED

    def test_unknown_sender_reverts(self):
        w = world_with(k=COUNTER)
        _, out, _ = execute_transaction(w, Transaction("ghost", "k", "bump"))
        assert out.status is Status.REVERTED

    def test_bad_argument_reverts(self):
        w = world_with(t=fixture("token_bec.ctr"))
        _, out, _ = execute_transaction(w, Transaction("eoa", "t", "transfer", ("x", -1)))
        assert out.status is Status.REVERTED

    def test_stop_ends_frame_successfully(self):
        w = world_with(k="contract K { storage n: u256; fn f() { n = 1; stop; n = 2; } }")
        _, out, _ = execute_transaction(w, Transaction("eoa", "k", "f"))
        assert out.ok and w.load("k", "n") == UInt(256, 1)

    def test_checked_overflow_reverts(self):
        w = world_with(k="contract K { storage n: u256; fn f(a: u256) { n = safe_add(a, 1); } }")
        _, out, _ = execute_transaction(w, Transaction("eoa", "k", "f", (2**256 - 1,)))
        assert out.status is Status.REVERTED
        _, out, _ = execute_transaction(w, Transaction("eoa", "k", "f", (5,)))
        assert out.ok and w.load("k", "n").value == 6


def test_call_depth_fails_at_exactly_1024():
    w = world_with(r=RECURSE)
    _, out, trace = execute_transaction(w, Transaction("eoa", "r", "go", gas_limit=10**20))
    assert out.ok
    # frames at depths 0..1023 each ran their body; the frame at 1024 was refused
    assert w.load("r", "depth").value == MAX_CALL_DEPTH
    refused = [e for e in trace if isinstance(e, FrameExit) and e.status is Status.DEPTH_EXCEEDED]
    assert [e.depth for e in refused] == [MAX_CALL_DEPTH]
    assert max(e.depth for e in trace if isinstance(e, FrameEnter)) == MAX_CALL_DEPTH
    assert is_balanced(trace)


class TestJournal:
    def test_nested_rollback(self):
        w = WorldState()
        w.create_account("a", 10)
        outer = w.snapshot()
        w.set_balance("a", UInt(256, 5))
        inner = w.snapshot()
        w.set_balance("a", UInt(256, 1))
        w.rollback(inner)
        assert w.balance("a").value == 5
        w.rollback(outer)
        assert w.balance("a").value == 10
        assert not w.journal.live

    def test_release_out_of_order_rejected(self):
        w = WorldState()
        w.create_account("a", 10)
        outer = w.snapshot()
        inner = w.snapshot()
        with pytest.raises(JournalError):
            w.release(outer)
        w.release(inner)
        w.release(outer)
        with pytest.raises(JournalError):
            w.release(outer)

    def test_rollback_discards_inner_checkpoints(self):
        w = WorldState()
        w.create_account("a", 10)
        outer = w.snapshot()
        inner = w.snapshot()
        w.set_balance("a", UInt(256, 3))
        w.rollback(outer)
        with pytest.raises(JournalError):
            w.rollback(inner)
        assert w.balance("a").value == 10

    def test_storage_rollback_removes_new_keys(self):
        w = WorldState()
        w.create_account("t", 0, fixture("token_bec.ctr"))
        h = w.state_hash()
        cp = w.snapshot()
        w.store("t", "balances", "x", UInt(256, 7))
        assert w.state_hash() != h
        w.rollback(cp)
        assert w.state_hash() == h

    def test_copy_is_independent(self):
        w = WorldState()
        w.create_account("t", 0, fixture("token_bec.ctr"))
        other = w.copy()
        other.store("t", "balances", "x", UInt(256, 7))
        assert w.load("t", "balances", "x").value == 0
        cp = w.snapshot()
        with pytest.raises(JournalError):
            w.copy()
        w.release(cp)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(0, 1000)), max_size=20),
           st.integers(0, 20))
    def test_rollback_restores_hash(self, writes, split):
        w = WorldState()
        for a in "abc":
            w.create_account(a, 1)
        for a, v in writes[:split]:
            w.set_balance(a, UInt(256, v))
        h = w.state_hash()
        cp = w.snapshot()
        for a, v in writes[split:]:
            w.set_balance(a, UInt(256, v))
        w.rollback(cp)
        assert w.state_hash() == h


def test_randomized_transaction_invariants():
    statuses = check_invariants(random.Random(20240501), 1200)
    assert {Status.OK, Status.REVERTED, Status.OUT_OF_GAS} <= statuses


def test_trace_nesting_in_reentrancy():
    from vulnlab.scenarios import run_scenario
    report = run_scenario("reentrancy_vulnerable")
    assert is_balanced(report.trace)
    assert max_nesting(report.trace) >= 10
