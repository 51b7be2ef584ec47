from __future__ import annotations


import pytest
from hypothesis import HealthCheck, given, settings

from irgen import contracts
from vulnlab.lang import ParseError, ValidationError, ir, parse_contract, parse_source, pretty_print
from vulnlab.numeric import ArithKind, ETHER
from vulnlab.scenarios import FIXTURE_DIR

FIXTURES = sorted(FIXTURE_DIR.glob("*.ctr"))


class TestParse:
    def test_empty_contract(self):
        assert parse_contract("contract C {}") == ir.Contract("C")

    def test_bank_shape(self):
        c = parse_contract((FIXTURE_DIR / "bank_vulnerable.ctr").read_text())
        assert c.name == "Bank"
        assert c.storage_kind("balances") is ir.StorageKind.MAP_ADDR_U256
        withdraw = c.function("withdraw")
        assert [p.type for p in withdraw.params] == [ir.ValueType.U256]
        assert [ir.statement_kind(s) for s in withdraw.body] == ["require", "call", "require", "assign"]
        call = withdraw.body[1]
        assert isinstance(call.target, ir.MsgSender)
        assert call.value == ir.Param("amount") and call.result == "ok" and call.gas is None
        assert c.function("statistis").payable

    def test_units_and_hex(self):
        c = parse_contract("contract C { storage s: u256; fn f() { s = 2 ether; s = 0xff; s = 3 wei; } }")
        assert [s.rhs.value for s in c.function("f").body] == [2 * ETHER, 255, 3]

    def test_precedence(self):
        c = parse_contract("contract C { storage s: u256; fn f(a: u256) { s = a + a * 2; } }")
        rhs = c.function("f").body[0].rhs
        assert rhs.kind is ArithKind.ADD and rhs.right.kind is ArithKind.MUL

    def test_checked_builtins(self):
        c = parse_contract("contract C { storage s: u256; fn f(a: u256) { s = safe_mul(a, 2); } }")
        rhs = c.function("f").body[0].rhs
        assert rhs.checked and rhs.kind is ArithKind.MUL

    def test_keyword_names_allowed_for_functions_and_soft_words(self):
        c = parse_contract("contract T { fn transfer(to: address, value: u256) {} }")
        assert c.function("transfer").params[1].name == "value"

    def test_multiple_contracts(self):
        assert [c.name for c in parse_source("contract A {} contract B {}")] == ["A", "B"]
        with pytest.raises(ParseError):
            parse_contract("contract A {} contract B {}")

    def test_locations_recorded(self):
        c = parse_contract("contract C {\n  storage s: u256;\n  fn f() {\n    s = 1;\n  }\n}\n")
        assert c.function("f").body[0].loc == ir.Loc(4, 5)


@pytest.mark.parametrize("src,line,col,fragment", [
    ("contract C { fn f( {} }", 1, 20, "expected parameter name"),
    ("contract C { fn f() {", 1, 21, "end of input"),
    ("contract C { fn f() { $ } }", 1, 23, "unexpected character"),
    ("contract C { fn f(a: u256) { require(1 < a < 3); } }", 1, 44, "do not chain"),
    ("contract C { storage s: u256; fn f() { s = 0x1" + "0" * 64 + "; } }", 1, 44, "256 bits"),
    ("contract C { fn f() {} storage s: u256; }", 1, 24, "must precede"),
])
def test_syntax_errors_have_positions(src, line, col, fragment):
    with pytest.raises(ParseError) as info:
        parse_source(src)
    assert (info.value.line, info.value.col) == (line, col)
    assert fragment in info.value.message


def test_multiline_error_position():
    src = "contract C {\n    fn f() {\n        let x = ;\n    }\n}\n"
    with pytest.raises(ParseError) as info:
        parse_source(src)
    assert (info.value.line, info.value.col) == (3, 17)


@pytest.mark.parametrize("src,fragment", [
    ("contract C { fn f() {} fn f() {} }", "duplicate function 'f'"),
    ("contract A {} contract A {}", "duplicate contract"),
    ("contract C { fn f() { require(x > 0); } }", "unknown name 'x'"),
    ("contract C { fn f(a: u256) { a = 1; } }", "write-once"),
    ("contract C { fn f() { let a = 1; let a = 2; } }", "already bound"),
    ("contract C { storage s: u256; fn f() { s = true; } }", "must be u256"),
    ("contract C { fallback {} fallback {} }", "at most one fallback"),
    ("contract C { fallback(a: u256) {} }", "no parameters"),
    ("contract C { fn fallback() {} }", "declared with 'fallback'"),
    ("contract C { storage s: u256; fn f() { let s = 1; } }", "shadows"),
    ("contract C { fn f(a: address) { for r in a { } } }", "address[]"),
    ("contract C { fn g(a: u256) {} fn f() { invoke this.g() value=0; } }", "takes 1 argument"),
    ("contract C { fn f() { invoke this.h() value=0; } }", "unknown function 'h'"),
])
def test_validation_errors(src, fragment):
    with pytest.raises(ValidationError) as info:
        parse_source(src)
    assert fragment in info.value.message


@pytest.mark.parametrize("path", FIXTURES, ids=lambda p: p.stem)
def test_fixture_round_trip(path):
    for c in parse_source(path.read_text()):
        text = pretty_print(c)
        assert parse_contract(text) == c
        assert pretty_print(parse_contract(text)) == text


def test_empty_contract_prints_on_one_line():
    assert pretty_print(ir.Contract("C")) == "contract C {}\n"


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(contracts())
def test_generated_round_trip(c):
    assert parse_contract(pretty_print(c)) == c


class TestPaths:
    def test_iter_and_resolve_agree(self):
        c = parse_contract((FIXTURE_DIR / "bank_lock.ctr").read_text())
        body = c.function("withdraw").body
        for path, stmt in ir.iter_statements(body):
            assert ir.resolve_path(body, path) is stmt
            assert ir.parse_path(ir.format_path(path)) == path

    def test_resolve_rejects_missing(self):
        body = parse_contract((FIXTURE_DIR / "bank_lock.ctr").read_text()).function("withdraw").body
        for bad in [(9,), (1, "else", 0), (0, "then", 0), ()]:
            with pytest.raises(LookupError):
                ir.resolve_path(body, bad)
