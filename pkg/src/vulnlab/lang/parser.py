"""Recursive-descent parser for the toy contract language.

The grammar is documented in ``docs/language.md``.  Name resolution and type
checking happen during parsing, so a returned :class:`Contract` is valid.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from vulnlab.numeric import ETHER, ArithKind
from vulnlab.lang import ir
from vulnlab.lang.ir import Loc, StorageKind, ValueType

KEYWORDS = frozenset("""
    contract storage fn payable fallback let if else for in require call transfer
    send invoke stop true false msg this balance len safe_add safe_sub
    safe_mul map address u256 bool ether wei
""".split())

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<number>0[xX][0-9a-fA-F_]+|[0-9][0-9_]*)
  | (?P<addr>@[A-Za-z_][A-Za-z0-9_]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|=>|==|<=|>=|&&|\|\||[{}()\[\];,:.=<>+\-*!])
""", re.VERBOSE)

# contextual words; still usable as ordinary names
SOFT_KEYWORDS = frozenset({"value", "gas", "sender"})

_CHECKED = {"safe_add": ArithKind.ADD, "safe_sub": ArithKind.SUB, "safe_mul": ArithKind.MUL}
_UNITS = {"ether": ETHER, "wei": 1}
U256_LIMIT = 1 << 256


class ParseError(Exception):
    """Syntax error with a 1-based source position."""

    def __init__(self, message: str, line: int, col: int):
        self.message = message
        self.line = line
        self.col = col
        super().__init__(f"{line}:{col}: {message}")


class ValidationError(ParseError):
    """Source is well-formed but violates a semantic rule."""


@dataclass(frozen=True)
class Token:
    kind: str  # "number", "addr", "ident", "kw", "op", "eof"
    text: str
    line: int
    col: int

    @property
    def loc(self) -> Loc:
        return Loc(self.line, self.col)


def tokenize(source: str) -> list:
    tokens = []
    pos, line, line_start = 0, 1, 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind not in ("ws", "comment"):
            if kind == "ident" and text in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rindex("\n") + 1
        pos = m.end()
    # EOF sits on the last real character so error positions stay inside the text
    if tokens:
        last = tokens[-1]
        eof_line, eof_col = last.line, last.col + len(last.text) - 1
    else:
        eof_line, eof_col = 1, 1
    tokens.append(Token("eof", "", eof_line, eof_col))
    return tokens


class _Scope:
    """Block-structured local scope; names are unique per function."""

    def __init__(self):
        self.frames = [{}]
        self.declared = set()

    def push(self):
        self.frames.append({})

    def pop(self):
        self.frames.pop()

    def lookup(self, name):
        for frame in reversed(self.frames):
            if name in frame:
                return frame[name]
        return None

    def declare(self, name, vtype, tok):
        if name in self.declared:
            raise ValidationError(f"local {name!r} is already bound in this function "
                                  "(locals are write-once)", tok.line, tok.col)
        self.declared.add(name)
        self.frames[-1][name] = vtype


class Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.pos = 0
        self.contract_name = None
        self.storage: dict = {}
        self.params: dict = {}
        self.scope: Optional[_Scope] = None
        self.pending_self_invokes = []

    # -- token helpers -------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def at(self, text: str) -> bool:
        t = self.tok
        return t.text == text and t.kind in ("kw", "op")

    def accept(self, text: str) -> Optional[Token]:
        if self.at(text):
            return self.advance()
        return None

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"expected {text!r}")
        return self.advance()

    def at_word(self, word: str) -> bool:
        return self.tok.kind == "ident" and self.tok.text == word

    def expect_word(self, word: str) -> Token:
        if not self.at_word(word):
            self.error(f"expected {word!r}")
        return self.advance()

    def expect_function_name(self) -> Token:
        if self.tok.kind not in ("ident", "kw"):
            self.error("expected function name")
        return self.advance()

    def expect_ident(self, what: str = "identifier") -> Token:
        if self.tok.kind != "ident":
            self.error(f"expected {what}")
        return self.advance()

    def error(self, message: str, tok: Optional[Token] = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ParseError(f"{message}, found {found}", tok.line, tok.col)

    # -- declarations --------------------------------------------------------

    def parse_source(self) -> tuple:
        contracts = []
        while self.tok.kind != "eof":
            contracts.append(self.parse_contract())
        names = set()
        for c in contracts:
            if c.name in names:
                raise ValidationError(f"duplicate contract {c.name!r}", c.loc.line, c.loc.col)
            names.add(c.name)
        return tuple(contracts)

    def parse_contract(self) -> ir.Contract:
        start = self.expect("contract")
        name = self.expect_ident("contract name")
        self.contract_name = name.text
        self.storage = {}
        self.expect("{")
        storage = []
        while self.at("storage"):
            storage.append(self.parse_storage_decl())
        headers = self.scan_function_headers()
        functions = []
        fallback = None
        self.pending_self_invokes = []
        while not self.at("}"):
            if self.at("fallback"):
                t = self.tok
                if fallback is not None:
                    raise ValidationError("at most one fallback function is allowed", t.line, t.col)
                fallback = self.parse_fallback()
            elif self.at("fn") or self.at("payable"):
                t = self.tok
                fn = self.parse_function()
                if any(f.name == fn.name for f in functions):
                    raise ValidationError(f"duplicate function {fn.name!r}", t.line, t.col)
                functions.append(fn)
            elif self.at("storage"):
                self.error("storage declarations must precede functions")
            else:
                self.error("expected 'fn', 'payable fn', 'fallback' or '}'")
        self.expect("}")
        for tok, fname, nargs in self.pending_self_invokes:
            arity = headers.get(fname)
            if arity is None:
                raise ValidationError(f"unknown function {fname!r} on this contract", tok.line, tok.col)
            if arity != nargs:
                raise ValidationError(f"{fname!r} takes {arity} argument(s), {nargs} given",
                                      tok.line, tok.col)
        return ir.Contract(self.contract_name, tuple(storage), tuple(functions), fallback, loc=start.loc)

    def scan_function_headers(self) -> dict:
        """Pre-scan ``fn NAME(params)`` headers so ``this.f(...)`` can be arity-checked."""
        headers = {}
        depth = 0
        i = self.pos
        while i < len(self.tokens):
            t = self.tokens[i]
            if t.kind == "eof":
                break
            if t.text == "{" and t.kind == "op":
                depth += 1
            elif t.text == "}" and t.kind == "op":
                if depth == 0:
                    break
                depth -= 1
            elif (depth == 0 and t.kind == "kw" and t.text == "fn"
                  and self.tokens[i + 1].kind in ("ident", "kw")):
                name = self.tokens[i + 1].text
                j = i + 3
                count = 0
                paren = 0
                while j < len(self.tokens) and self.tokens[j].kind != "eof":
                    tj = self.tokens[j]
                    if tj.text == ")" and paren == 0:
                        break
                    if tj.text == "[":
                        paren += 1
                    elif tj.text == "]":
                        paren -= 1
                    elif tj.text == ":" and paren == 0:
                        count += 1
                    j += 1
                headers.setdefault(name, count)
            i += 1
        return headers

    def parse_storage_decl(self) -> ir.StorageDecl:
        self.expect("storage")
        name = self.expect_ident("storage slot name")
        self.expect(":")
        if self.accept("map"):
            self.expect("(")
            self.expect("address")
            self.expect("=>")
            self.expect("u256")
            self.expect(")")
            kind = StorageKind.MAP_ADDR_U256
        elif self.accept("u256"):
            kind = StorageKind.U256
        elif self.accept("bool"):
            kind = StorageKind.BOOL
        else:
            self.error("expected storage type 'u256', 'bool' or 'map(address => u256)'")
        self.expect(";")
        if name.text in self.storage:
            raise ValidationError(f"duplicate storage slot {name.text!r}", name.line, name.col)
        self.storage[name.text] = kind
        return ir.StorageDecl(name.text, kind, loc=name.loc)

    def parse_param_type(self) -> ValueType:
        if self.accept("u256"):
            return ValueType.U256
        if self.accept("address"):
            if self.accept("["):
                self.expect("]")
                return ValueType.ADDRESS_LIST
            return ValueType.ADDRESS
        self.error("expected parameter type 'u256', 'address' or 'address[]'")

    def parse_function(self) -> ir.Function:
        payable = bool(self.accept("payable"))
        start = self.expect("fn")
        name = self.expect_function_name()
        if name.text == ir.FALLBACK:
            raise ValidationError("the fallback is declared with 'fallback', not 'fn'", name.line, name.col)
        self.expect("(")
        params = []
        self.params = {}
        if not self.at(")"):
            while True:
                pname = self.expect_ident("parameter name")
                self.expect(":")
                ptype = self.parse_param_type()
                if pname.text in self.params:
                    raise ValidationError(f"duplicate parameter {pname.text!r}", pname.line, pname.col)
                if pname.text in self.storage:
                    raise ValidationError(f"parameter {pname.text!r} shadows a storage slot",
                                          pname.line, pname.col)
                self.params[pname.text] = ptype
                params.append(ir.ParamDecl(pname.text, ptype, loc=pname.loc))
                if not self.accept(","):
                    break
        self.expect(")")
        body = self.parse_body()
        return ir.Function(name.text, tuple(params), payable, body, loc=start.loc)

    def parse_fallback(self) -> ir.Function:
        start = self.expect("fallback")
        payable = bool(self.accept("payable"))
        if self.at("("):
            t = self.tok
            raise ValidationError("fallback takes no parameters", t.line, t.col)
        self.params = {}
        body = self.parse_body()
        return ir.Function(ir.FALLBACK, (), payable, body, loc=start.loc)

    def parse_body(self) -> tuple:
        self.scope = _Scope()
        return self.parse_block(new_scope=False)

    def parse_block(self, new_scope: bool = True) -> tuple:
        self.expect("{")
        if new_scope:
            self.scope.push()
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                self.error("expected '}'")
            stmts.append(self.parse_statement())
        self.expect("}")
        if new_scope:
            self.scope.pop()
        return tuple(stmts)

    # -- statements ----------------------------------------------------------

    def parse_statement(self):
        t = self.tok
        if self.accept("require"):
            self.expect("(")
            cond = self.parse_typed(ValueType.BOOL, "require condition")
            self.expect(")")
            self.expect(";")
            return ir.Require(cond, loc=t.loc)
        if self.accept("let"):
            name = self.expect_ident("local name")
            self.expect("=")
            rhs, rtype = self.parse_expr()
            if rtype is ValueType.ADDRESS_LIST:
                raise ValidationError("address lists cannot be bound to locals", name.line, name.col)
            self.expect(";")
            self.check_fresh_name(name)
            self.scope.declare(name.text, rtype, name)
            return ir.Let(name.text, rhs, loc=t.loc)
        if self.accept("if"):
            return self.parse_if(t)
        if self.accept("for"):
            var = self.expect_ident("loop variable")
            self.expect("in")
            over = self.expect_ident("address[] parameter")
            if self.params.get(over.text) is not ValueType.ADDRESS_LIST:
                raise ValidationError(f"for-loops iterate over an address[] parameter; "
                                      f"{over.text!r} is not one", over.line, over.col)
            self.check_fresh_name(var)
            self.scope.push()
            self.scope.declare(var.text, ValueType.ADDRESS, var)
            body = self.parse_block(new_scope=False)
            self.scope.pop()
            return ir.ForEach(var.text, over.text, body, loc=t.loc)
        if self.accept("call"):
            target = self.parse_typed(ValueType.ADDRESS, "call target")
            value = self.parse_value_clause()
            gas = self.parse_gas_clause()
            result = self.parse_result_clause(required=False)
            self.expect(";")
            return ir.Call(target, value, gas, result, loc=t.loc)
        if self.accept("transfer"):
            target = self.parse_typed(ValueType.ADDRESS, "transfer target")
            value = self.parse_value_clause()
            self.expect(";")
            return ir.Transfer(target, value, loc=t.loc)
        if self.accept("send"):
            target = self.parse_typed(ValueType.ADDRESS, "send target")
            value = self.parse_value_clause()
            result = self.parse_result_clause(required=True)
            self.expect(";")
            return ir.Send(target, value, result, loc=t.loc)
        if self.accept("invoke"):
            return self.parse_invoke(t)
        if self.accept("stop"):
            self.expect(";")
            return ir.Stop(loc=t.loc)
        if t.kind == "ident":
            return self.parse_assign()
        self.error("expected a statement")

    def check_fresh_name(self, tok: Token):
        if tok.text in self.params or tok.text in self.storage:
            raise ValidationError(f"local {tok.text!r} shadows a parameter or storage slot",
                                  tok.line, tok.col)

    def parse_if(self, start: Token) -> ir.If:
        self.expect("(")
        cond = self.parse_typed(ValueType.BOOL, "if condition")
        self.expect(")")
        then = self.parse_block()
        orelse = ()
        if self.accept("else"):
            if self.at("if"):
                t = self.advance()
                orelse = (self.parse_if(t),)
            else:
                orelse = self.parse_block()
        return ir.If(cond, then, orelse, loc=start.loc)

    def parse_value_clause(self) -> ir.Expr:
        self.expect_word("value")
        self.expect("=")
        return self.parse_typed(ValueType.U256, "value")

    def parse_gas_clause(self) -> Optional[ir.Expr]:
        if self.at_word("gas") and self.tokens[self.pos + 1].text == "=":
            self.advance()
            self.expect("=")
            return self.parse_typed(ValueType.U256, "gas cap")
        return None

    def parse_result_clause(self, required: bool) -> Optional[str]:
        if self.accept("->"):
            name = self.expect_ident("result variable")
            self.check_fresh_name(name)
            self.scope.declare(name.text, ValueType.BOOL, name)
            return name.text
        if required:
            self.error("expected '-> NAME' result variable")
        return None

    def parse_invoke(self, start: Token) -> ir.Invoke:
        t = self.tok
        if self.accept("this"):
            target, ttype = ir.ThisAddress(loc=t.loc), ValueType.ADDRESS
        elif self.accept("msg"):
            self.expect(".")
            self.expect_word("sender")
            target, ttype = ir.MsgSender(loc=t.loc), ValueType.ADDRESS
        elif t.kind == "addr":
            self.advance()
            target, ttype = ir.AddrLit(t.text[1:], loc=t.loc), ValueType.ADDRESS
        elif t.kind == "ident":
            self.advance()
            target, ttype = self.resolve_name(t)
        elif self.accept("("):
            target, ttype = self.parse_expr()
            self.expect(")")
        else:
            self.error("expected invoke target")
        if ttype is not ValueType.ADDRESS:
            raise ValidationError("invoke target must be an address", t.line, t.col)
        self.expect(".")
        fname = self.expect_function_name()
        self.expect("(")
        args = []
        if not self.at(")"):
            while True:
                arg, _ = self.parse_expr()
                args.append(arg)
                if not self.accept(","):
                    break
        self.expect(")")
        if isinstance(target, ir.ThisAddress):
            self.pending_self_invokes.append((fname, fname.text, len(args)))
        value = self.parse_value_clause()
        gas = self.parse_gas_clause()
        result = self.parse_result_clause(required=False)
        self.expect(";")
        return ir.Invoke(target, fname.text, tuple(args), value, gas, result, loc=start.loc)

    def parse_assign(self) -> ir.Assign:
        name = self.advance()
        kind = self.storage.get(name.text)
        if kind is None:
            if self.scope.lookup(name.text) is not None or name.text in self.params:
                raise ValidationError(f"cannot assign to {name.text!r}: locals and parameters are "
                                      "write-once", name.line, name.col)
            raise ValidationError(f"unknown storage slot {name.text!r}", name.line, name.col)
        key = None
        if self.accept("["):
            if kind is not StorageKind.MAP_ADDR_U256:
                raise ValidationError(f"{name.text!r} is not a mapping", name.line, name.col)
            key = self.parse_typed(ValueType.ADDRESS, "mapping key")
            self.expect("]")
            want = ValueType.U256
        else:
            if kind is StorageKind.MAP_ADDR_U256:
                raise ValidationError(f"mapping {name.text!r} must be indexed", name.line, name.col)
            want = ValueType.U256 if kind is StorageKind.U256 else ValueType.BOOL
        self.expect("=")
        rhs = self.parse_typed(want, f"value for {name.text!r}")
        self.expect(";")
        return ir.Assign(name.text, key, rhs, loc=name.loc)

    # -- expressions ---------------------------------------------------------

    def parse_typed(self, want: ValueType, what: str) -> ir.Expr:
        t = self.tok
        expr, etype = self.parse_expr()
        if etype is not want:
            raise ValidationError(f"{what} must be {want.value}, got {etype.value}", t.line, t.col)
        return expr

    def parse_expr(self):
        return self.parse_or()

    def parse_or(self):
        left, ltype = self.parse_and()
        while self.at("||"):
            op = self.advance()
            right, rtype = self.parse_and()
            self.require_types(op, ValueType.BOOL, ltype, rtype)
            left, ltype = ir.BoolOp("||", left, right, loc=op.loc), ValueType.BOOL
        return left, ltype

    def parse_and(self):
        left, ltype = self.parse_cmp()
        while self.at("&&"):
            op = self.advance()
            right, rtype = self.parse_cmp()
            self.require_types(op, ValueType.BOOL, ltype, rtype)
            left, ltype = ir.BoolOp("&&", left, right, loc=op.loc), ValueType.BOOL
        return left, ltype

    def parse_cmp(self):
        left, ltype = self.parse_add()
        if self.tok.kind == "op" and self.tok.text in ir.COMPARE_OPS:
            op = self.advance()
            right, rtype = self.parse_add()
            if op.text == "==":
                if ltype is not rtype or ltype is ValueType.ADDRESS_LIST:
                    raise ValidationError(f"cannot compare {ltype.value} with {rtype.value}",
                                          op.line, op.col)
            else:
                self.require_types(op, ValueType.U256, ltype, rtype)
            if self.tok.kind == "op" and self.tok.text in ir.COMPARE_OPS:
                self.error("comparisons do not chain")
            return ir.Compare(op.text, left, right, loc=op.loc), ValueType.BOOL
        return left, ltype

    def parse_add(self):
        left, ltype = self.parse_mul()
        while self.at("+") or self.at("-"):
            op = self.advance()
            right, rtype = self.parse_mul()
            self.require_types(op, ValueType.U256, ltype, rtype)
            kind = ArithKind.ADD if op.text == "+" else ArithKind.SUB
            left, ltype = ir.Arith(kind, left, right, False, loc=op.loc), ValueType.U256
        return left, ltype

    def parse_mul(self):
        left, ltype = self.parse_unary()
        while self.at("*"):
            op = self.advance()
            right, rtype = self.parse_unary()
            self.require_types(op, ValueType.U256, ltype, rtype)
            left, ltype = ir.Arith(ArithKind.MUL, left, right, False, loc=op.loc), ValueType.U256
        return left, ltype

    def parse_unary(self):
        if self.at("!"):
            op = self.advance()
            operand, otype = self.parse_unary()
            self.require_types(op, ValueType.BOOL, otype)
            return ir.Not(operand, loc=op.loc), ValueType.BOOL
        return self.parse_primary()

    def require_types(self, op: Token, want: ValueType, *types):
        for t in types:
            if t is not want:
                raise ValidationError(f"operator {op.text!r} needs {want.value} operands, got {t.value}",
                                      op.line, op.col)

    def parse_primary(self):
        t = self.tok
        if t.kind == "number":
            self.advance()
            digits = t.text.replace("_", "")
            value = int(digits, 16) if digits[:2].lower() == "0x" else int(digits)
            for unit, scale in _UNITS.items():
                if self.accept(unit):
                    value *= scale
                    break
            if value >= U256_LIMIT:
                raise ParseError("integer literal does not fit in 256 bits", t.line, t.col)
            return ir.IntLit(value, loc=t.loc), ValueType.U256
        if t.kind == "addr":
            self.advance()
            return ir.AddrLit(t.text[1:], loc=t.loc), ValueType.ADDRESS
        if self.accept("true"):
            return ir.BoolLit(True, loc=t.loc), ValueType.BOOL
        if self.accept("false"):
            return ir.BoolLit(False, loc=t.loc), ValueType.BOOL
        if self.accept("msg"):
            self.expect(".")
            if self.at_word("sender"):
                self.advance()
                return ir.MsgSender(loc=t.loc), ValueType.ADDRESS
            if self.at_word("value"):
                self.advance()
                return ir.MsgValue(loc=t.loc), ValueType.U256
            self.error("expected 'sender' or 'value' after 'msg.'")
        if self.accept("this"):
            if self.accept("."):
                self.expect("balance")
                return ir.ThisBalance(loc=t.loc), ValueType.U256
            return ir.ThisAddress(loc=t.loc), ValueType.ADDRESS
        if self.accept("balance"):
            self.expect("(")
            target = self.parse_typed(ValueType.ADDRESS, "balance() argument")
            self.expect(")")
            return ir.BalanceOf(target, loc=t.loc), ValueType.U256
        if self.accept("len"):
            self.expect("(")
            name = self.expect_ident("address[] parameter")
            if self.params.get(name.text) is not ValueType.ADDRESS_LIST:
                raise ValidationError(f"len() takes an address[] parameter; {name.text!r} is not one",
                                      name.line, name.col)
            self.expect(")")
            return ir.ListLen(name.text, loc=t.loc), ValueType.U256
        if t.kind == "kw" and t.text in _CHECKED:
            self.advance()
            self.expect("(")
            left = self.parse_typed(ValueType.U256, f"{t.text} operand")
            self.expect(",")
            right = self.parse_typed(ValueType.U256, f"{t.text} operand")
            self.expect(")")
            return ir.Arith(_CHECKED[t.text], left, right, True, loc=t.loc), ValueType.U256
        if t.kind == "ident":
            self.advance()
            if self.at("["):
                kind = self.storage.get(t.text)
                if kind is not StorageKind.MAP_ADDR_U256:
                    raise ValidationError(f"{t.text!r} is not a mapping", t.line, t.col)
                self.advance()
                key = self.parse_typed(ValueType.ADDRESS, "mapping key")
                self.expect("]")
                return ir.MapRead(t.text, key, loc=t.loc), ValueType.U256
            return self.resolve_name(t)
        if self.accept("("):
            expr, etype = self.parse_expr()
            self.expect(")")
            return expr, etype
        self.error("expected an expression")

    def resolve_name(self, t: Token):
        ltype = self.scope.lookup(t.text)
        if ltype is not None:
            return ir.Local(t.text, loc=t.loc), ltype
        ptype = self.params.get(t.text)
        if ptype is not None:
            return ir.Param(t.text, loc=t.loc), ptype
        kind = self.storage.get(t.text)
        if kind is StorageKind.MAP_ADDR_U256:
            raise ValidationError(f"mapping {t.text!r} must be indexed", t.line, t.col)
        if kind is not None:
            vtype = ValueType.U256 if kind is StorageKind.U256 else ValueType.BOOL
            return ir.SlotRead(t.text, loc=t.loc), vtype
        raise ValidationError(f"unknown name {t.text!r}", t.line, t.col)


def parse_source(source: str) -> tuple:
    """Parse a file that may hold several contracts."""
    return Parser(source).parse_source()


def parse_contract(source: str) -> ir.Contract:
    """Parse source holding exactly one contract."""
    contracts = parse_source(source)
    if len(contracts) != 1:
        tokens = tokenize(source)
        t = tokens[0]
        raise ValidationError(f"expected exactly one contract, found {len(contracts)}", t.line, t.col)
    return contracts[0]
