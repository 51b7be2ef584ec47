"""Canonical text rendering of contract IR.

``parse_contract(pretty_print(c)) == c`` holds for every valid contract.
"""
from __future__ import annotations

from vulnlab.numeric import ETHER
from vulnlab.lang import ir

INDENT = "    "
_CHECKED_NAMES = {"add": "safe_add", "sub": "safe_sub", "mul": "safe_mul"}
_BINARY = (ir.Arith, ir.Compare, ir.BoolOp)


def format_expr(e) -> str:
    if isinstance(e, ir.IntLit):
        if e.value and e.value % ETHER == 0:
            return f"{e.value // ETHER} ether"
        return str(e.value)
    if isinstance(e, ir.BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, ir.AddrLit):
        return "@" + e.name
    if isinstance(e, (ir.Local, ir.Param)):
        return e.name
    if isinstance(e, ir.SlotRead):
        return e.slot
    if isinstance(e, ir.MapRead):
        return f"{e.slot}[{format_expr(e.key)}]"
    if isinstance(e, ir.MsgSender):
        return "msg.sender"
    if isinstance(e, ir.MsgValue):
        return "msg.value"
    if isinstance(e, ir.ThisBalance):
        return "this.balance"
    if isinstance(e, ir.ThisAddress):
        return "this"
    if isinstance(e, ir.BalanceOf):
        return f"balance({format_expr(e.target)})"
    if isinstance(e, ir.ListLen):
        return f"len({e.param})"
    if isinstance(e, ir.Arith):
        if e.checked:
            return f"{_CHECKED_NAMES[e.kind.value]}({format_expr(e.left)}, {format_expr(e.right)})"
        return f"{_operand(e.left)} {e.kind.symbol} {_operand(e.right)}"
    if isinstance(e, (ir.Compare, ir.BoolOp)):
        return f"{_operand(e.left)} {e.op} {_operand(e.right)}"
    if isinstance(e, ir.Not):
        inner = format_expr(e.operand)
        return f"!({inner})" if isinstance(e.operand, _BINARY) else f"!{inner}"
    raise TypeError(f"not an expression: {e!r}")


def _operand(e) -> str:
    text = format_expr(e)
    return f"({text})" if isinstance(e, _BINARY) else text


def _format_stmt(s, depth: int, out: list) -> None:
    pad = INDENT * depth
    if isinstance(s, ir.Require):
        out.append(f"{pad}require({format_expr(s.cond)});")
    elif isinstance(s, ir.Assign):
        key = f"[{format_expr(s.key)}]" if s.key is not None else ""
        out.append(f"{pad}{s.slot}{key} = {format_expr(s.rhs)};")
    elif isinstance(s, ir.Let):
        out.append(f"{pad}let {s.name} = {format_expr(s.rhs)};")
    elif isinstance(s, ir.If):
        out.append(f"{pad}if ({format_expr(s.cond)}) {{")
        _format_block(s.then, depth + 1, out)
        if s.orelse:
            out.append(f"{pad}}} else {{")
            _format_block(s.orelse, depth + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, ir.ForEach):
        out.append(f"{pad}for {s.var} in {s.over} {{")
        _format_block(s.body, depth + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, ir.Call):
        line = f"{pad}call {format_expr(s.target)} value={format_expr(s.value)}"
        if s.gas is not None:
            line += f" gas={format_expr(s.gas)}"
        if s.result is not None:
            line += f" -> {s.result}"
        out.append(line + ";")
    elif isinstance(s, ir.Transfer):
        out.append(f"{pad}transfer {format_expr(s.target)} value={format_expr(s.value)};")
    elif isinstance(s, ir.Send):
        out.append(f"{pad}send {format_expr(s.target)} value={format_expr(s.value)} -> {s.result};")
    elif isinstance(s, ir.Invoke):
        target = format_expr(s.target)
        if not isinstance(s.target, (ir.AddrLit, ir.ThisAddress, ir.MsgSender, ir.Local, ir.Param)):
            target = f"({target})"
        args = ", ".join(format_expr(a) for a in s.args)
        line = f"{pad}invoke {target}.{s.function}({args}) value={format_expr(s.value)}"
        if s.gas is not None:
            line += f" gas={format_expr(s.gas)}"
        if s.result is not None:
            line += f" -> {s.result}"
        out.append(line + ";")
    elif isinstance(s, ir.Stop):
        out.append(f"{pad}stop;")
    else:
        raise TypeError(f"not a statement: {s!r}")


def _format_block(body, depth, out):
    for s in body:
        _format_stmt(s, depth, out)


def _format_function(fn: ir.Function, out: list) -> None:
    if fn.is_fallback:
        head = "fallback payable" if fn.payable else "fallback"
    else:
        params = ", ".join(f"{p.name}: {p.type.value}" for p in fn.params)
        head = f"{'payable ' if fn.payable else ''}fn {fn.name}({params})"
    if not fn.body:
        out.append(f"{INDENT}{head} {{}}")
        return
    out.append(f"{INDENT}{head} {{")
    _format_block(fn.body, 2, out)
    out.append(f"{INDENT}}}")


def pretty_print(c: ir.Contract) -> str:
    if not (c.storage or c.functions or c.fallback):
        return f"contract {c.name} {{}}\n"
    out = [f"contract {c.name} {{"]
    for d in c.storage:
        out.append(f"{INDENT}storage {d.name}: {d.kind.value};")
    for fn in c.all_functions():
        if len(out) > 1:
            out.append("")
        _format_function(fn, out)
    out.append("}")
    return "\n".join(out) + "\n"
