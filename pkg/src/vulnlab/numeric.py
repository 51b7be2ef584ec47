"""Fixed-width unsigned integers with wrapping and checked arithmetic.

Wrapping operations reproduce unchecked EVM arithmetic: results are taken
modulo ``2**width``.  Checked operations behave like SafeMath and raise
:class:`CheckedOverflowError` when the exact result does not fit.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

WEI = 1
ETHER = 10**18

MIN_WIDTH = 8
MAX_WIDTH = 256


class WidthMismatchError(ValueError):
    """Operands of different widths were combined (host usage error)."""


class CheckedOverflowError(OverflowError):
    """A checked operation over- or underflowed."""

    def __init__(self, kind: "ArithKind", a: "UInt", b: "UInt"):
        self.kind = kind
        self.a = a
        self.b = b
        super().__init__(f"uint{a.width} {kind.value} overflow: {a.value} {kind.symbol} {b.value}")


class ArithKind(enum.Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"

    @property
    def symbol(self) -> str:
        return _SYMBOLS[self]


_SYMBOLS = {ArithKind.ADD: "+", ArithKind.SUB: "-", ArithKind.MUL: "*"}


def _check_width(width: int) -> None:
    if not isinstance(width, int) or width % 8 or not MIN_WIDTH <= width <= MAX_WIDTH:
        raise ValueError(f"invalid uint width {width!r}; expected a multiple of 8 in [8, 256]")


@dataclass(frozen=True, order=True, slots=True)
class UInt:
    width: int
    value: int

    def __post_init__(self):
        _check_width(self.width)
        if not isinstance(self.value, int) or isinstance(self.value, bool):
            raise TypeError(f"UInt value must be int, got {type(self.value).__name__}")
        if not 0 <= self.value < (1 << self.width):
            raise ValueError(f"{self.value} does not fit in uint{self.width}")

    @classmethod
    def wrap(cls, value: int, width: int = 256) -> "UInt":
        """Reduce an arbitrary integer modulo ``2**width``."""
        _check_width(width)
        return cls(width, value % (1 << width))

    @classmethod
    def max(cls, width: int = 256) -> "UInt":
        return cls(width, (1 << width) - 1)

    @classmethod
    def parse(cls, text: str, width: int = 256) -> "UInt":
        """Parse a decimal or ``0x``-prefixed hexadecimal literal."""
        s = text.strip().replace("_", "")
        try:
            if s[:2].lower() == "0x":
                if len(s) == 2:
                    raise ValueError
                value = int(s[2:], 16)
            elif s.isdigit():
                value = int(s, 10)
            else:
                raise ValueError
        except ValueError:
            raise ValueError(f"not an unsigned integer literal: {text!r}") from None
        return cls(width, value)

    def to_hex(self) -> str:
        return "0x" + format(self.value, f"0{self.width // 4}x")

    def __str__(self) -> str:
        return str(self.value)

    def __int__(self) -> int:
        return self.value

    def __index__(self) -> int:
        return self.value


def _exact(kind: ArithKind, a: UInt, b: UInt) -> int:
    if a.width != b.width:
        raise WidthMismatchError(f"cannot combine uint{a.width} with uint{b.width}")
    if kind is ArithKind.ADD:
        return a.value + b.value
    if kind is ArithKind.SUB:
        return a.value - b.value
    if kind is ArithKind.MUL:
        return a.value * b.value
    raise TypeError(f"unknown arithmetic kind {kind!r}")


def wrap_arith(kind: ArithKind, a: UInt, b: UInt) -> UInt:
    """Unchecked arithmetic: the result modulo ``2**width``.  Never fails."""
    return UInt(a.width, _exact(kind, a, b) & ((1 << a.width) - 1))


def checked_arith(kind: ArithKind, a: UInt, b: UInt) -> UInt:
    """SafeMath-style arithmetic; raises :class:`CheckedOverflowError` on wraparound."""
    exact = _exact(kind, a, b)
    if exact < 0 or exact >> a.width:
        raise CheckedOverflowError(kind, a, b)
    result = UInt(a.width, exact)
    # SafeMath.mul's post-condition; holds by construction once the range check passed
    assert kind is not ArithKind.MUL or b.value == 0 or result.value // b.value == a.value
    return result


def format_wei(wei: int) -> str:
    """Render a wei amount as ``"12 ether 2 wei"``; negative amounts get a leading ``-``."""
    sign = "-" if wei < 0 else ""
    eth, rem = divmod(abs(wei), ETHER)
    parts = []
    if eth:
        parts.append(f"{eth} ether")
    if rem or not eth:
        parts.append(f"{rem} wei")
    return sign + " ".join(parts)
