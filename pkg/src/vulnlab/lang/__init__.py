"""Toy contract language: IR, parser and printer."""
from vulnlab.lang.ir import Contract, Function, StorageDecl, StorageKind, ValueType
from vulnlab.lang.parser import ParseError, ValidationError, parse_contract, parse_source
from vulnlab.lang.printer import pretty_print

__all__ = [
    "Contract", "Function", "StorageDecl", "StorageKind", "ValueType",
    "ParseError", "ValidationError", "parse_contract", "parse_source", "pretty_print",
]
