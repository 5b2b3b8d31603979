"""Lexer, recursive-descent parser and type checker for constraint expressions.

Grammar::

    expr  := or
    or    := and ("or" and)*
    and   := unary ("and" unary)*
    unary := "not" unary | cmp
    cmp   := term (relop term)?
    term  := number | string | call | "item" "." ident | "pos" | "row" | "(" expr ")"
    call  := ident "(" (expr ("," expr)*)? ")"
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from ..errors import DslSyntaxError, DslTypeError

RELOPS = ("<=", ">=", "!=", "<", ">", "=")
KEYWORDS = {"and", "or", "not", "item", "pos", "row"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<op><=|>=|!=|<|>|=)
  | (?P<punct>[(),.])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    value: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            if text[i] == '"':
                raise DslSyntaxError("unterminated string literal", i)
            raise DslSyntaxError(f"unexpected character {text[i]!r}", i)
        kind = m.lastgroup
        if kind != "ws":
            value = m.group()
            if kind == "ident" and value in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, value, i))
        i = m.end()
    tokens.append(Token("eof", "", len(text)))
    return tokens


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: float
    span: tuple[int, int]


@dataclass(frozen=True)
class Str:
    value: str
    span: tuple[int, int]


@dataclass(frozen=True)
class ItemAttr:
    name: str
    span: tuple[int, int]


@dataclass(frozen=True)
class SlotVar:
    name: str  # "pos" | "row"
    span: tuple[int, int]


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple[Node, ...]
    span: tuple[int, int]


@dataclass(frozen=True)
class Not:
    operand: Node
    span: tuple[int, int]


@dataclass(frozen=True)
class BoolOp:
    op: str  # "and" | "or"
    operands: tuple[Node, ...]
    span: tuple[int, int]


@dataclass(frozen=True)
class Compare:
    op: str
    left: Node
    right: Node
    span: tuple[int, int]


Node = Union[Num, Str, ItemAttr, SlotVar, Call, Not, BoolOp, Compare]


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def accept(self, kind: str, value: str | None = None) -> Token | None:
        t = self.tok
        if t.kind == kind and (value is None or t.value == value):
            self.i += 1
            return t
        return None

    def expect(self, kind: str, value: str | None = None) -> Token:
        t = self.accept(kind, value)
        if t is None:
            want = repr(value) if value else kind
            got = repr(self.tok.value) if self.tok.kind != "eof" else "end of input"
            raise DslSyntaxError(f"expected {want}, got {got}", self.tok.pos)
        return t

    def parse(self) -> Node:
        if self.tok.kind == "eof":
            raise DslSyntaxError("empty expression", 0)
        node = self.or_()
        if self.tok.kind != "eof":
            raise DslSyntaxError(f"unexpected {self.tok.value!r}", self.tok.pos)
        return node

    def or_(self) -> Node:
        start = self.tok.pos
        parts = [self.and_()]
        while self.accept("kw", "or"):
            parts.append(self.and_())
        return parts[0] if len(parts) == 1 else BoolOp("or", tuple(parts), (start, self.tok.pos))

    def and_(self) -> Node:
        start = self.tok.pos
        parts = [self.unary()]
        while self.accept("kw", "and"):
            parts.append(self.unary())
        return parts[0] if len(parts) == 1 else BoolOp("and", tuple(parts), (start, self.tok.pos))

    def unary(self) -> Node:
        start = self.tok.pos
        if self.accept("kw", "not"):
            return Not(self.unary(), (start, self.tok.pos))
        return self.cmp()

    def cmp(self) -> Node:
        start = self.tok.pos
        left = self.term()
        if self.tok.kind == "op":
            op = self.advance().value
            right = self.term()
            return Compare(op, left, right, (start, self.tok.pos))
        return left

    def term(self) -> Node:
        t = self.tok
        if t.kind == "number":
            self.advance()
            value = float(t.value) if "." in t.value else int(t.value)
            return Num(value, (t.pos, t.pos + len(t.value)))
        if t.kind == "string":
            self.advance()
            return Str(_unescape(t.value[1:-1]), (t.pos, t.pos + len(t.value)))
        if t.kind == "kw" and t.value == "item":
            self.advance()
            self.expect("punct", ".")
            name = self.tok
            if name.kind not in ("ident", "kw"):
                raise DslSyntaxError("expected attribute name after 'item.'", name.pos)
            self.advance()
            return ItemAttr(name.value, (t.pos, name.pos + len(name.value)))
        if t.kind == "kw" and t.value in ("pos", "row"):
            self.advance()
            return SlotVar(t.value, (t.pos, t.pos + len(t.value)))
        if t.kind == "ident":
            self.advance()
            self.expect("punct", "(")
            args: list[Node] = []
            if not self.accept("punct", ")"):
                args.append(self.or_())
                while self.accept("punct", ","):
                    args.append(self.or_())
                self.expect("punct", ")")
            return Call(t.value, tuple(args), (t.pos, self.tokens[self.i - 1].pos + 1))
        if self.accept("punct", "("):
            node = self.or_()
            self.expect("punct", ")")
            return node
        got = repr(t.value) if t.kind != "eof" else "end of input"
        raise DslSyntaxError(f"expected a term, got {got}", t.pos)


def _unescape(body: str) -> str:
    return re.sub(r"\\(.)", r"\1", body)


def parse_expression(text: str) -> Node:
    return _Parser(text).parse()


# --------------------------------------------------------------------------- types

NUM, STR, BOOL, ANY = "num", "str", "bool", "any"

# name -> (argument types, result type, is aggregate)
SIGNATURES: dict[str, tuple[tuple[str, ...], str, bool]] = {
    "contains": ((STR,), BOOL, False),
    "position": ((STR,), NUM, False),
    "adjacent": ((STR, STR), BOOL, False),
    "attr": ((NUM, STR), ANY, False),
    "implies": ((BOOL, BOOL), BOOL, False),
    "count": ((BOOL,), NUM, True),
    "exists": ((BOOL,), BOOL, True),
    "max_per_row": ((BOOL,), NUM, True),
}


def _fits(actual: str, wanted: str) -> bool:
    return actual == wanted or ANY in (actual, wanted)


def typecheck(node: Node, path: str = "expr", in_slot: bool = False) -> str:
    """Return the static type of *node*, raising :class:`DslTypeError` on misuse."""
    if isinstance(node, Num):
        return NUM
    if isinstance(node, Str):
        return STR
    if isinstance(node, ItemAttr):
        if not in_slot:
            raise DslTypeError(f"'item.{node.name}' is only bound inside count/exists/max_per_row", path)
        return ANY
    if isinstance(node, SlotVar):
        if not in_slot:
            raise DslTypeError(f"'{node.name}' is only bound inside count/exists/max_per_row", path)
        return NUM
    if isinstance(node, Not):
        t = typecheck(node.operand, f"{path}.not", in_slot)
        if not _fits(t, BOOL):
            raise DslTypeError(f"'not' needs a boolean operand, got {t}", path)
        return BOOL
    if isinstance(node, BoolOp):
        for i, operand in enumerate(node.operands):
            t = typecheck(operand, f"{path}.{node.op}[{i}]", in_slot)
            if not _fits(t, BOOL):
                raise DslTypeError(f"'{node.op}' needs boolean operands, got {t}", f"{path}.{node.op}[{i}]")
        return BOOL
    if isinstance(node, Compare):
        lt = typecheck(node.left, f"{path}.lhs", in_slot)
        rt = typecheck(node.right, f"{path}.rhs", in_slot)
        if ANY in (lt, rt):
            return BOOL
        if lt != rt:
            raise DslTypeError(f"cannot compare {lt} with {rt}", path)
        if lt == BOOL and node.op not in ("=", "!="):
            raise DslTypeError(f"ordering comparison {node.op!r} on booleans", path)
        return BOOL
    if isinstance(node, Call):
        sig = SIGNATURES.get(node.name)
        if sig is None:
            raise DslTypeError(f"unknown function {node.name!r}", path)
        arg_types, result, aggregate = sig
        if len(node.args) != len(arg_types):
            raise DslTypeError(f"{node.name}() takes {len(arg_types)} argument(s), got {len(node.args)}", path)
        if aggregate and in_slot:
            raise DslTypeError(f"nested aggregate {node.name}()", path)
        for i, (arg, want) in enumerate(zip(node.args, arg_types)):
            apath = f"{path}.{node.name}[{i}]"
            t = typecheck(arg, apath, in_slot or aggregate)
            if not _fits(t, want):
                raise DslTypeError(f"{node.name}() argument {i + 1} must be {want}, got {t}", apath)
        return result
    raise DslTypeError(f"unsupported node {type(node).__name__}", path)


def count_calls(node: Node) -> int:
    if isinstance(node, Call):
        return 1 + sum(count_calls(a) for a in node.args)
    if isinstance(node, Not):
        return count_calls(node.operand)
    if isinstance(node, BoolOp):
        return sum(count_calls(a) for a in node.operands)
    if isinstance(node, Compare):
        return count_calls(node.left) + count_calls(node.right)
    return 0
