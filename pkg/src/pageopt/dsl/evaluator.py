"""Three-valued evaluation of compiled constraints.

Expressions are compiled once into nested closures. Each closure takes the
evaluation frame and the current aggregate slot and returns a value from a
small abstract domain:

* concrete ``bool`` / number / ``str``;
* ``MISSING`` for an attribute the item does not carry (compares false);
* ``UNKNOWN`` when the value depends on positions not yet assigned;
* :class:`NumRange` for numbers only known to lie in a range or set.

On a complete assignment nothing is ever ``UNKNOWN``, so the result is plain
two-valued logic. On a partial assignment a ``False`` result is definitive,
which is what the backtracking search uses to prune.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Mapping, Sequence

from ..errors import DslTypeError, MissingItem
from .parser import (
    ANY,
    BOOL,
    BoolOp,
    Call,
    Compare,
    ItemAttr,
    Node,
    Not,
    Num,
    SlotVar,
    Str,
    count_calls,
    parse_expression,
    typecheck,
)


class _Sentinel:
    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return self.name


MISSING = _Sentinel("MISSING")
UNKNOWN = _Sentinel("UNKNOWN")


@dataclass(frozen=True)
class NumRange:
    lo: float
    hi: float
    values: frozenset | None = None  # exact candidate set when small and known


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


@dataclass(frozen=True)
class EvalContext:
    """Candidate assignment for one map plus the attributes of its item pool.

    ``assignment`` maps 1-based positions to item ids. When ``k`` exceeds the
    number of assigned positions the context is partial and evaluation becomes
    three-valued.
    """

    assignment: Mapping[int, str]
    catalog_view: Mapping[str, Mapping[str, Any]]
    columns: int = 1
    k: int | None = None
    query: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        k = len(self.assignment) if self.k is None else self.k
        object.__setattr__(self, "k", k)
        if self.columns < 1:
            raise ValueError("columns must be positive")
        for p in self.assignment:
            if not 1 <= p <= k:
                raise ValueError(f"position {p} outside 1..{k}")
        if len(set(self.assignment.values())) != len(self.assignment):
            raise ValueError("assignment is not injective")

    @cached_property
    def item_pos(self) -> dict[str, int]:
        return {item: p for p, item in self.assignment.items()}

    @cached_property
    def free(self) -> frozenset[int]:
        return frozenset(p for p in range(1, self.k + 1) if p not in self.assignment)

    @property
    def complete(self) -> bool:
        return len(self.assignment) == self.k

    def check_items(self) -> None:
        for item in self.assignment.values():
            if item not in self.catalog_view:
                raise MissingItem(f"assignment references unknown item {item!r}")


# Closures take (ctx, slot); slot is None at top level, else (position, attrs or None).
Fn = Callable[[EvalContext, Any], Any]


# --------------------------------------------------------------------------- comparisons

_OPS: dict[str, Callable[[Any, Any], bool]] = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _compare(op: str, a, b):
    if a is MISSING or b is MISSING:
        return False
    if a is UNKNOWN or b is UNKNOWN:
        return UNKNOWN
    a_rng, b_rng = isinstance(a, NumRange), isinstance(b, NumRange)
    if a_rng or b_rng:
        return _compare_ranges(op, a, b)
    if _num(a) and _num(b):
        return _OPS[op](a, b)
    if isinstance(a, str) and isinstance(b, str):
        return _OPS[op](a, b)
    if isinstance(a, bool) and isinstance(b, bool) and op in ("=", "!="):
        return _OPS[op](a, b)
    # Mixed runtime types (e.g. a string attribute against a number).
    return False


def _compare_ranges(op: str, a, b):
    if not isinstance(a, NumRange) and not _num(a):
        return False
    if not isinstance(b, NumRange) and not _num(b):
        return False
    a_set = a.values if isinstance(a, NumRange) else frozenset((a,))
    b_set = b.values if isinstance(b, NumRange) else frozenset((b,))
    f = _OPS[op]
    if a_set is not None and b_set is not None:
        outcomes = {f(x, y) for x in a_set for y in b_set}
        return outcomes.pop() if len(outcomes) == 1 else UNKNOWN
    a_lo, a_hi = (a.lo, a.hi) if isinstance(a, NumRange) else (a, a)
    b_lo, b_hi = (b.lo, b.hi) if isinstance(b, NumRange) else (b, b)
    if op in ("<", "<="):
        if f(a_hi, b_lo):
            return True
        if not f(a_lo, b_hi):
            return False
        return UNKNOWN
    if op in (">", ">="):
        if f(a_lo, b_hi):
            return True
        if not f(a_hi, b_lo):
            return False
        return UNKNOWN
    disjoint = a_hi < b_lo or b_hi < a_lo
    if op == "=":
        return False if disjoint else UNKNOWN
    return True if disjoint else UNKNOWN


def _truth(v):
    """Coerce a value in boolean position: only a real ``True`` counts."""
    if v is UNKNOWN:
        return UNKNOWN
    return v is True


def _not(v):
    return UNKNOWN if v is UNKNOWN else not v


def _range(lo: int, hi: int):
    return lo if lo == hi else NumRange(lo, hi)


# --------------------------------------------------------------------------- compilation


def _compile(node: Node) -> Fn:
    if isinstance(node, Num):
        value = node.value
        return lambda ctx, slot: value
    if isinstance(node, Str):
        value = node.value
        return lambda ctx, slot: value
    if isinstance(node, ItemAttr):
        name = node.name

        def item_attr(ctx, slot):
            attrs = slot[1]
            if attrs is None:
                return UNKNOWN
            return attrs.get(name, MISSING)

        return item_attr
    if isinstance(node, SlotVar):
        if node.name == "pos":
            return lambda ctx, slot: slot[0]
        return lambda ctx, slot: -(-slot[0] // ctx.columns)
    if isinstance(node, Not):
        inner = _compile(node.operand)
        return lambda ctx, slot: _not(_truth(inner(ctx, slot)))
    if isinstance(node, BoolOp):
        parts = [_compile(o) for o in node.operands]
        if node.op == "and":
            def conj(ctx, slot):
                unknown = False
                for p in parts:
                    v = _truth(p(ctx, slot))
                    if v is False:
                        return False
                    if v is UNKNOWN:
                        unknown = True
                return UNKNOWN if unknown else True
            return conj

        def disj(ctx, slot):
            unknown = False
            for p in parts:
                v = _truth(p(ctx, slot))
                if v is True:
                    return True
                if v is UNKNOWN:
                    unknown = True
            return UNKNOWN if unknown else False
        return disj
    if isinstance(node, Compare):
        if isinstance(node.left, ItemAttr) and isinstance(node.right, (Num, Str)):
            return _compile_attr_literal(node.left.name, node.op, node.right.value)
        left, right, op = _compile(node.left), _compile(node.right), node.op
        return lambda ctx, slot: _compare(op, left(ctx, slot), right(ctx, slot))
    if isinstance(node, Call):
        return _compile_call(node)
    raise TypeError(f"cannot compile {node!r}")


def _compile_attr_literal(name: str, op: str, value) -> Fn:
    """Fast path for the common ``item.<name> <op> literal`` slot predicate."""
    f = _OPS[op]
    numeric = _num(value)

    def attr_literal(ctx, slot):
        attrs = slot[1]
        if attrs is None:
            return UNKNOWN
        v = attrs.get(name, MISSING)
        if v is MISSING:
            return False
        if numeric:
            return f(v, value) if _num(v) else False
        return f(v, value) if isinstance(v, str) else False

    return attr_literal


def _slots(ctx: EvalContext):
    view = ctx.catalog_view
    for p in range(1, ctx.k + 1):
        item = ctx.assignment.get(p)
        yield p, (None if item is None else view[item])


def _compile_call(node: Call) -> Fn:
    args = [_compile(a) for a in node.args]
    name = node.name

    if name == "implies":
        a, b = args

        def implies(ctx, slot):
            av = _truth(a(ctx, slot))
            if av is False:
                return True
            bv = _truth(b(ctx, slot))
            if bv is True:
                return True
            if av is True and bv is False:
                return False
            return UNKNOWN
        return implies

    if name == "contains":
        (ident,) = args

        def contains(ctx, slot):
            item = ident(ctx, slot)
            if not isinstance(item, str):
                return UNKNOWN if item is UNKNOWN else False
            if item in ctx.item_pos:
                return True
            if ctx.complete or item not in ctx.catalog_view:
                return False
            return UNKNOWN
        return contains

    if name == "position":
        (ident,) = args

        def position(ctx, slot):
            item = ident(ctx, slot)
            if not isinstance(item, str):
                return UNKNOWN if item is UNKNOWN else MISSING
            p = ctx.item_pos.get(item)
            if p is not None:
                return p
            if ctx.complete or item not in ctx.catalog_view:
                return 0
            free = ctx.free
            return NumRange(0, max(free), frozenset(free) | {0})
        return position

    if name == "adjacent":
        a, b = args

        def adjacent(ctx, slot):
            x, y = a(ctx, slot), b(ctx, slot)
            if x is UNKNOWN or y is UNKNOWN:
                return UNKNOWN
            if not (isinstance(x, str) and isinstance(y, str)):
                return False
            px, py = ctx.item_pos.get(x), ctx.item_pos.get(y)
            if px is not None and py is not None:
                return abs(px - py) == 1
            if ctx.complete or x not in ctx.catalog_view or y not in ctx.catalog_view or x == y:
                return False
            free = ctx.free
            if px is not None or py is not None:
                anchor = px if px is not None else py
                return UNKNOWN if (anchor - 1 in free or anchor + 1 in free) else False
            return UNKNOWN if any(f + 1 in free for f in free) else False
        return adjacent

    if name == "attr":
        pos_fn, name_fn = args

        def attr(ctx, slot):
            p, key = pos_fn(ctx, slot), name_fn(ctx, slot)
            if p is UNKNOWN or isinstance(p, NumRange) or key is UNKNOWN:
                return UNKNOWN
            if not _num(p) or not isinstance(key, str) or p != int(p):
                return MISSING
            p = int(p)
            if p == 0:
                return ctx.query.get(key, MISSING)
            if not 1 <= p <= ctx.k:
                return MISSING
            item = ctx.assignment.get(p)
            if item is None:
                return UNKNOWN
            return ctx.catalog_view[item].get(key, MISSING)
        return attr

    (pred,) = args
    if name == "count":
        def count(ctx, slot):
            lo = hi = 0
            view, assignment = ctx.catalog_view, ctx.assignment
            for p in range(1, ctx.k + 1):
                item = assignment.get(p)
                v = pred(ctx, (p, None if item is None else view[item]))
                if v is True:
                    lo += 1
                    hi += 1
                elif v is UNKNOWN:
                    hi += 1
            return _range(lo, hi)
        return count

    if name == "exists":
        def exists(ctx, slot):
            unknown = False
            for s in _slots(ctx):
                v = _truth(pred(ctx, s))
                if v is True:
                    return True
                if v is UNKNOWN:
                    unknown = True
            return UNKNOWN if unknown else False
        return exists

    if name == "max_per_row":
        def max_per_row(ctx, slot):
            cols = ctx.columns
            lo: dict[int, int] = {}
            hi: dict[int, int] = {}
            for s in _slots(ctx):
                row = -(-s[0] // cols)
                lo.setdefault(row, 0)
                hi.setdefault(row, 0)
                v = _truth(pred(ctx, s))
                if v is True:
                    lo[row] += 1
                    hi[row] += 1
                elif v is UNKNOWN:
                    hi[row] += 1
            if not lo:
                return 0
            return _range(max(lo.values()), max(hi.values()))
        return max_per_row

    raise TypeError(f"no implementation for {name}()")


# --------------------------------------------------------------------------- public API


@dataclass(frozen=True)
class ConstraintExpr:
    """A compiled constraint. Immutable; evaluation is pure."""

    text: str
    ast: Node
    id: str | None = None
    fn: Fn = field(default=None, compare=False, repr=False)

    @property
    def builtin_calls(self) -> int:
        return count_calls(self.ast)


@dataclass(frozen=True)
class Verdict:
    ok: bool
    first_violated: str | None
    evaluated: int


def compile_constraint(text: str, id: str | None = None) -> ConstraintExpr:
    ast = parse_expression(text)
    result = typecheck(ast)
    if result not in (BOOL, ANY):
        raise DslTypeError(f"constraint must be boolean, got {result}", "expr")
    return ConstraintExpr(text, ast, id, _compile(ast))


def evaluate(expr: ConstraintExpr, ctx: EvalContext) -> bool:
    """Evaluate *expr* on a complete assignment."""
    if not ctx.complete:
        raise ValueError("evaluate() needs a complete assignment; use evaluate_partial()")
    ctx.check_items()
    v = _truth(expr.fn(ctx, None))
    assert v is not UNKNOWN, "complete assignment produced an unknown value"
    return v


def evaluate_partial(expr: ConstraintExpr, ctx: EvalContext) -> bool | None:
    """Three-valued evaluation: ``None`` means undecided on this partial assignment."""
    ctx.check_items()
    v = _truth(expr.fn(ctx, None))
    return None if v is UNKNOWN else v


def check_scope(constraints: Sequence[ConstraintExpr], ctx: EvalContext) -> Verdict:
    """Evaluate in declaration order, stopping at the first violated constraint."""
    for i, c in enumerate(constraints):
        if not evaluate(c, ctx):
            return Verdict(False, c.id if c.id is not None else str(i), i + 1)
    return Verdict(True, None, len(constraints))


def partial_ok(constraints: Sequence[ConstraintExpr], ctx: EvalContext) -> bool:
    """False only if some constraint is already definitely violated."""
    for c in constraints:
        if _truth(c.fn(ctx, None)) is False:
            return False
    return True
