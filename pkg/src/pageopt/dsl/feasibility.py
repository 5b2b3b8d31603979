"""Brute-force feasibility oracle.

Deliberately naive: it materialises every injective assignment with
``itertools.permutations`` and checks each one with the two-valued evaluator.
The search code in :mod:`pageopt.resolvers.search` must agree with it.
"""

from __future__ import annotations

import math
from itertools import permutations
from typing import Any, Iterable, Mapping, Sequence

from ..errors import TooLarge
from .evaluator import ConstraintExpr, EvalContext, evaluate

GUARD = 10**6


def n_permutations(n: int, k: int) -> int:
    return math.perm(n, k) if 0 <= k <= n else 0


def catalog_view_of(items: Iterable[Any] | Mapping[str, Mapping[str, Any]]) -> dict[str, Mapping[str, Any]]:
    """Normalise ids, ``Item`` objects or an id->attributes mapping into a view."""
    if isinstance(items, Mapping):
        return dict(items)
    view: dict[str, Mapping[str, Any]] = {}
    for it in items:
        if isinstance(it, str):
            view[it] = {}
        else:
            view[it.id] = it.view() if hasattr(it, "view") else dict(it.attributes)
    return view


def enumerate_feasible(
    items,
    k: int,
    constraints: Sequence[ConstraintExpr],
    columns: int = 1,
    *,
    guard: int = GUARD,
    query: Mapping[str, Any] | None = None,
) -> list[tuple[str, ...]]:
    """Every feasible assignment, as tuples ``(item at pos 1, ..., item at pos k)``."""
    view = catalog_view_of(items)
    total = n_permutations(len(view), k)
    if total > guard:
        raise TooLarge(f"P({len(view)},{k}) = {total} exceeds guard {guard}")
    ids = list(view)
    out = []
    for perm in permutations(ids, k):
        ctx = EvalContext(dict(zip(range(1, k + 1), perm)), view, columns, query=query or {})
        if all(evaluate(c, ctx) for c in constraints):
            out.append(perm)
    return out


def count_feasible(items, k: int, constraints: Sequence[ConstraintExpr], columns: int = 1,
                   *, guard: int = GUARD) -> int:
    """Exact number of injective assignments of *k* positions satisfying all constraints."""
    return len(enumerate_feasible(items, k, constraints, columns, guard=guard))
