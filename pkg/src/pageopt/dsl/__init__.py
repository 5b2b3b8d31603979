"""Constraint expressions over candidate item-to-position assignments."""

from .evaluator import (
    MISSING,
    UNKNOWN,
    ConstraintExpr,
    EvalContext,
    Verdict,
    check_scope,
    compile_constraint,
    evaluate,
    evaluate_partial,
    partial_ok,
)
from .feasibility import GUARD, catalog_view_of, count_feasible, enumerate_feasible, n_permutations
from .parser import parse_expression, tokenize

# Encodings of the eight editorial rules from the example front page.
CANONICAL_ENCODINGS: dict[str, str] = {
    "YahooSiteConstraint1": 'not adjacent("mail","messenger")',
    "YahooSiteConstraint2": 'implies(contains("travel"), contains("weather"))',
    "YahooSiteConstraint3": 'position("mail") = 1',
    "TodayConstraint1": 'count(item.category = "sport") <= 2',
    "TodayConstraint2": 'count(item.geo_local = "yes") >= 1',
    "TodayConstraint3": 'attr(1, "age_hours") < 2',
    "No more of 2 trends of the same category contencuse": 'count(item.category = "celeb") <= 3',
    "long queries in the five last positions": "max_per_row(item.word_count > 2) <= 1",
}

__all__ = [
    "CANONICAL_ENCODINGS",
    "GUARD",
    "MISSING",
    "UNKNOWN",
    "ConstraintExpr",
    "EvalContext",
    "Verdict",
    "catalog_view_of",
    "check_scope",
    "compile_constraint",
    "count_feasible",
    "enumerate_feasible",
    "evaluate",
    "evaluate_partial",
    "n_permutations",
    "parse_expression",
    "partial_ok",
    "tokenize",
]
