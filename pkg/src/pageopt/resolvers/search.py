"""Resolving degrees of freedom under constraints.

Map resolution runs in two phases. First, up to ``max_rejections`` proposals
are drawn from the policy and checked against the constraints; the first one
that passes wins. If they are all rejected, an exact search takes over:

* the uniform policy materialises the whole feasible set (when ``P(n, k)`` is
  within the guard) and draws from it uniformly;
* scored policies run a depth-first search that fills position 1 first,
  trying items in descending score order and backtracking on definite
  violations. The first complete hit is the lexicographically best feasible
  assignment under the policy's scores.

Partial assignments are pruned with the three-valued evaluator, which only
answers ``False`` when no completion can satisfy a constraint.
"""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass
from itertools import islice
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from ..dsl import GUARD, ConstraintExpr, EvalContext, check_scope, partial_ok
from ..errors import Infeasible, PoolTooSmall, SearchSpaceTooLarge, TooLarge
from ..fetchers import Item
from .policies import MapTable, Policy
from .stats import EMPTY, ArmKey, ArmStats

DEFAULT_MAX_REJECTIONS = 100
DEFAULT_NODE_BUDGET = 200_000


def _stream_state(seed: int, dof_id: str) -> dict[str, Any]:
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little") + dof_id.encode("utf-8")
    h = hashlib.blake2b(key, digest_size=32, person=b"pageopt-rng").digest()
    return {"bit_generator": "PCG64", "has_uint32": 0, "uinteger": 0,
            "state": {"state": int.from_bytes(h[:16], "little"), "inc": int.from_bytes(h[16:], "little") | 1}}


def derive_rng(seed: int, dof_id: str) -> np.random.Generator:
    """Independent stream per (root seed, DoF id)."""
    bg = np.random.PCG64(0)
    bg.state = _stream_state(seed, dof_id)
    return np.random.Generator(bg)


class StreamCache(threading.local):
    """Reusable :func:`derive_rng` streams, one bit generator per thread and DoF.

    ``get`` reseeds in place, so a returned generator is only valid until the
    next ``get`` for the same DoF on the same thread. Building a PCG64 costs
    several times more than resetting its state, which matters per serve.
    """

    def __init__(self):
        self._gens: dict[str, np.random.Generator] = {}

    def get(self, seed: int, dof_id: str) -> np.random.Generator:
        g = self._gens.get(dof_id)
        if g is None:
            g = self._gens[dof_id] = np.random.Generator(np.random.PCG64(0))
        g.bit_generator.state = _stream_state(seed, dof_id)
        return g


@dataclass(frozen=True)
class ResolutionProposal:
    assignment: tuple[int, ...]  # item index per position
    proposal_rank: int
    rejections: int
    fallback: bool = False


@dataclass(frozen=True)
class MapResolution:
    assignment: dict[int, str]
    proposal_rank: int
    rejections: int
    fallback: bool


def constrained_sample(
    propose: Iterable[Sequence[int] | None],
    constraints: Sequence[ConstraintExpr],
    build_ctx: Callable[[Sequence[int]], EvalContext],
    max_rejections: int,
    fallback: Callable[[], Sequence[int]],
) -> ResolutionProposal:
    """Accept the first proposal passing every constraint, else fall back.

    A ``None`` proposal (the policy dead-ended) counts as a rejection. The
    fallback raises :class:`Infeasible` or :class:`SearchSpaceTooLarge`.
    """
    if max_rejections < 1:
        raise ValueError("max_rejections must be at least 1")
    rank = 0
    for proposal in islice(propose, max_rejections):
        rank += 1
        if proposal is None:
            continue
        if not constraints or check_scope(constraints, build_ctx(proposal)).ok:
            return ResolutionProposal(tuple(proposal), rank, rank - 1)
    chosen = fallback()
    return ResolutionProposal(tuple(chosen), rank + 1, rank, True)


# --------------------------------------------------------------------------- search


class _Search:
    """Shared state for partial-assignment checks over one item pool.

    ``bad`` collects (item index, position index) pairs that violate a
    constraint on their own. A definite violation of a one-item partial
    assignment rules out every extension, so such pairs are skipped without
    re-checking. The set may be shared across searches over the same pool.
    """

    def __init__(self, item_ids: Sequence[str], view: Mapping[str, Mapping[str, Any]], k: int,
                 constraints: Sequence[ConstraintExpr], columns: int, query: Mapping[str, Any],
                 bad: set[tuple[int, int]] | None = None):
        self.item_ids = list(item_ids)
        self.view = view
        self.k = k
        self.constraints = list(constraints)
        self.columns = columns
        self.query = query
        self.checks = 0
        self.bad = bad if bad is not None else set()

    def ctx(self, idx: Sequence[int]) -> EvalContext:
        ids = self.item_ids
        return EvalContext({p + 1: ids[i] for p, i in enumerate(idx)}, self.view, self.columns, self.k, self.query)

    def ok(self, idx: Sequence[int]) -> bool:
        self.checks += 1
        return partial_ok(self.constraints, self.ctx(idx))

    def extend(self, chosen: list[int], i: int) -> bool:
        """Append item *i* at the next position if no constraint is definitely violated."""
        p = len(chosen)
        if not self.constraints:
            chosen.append(i)
            return True
        if (i, p) in self.bad:
            return False
        chosen.append(i)
        if self.ok(chosen):
            return True
        chosen.pop()
        if p == 0:
            self.bad.add((i, 0))
        else:
            self.checks += 1
            ids = self.item_ids
            alone = EvalContext({p + 1: ids[i]}, self.view, self.columns, self.k, self.query)
            if not partial_ok(self.constraints, alone):
                self.bad.add((i, p))
        return False

    def greedy(self, scores: np.ndarray) -> list[int] | None:
        """One pass, best admissible item per position, no backtracking."""
        used: set[int] = set()
        chosen: list[int] = []
        for p in range(self.k):
            for i in np.argsort(-scores[:, p], kind="stable").tolist():
                if i not in used and self.extend(chosen, i):
                    used.add(i)
                    break
            else:
                return None
        return chosen

    def first(self, scores: np.ndarray, budget: int) -> list[int]:
        """Depth-first, score-ordered; returns the lexicographically best feasible assignment."""
        orders = [np.argsort(-scores[:, p], kind="stable").tolist() for p in range(self.k)]
        chosen: list[int] = []
        used: set[int] = set()
        self.checks = 0

        def dfs(p: int) -> bool:
            if p == self.k:
                return True
            for i in orders[p]:
                if i in used:
                    continue
                if self.checks >= budget:
                    raise SearchSpaceTooLarge(f"search budget of {budget} checks exhausted")
                if self.extend(chosen, i):
                    used.add(i)
                    if dfs(p + 1):
                        return True
                    used.discard(i)
                    chosen.pop()
            return False

        if not dfs(0):
            raise Infeasible("no assignment satisfies the constraints in scope")
        return list(chosen)

    def all(self) -> Iterator[tuple[int, ...]]:
        """Every feasible assignment, in index order."""
        n = len(self.item_ids)
        chosen: list[int] = []
        used = [False] * n

        def dfs(p: int):
            if p == self.k:
                yield tuple(chosen)
                return
            for i in range(n):
                if used[i]:
                    continue
                if self.extend(chosen, i):
                    used[i] = True
                    yield from dfs(p + 1)
                    used[i] = False
                    chosen.pop()

        yield from dfs(0)


def feasible_assignments(items: Sequence[Item] | Sequence[str], k: int, constraints: Sequence[ConstraintExpr],
                         columns: int = 1, *, now=None, query=None, guard: int = GUARD) -> list[tuple[str, ...]]:
    """Feasible set via pruned search (checked against the brute-force oracle in tests)."""
    ids, view = _pool(items, now)
    if math.perm(len(ids), k) > guard:
        raise TooLarge(f"P({len(ids)},{k}) exceeds guard {guard}")
    s = _Search(ids, view, k, constraints, columns, query or {})
    return [tuple(ids[i] for i in a) for a in s.all()]


class PoolView(Mapping):
    """Item id -> constraint-visible attributes, computed on first access."""

    def __init__(self, items: Mapping[str, Any], now):
        self._items = items
        self._now = now
        self._cache: dict[str, Mapping[str, Any]] = {}

    def __getitem__(self, item_id: str) -> Mapping[str, Any]:
        v = self._cache.get(item_id)
        if v is None:
            it = self._items[item_id]
            v = self._cache[item_id] = {} if it is None else it.view(self._now)
        return v

    def __contains__(self, item_id) -> bool:
        return item_id in self._items

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)


def _pool(items, now) -> tuple[list[str], PoolView]:
    by_id: dict[str, Any] = {}
    for it in items:
        if isinstance(it, str):
            by_id[it] = None
        else:
            by_id[it.id] = it
    return list(by_id), PoolView(by_id, now)


# --------------------------------------------------------------------------- DoF resolution


def choice_arms(dof_id: str, alternative_ids: Sequence[str], stats: Mapping[ArmKey, ArmStats]) -> list[ArmStats]:
    return [stats.get(ArmKey.choice(dof_id, a), EMPTY) for a in alternative_ids]


def resolve_choice(dof, policy: Policy, stats: Mapping[ArmKey, ArmStats] | Sequence[ArmStats],
                   rng: np.random.Generator) -> int:
    """Index of the chosen alternative. *stats* is either the full arm mapping or
    one :class:`ArmStats` per alternative."""
    alt_ids = [a.id for a in dof.alternatives]
    if isinstance(stats, Mapping):
        arms = choice_arms(dof.id, alt_ids, stats)
    else:
        arms = list(stats)
        if len(arms) != len(alt_ids):
            raise ValueError("need one ArmStats per alternative")
    index = int(policy.choose(arms, rng))
    if not 0 <= index < len(alt_ids):
        raise RuntimeError(f"policy {policy.describe()} returned out-of-range index {index}")
    return index


def map_table(dof_id: str, item_ids: Sequence[str], scores: Sequence[float], k: int,
              stats: Mapping[ArmKey, ArmStats]) -> MapTable:
    n = len(item_ids)
    imp = np.zeros((n, k))
    clk = np.zeros((n, k))
    alpha = np.ones((n, k))
    beta = np.ones((n, k))
    if stats:
        dof_arms = getattr(stats, "dof_arms", None)
        if dof_arms is not None:
            arms = dof_arms(dof_id).items()
        elif len(stats) <= n * k:
            arms = ((a, s) for a, s in stats.items() if a.dof_id == dof_id)
        else:
            arms = ((a, stats[a]) for a in (ArmKey(dof_id, "map", item, p + 1)
                                             for item in item_ids for p in range(k)) if a in stats)
        pairs = [(key, arm) for key, arm in arms if key.kind == "map"]
        if pairs:
            index = {item: i for i, item in enumerate(item_ids)}
            rows = np.array([index.get(key.detail, -1) for key, _ in pairs])
            cols = np.array([key.position - 1 for key, _ in pairs])
            v = np.array([(a.impressions, a.clicks, a.prior_alpha, a.prior_beta) for _, a in pairs], dtype=float)
            keep = (rows >= 0) & (cols >= 0) & (cols < k)
            rows, cols, v = rows[keep], cols[keep], v[keep]
            imp[rows, cols] = v[:, 0]
            clk[rows, cols] = v[:, 1]
            alpha[rows, cols] = v[:, 2] + v[:, 1]
            beta[rows, cols] = v[:, 3] + v[:, 0] - v[:, 1]
    return MapTable(tuple(item_ids), np.asarray(scores, dtype=float), imp, clk, alpha, beta)


def resolve_map(
    dof,
    items: Sequence[Item],
    constraints: Sequence[ConstraintExpr],
    policy: Policy,
    stats: Mapping[ArmKey, ArmStats],
    rng: np.random.Generator,
    *,
    columns: int | None = None,
    max_rejections: int = DEFAULT_MAX_REJECTIONS,
    now=None,
    query: Mapping[str, Any] | None = None,
    guard: int = GUARD,
    node_budget: int = DEFAULT_NODE_BUDGET,
    inadmissible: set[tuple[int, int]] | None = None,
) -> MapResolution:
    """Constrained injective assignment of *items* to the map's positions.

    *inadmissible* is an optional memo of (item index, position index) pairs
    known to violate a constraint on their own; it is only valid for the
    exact same item list, constraints, columns, time and query.
    """
    k = dof.k
    n = len(items)
    if n < k:
        raise PoolTooSmall(f"{n} item(s) for {k} position(s)", path=getattr(dof, "path", None))
    cols = columns or getattr(dof, "columns", None) or 1
    ids, view = _pool(items, now)
    search = _Search(ids, view, k, constraints, cols, query or {}, inadmissible)
    table = map_table(dof.id, ids, [it.score for it in items], k, stats if policy.uses_stats else {})

    def proposals() -> Iterator[list[int] | None]:
        while True:
            scores = policy.map_scores(table, rng)
            if scores is None:
                yield rng.choice(n, size=k, replace=False).tolist()
            else:
                yield search.greedy(scores)
            if policy.deterministic:
                return

    def fallback() -> list[int]:
        scores = policy.map_scores(table, rng)
        if scores is None:
            if math.perm(n, k) > guard:
                scores = rng.random((n, k))
            else:
                feasible = list(search.all())
                if not feasible:
                    raise Infeasible("no assignment satisfies the constraints in scope")
                return list(feasible[int(rng.integers(len(feasible)))])
        return search.first(scores, node_budget)

    result = constrained_sample(proposals(), constraints, search.ctx, max_rejections, fallback)
    assignment = {p + 1: ids[i] for p, i in enumerate(result.assignment)}
    # Never hand back an assignment that violates its scope.
    if constraints:
        verdict = check_scope(constraints, EvalContext(assignment, view, cols, query=query or {}))
        if not verdict.ok:
            raise RuntimeError(f"resolver produced a violating assignment ({verdict.first_violated})")
    if len(set(assignment.values())) != k:
        raise RuntimeError("resolver produced a non-injective assignment")
    return MapResolution(assignment, result.proposal_rank, result.rejections, result.fallback)
