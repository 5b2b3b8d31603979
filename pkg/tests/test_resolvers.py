from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pageopt.dsl import EvalContext, compile_constraint, enumerate_feasible
from pageopt.errors import DomainError, Infeasible, PoolTooSmall, SearchSpaceTooLarge, UnknownPolicy
from pageopt.fetchers import Item
from pageopt.potl import enumerate_dofs, parse_potl
from pageopt.resolvers import (
    UCB1,
    ArmKey,
    ArmStats,
    EpsilonGreedy,
    InOrder,
    Thompson,
    Uniform,
    constrained_sample,
    default_policies,
    StreamCache,
    derive_rng,
    feasible_assignments,
    map_table,
    resolve_choice,
    resolve_map,
    ucb_score,
)

from conftest import map_model, wrap_source

CATS = ["sport", "celeb", "tech"]


def dof(k):
    return enumerate_dofs(parse_potl(map_model(k)))[0].dof


def items(n, cats=None):
    cats = cats or [CATS[i % 3] for i in range(n)]
    return [Item(f"i{j}", {"category": cats[j], "rank": j}, score=1.0 - j / 100) for j in range(n)]


CONSTRAINTS = [
    'count(item.category = "sport") <= 1',
    'not adjacent("i0", "i1")',
    'implies(contains("i2"), position("i2") = 1)',
    'count(item.rank > 2) >= 1',
    "max_per_row(item.rank < 3) <= 1",
]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.lists(st.sampled_from(CONSTRAINTS), max_size=3, unique=True),
       st.integers(1, 2))
def test_pruned_search_equals_oracle(n, k, texts, cols):
    if k > n:
        return
    pool = items(n)
    cs = [compile_constraint(t) for t in texts]
    assert feasible_assignments(pool, k, cs, cols) == enumerate_feasible(pool, k, cs, cols)


@pytest.mark.parametrize("policy", [Uniform(), InOrder(), Thompson(), EpsilonGreedy(0.2), UCB1()])
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 3), st.lists(st.sampled_from(CONSTRAINTS), max_size=3, unique=True),
       st.integers(0, 2**32))
def test_resolution_is_feasible_or_infeasible_exactly(policy, n, k, texts, seed):
    if k > n:
        return
    pool = items(n)
    cs = [compile_constraint(t) for t in texts]
    feasible = set(enumerate_feasible(pool, k, cs))
    rng = np.random.default_rng(seed)
    if not feasible:
        with pytest.raises(Infeasible):
            resolve_map(dof(k), pool, cs, policy, {}, rng, max_rejections=5)
        return
    got = resolve_map(dof(k), pool, cs, policy, {}, rng, max_rejections=5)
    assert tuple(got.assignment[p] for p in range(1, k + 1)) in feasible


def test_uniform_fallback_is_uniform_over_feasible():
    # All 24 orderings of 3 out of 4 items, 16 of them keep i0 and i1 apart.
    pool = items(4)
    cs = [compile_constraint('not adjacent("i0", "i1")')]
    assert len(enumerate_feasible(pool, 3, cs)) == 16
    rng = np.random.default_rng(5)
    counts = Counter()
    for _ in range(3200):
        r = resolve_map(dof(3), pool, cs, Uniform(), {}, rng, max_rejections=1)
        counts[tuple(r.assignment.values())] += 1
    assert len(counts) == 16
    assert min(counts.values()) > 140 and max(counts.values()) < 260


def test_inorder_is_top_k_when_unconstrained():
    r = resolve_map(dof(3), items(5), [], InOrder(), {}, np.random.default_rng(0))
    assert r.assignment == {1: "i0", 2: "i1", 3: "i2"}
    assert (r.rejections, r.fallback) == (0, False)


def test_inorder_respects_constraints():
    cs = [compile_constraint('count(item.category = "sport") <= 1')]
    pool = items(5, ["sport", "sport", "tech", "sport", "tech"])
    r = resolve_map(dof(3), pool, cs, InOrder(), {}, np.random.default_rng(0))
    assert r.assignment == {1: "i0", 2: "i2", 3: "i4"}
    assert r.rejections == 0


def test_pool_too_small():
    with pytest.raises(PoolTooSmall):
        resolve_map(dof(4), items(3), [], Uniform(), {}, np.random.default_rng(0))


def test_infeasible_constraint():
    cs = [compile_constraint('contains("nope")')]
    with pytest.raises(Infeasible):
        resolve_map(dof(2), items(4), cs, Thompson(), {}, np.random.default_rng(0), max_rejections=3)


def test_budget_exhaustion():
    cs = [compile_constraint('count(item.rank >= 0) = 0')]
    # Only complete assignments are decisive: position k is where the search stalls.
    with pytest.raises((SearchSpaceTooLarge, Infeasible)):
        resolve_map(dof(4), items(20), cs, Thompson(), {}, np.random.default_rng(0), max_rejections=2,
                    node_budget=50)


def test_inadmissibility_memo_changes_nothing():
    pool = items(12)
    cs = [compile_constraint('attr(1, "rank") > 8'), compile_constraint('count(item.category = "sport") <= 1')]
    memo: set = set()
    a = [resolve_map(dof(3), pool, cs, Thompson(), {}, np.random.default_rng(s)).assignment for s in range(30)]
    b = [resolve_map(dof(3), pool, cs, Thompson(), {}, np.random.default_rng(s), inadmissible=memo).assignment
         for s in range(30)]
    assert a == b
    assert memo and all(p == 0 for _, p in memo)


def test_constrained_sample_counts_rejections():
    proposals = iter([[0], None, [1], [2]])
    view = {f"i{j}": {} for j in range(3)}
    res = constrained_sample(proposals, [compile_constraint('contains("i2")')],
                             lambda idx: EvalContext({1: f"i{idx[0]}"}, view),
                             max_rejections=10, fallback=lambda: [9])
    assert (res.assignment, res.proposal_rank, res.rejections, res.fallback) == ((2,), 4, 3, False)
    res = constrained_sample(iter([None] * 3), [], lambda i: None, 3, lambda: [7])
    assert (res.assignment, res.rejections, res.fallback) == ((7,), 3, True)
    with pytest.raises(ValueError):
        constrained_sample(iter([]), [], lambda i: None, 0, lambda: [])


# ---------------------------------------------------------------- choices and policies

def choice_dof():
    body = "".join(f'<apl:alternative id="a{j}"><apl:operator id="o{j}" handler="h"/></apl:alternative>'
                   for j in range(3))
    return enumerate_dofs(parse_potl(wrap_source(f'<apl:choice id="c">{body}</apl:choice>')))[0].dof


def test_choice_policies():
    c = choice_dof()
    stats = {ArmKey.choice("c", "a1"): ArmStats(100, 50), ArmKey.choice("c", "a0"): ArmStats(100, 5),
             ArmKey.choice("c", "a2"): ArmStats(100, 10)}
    rng = np.random.default_rng(0)
    assert resolve_choice(c, EpsilonGreedy(0.0), stats, rng) == 1
    assert resolve_choice(c, InOrder(), stats, rng) == 0
    assert Counter(resolve_choice(c, Thompson(), stats, rng) for _ in range(200))[1] > 190
    assert resolve_choice(c, UCB1(), {}, rng) == 0
    with pytest.raises(ValueError):
        resolve_choice(c, Uniform(), [ArmStats()], rng)


def test_uniform_choice_is_uniform():
    rng = np.random.default_rng(1)
    counts = Counter(resolve_choice(choice_dof(), Uniform(), {}, rng) for _ in range(6000))
    assert all(1800 < v < 2200 for v in counts.values())


def test_ucb_score():
    assert ucb_score(ArmStats(10, 5), 100) == pytest.approx(0.5 + math.sqrt(2 * math.log(100) / 10))
    with pytest.raises(DomainError):
        ucb_score(ArmStats(), 10)
    with pytest.raises(DomainError):
        ucb_score(ArmStats(10, 1), 5)


def test_arm_stats_invariants():
    with pytest.raises(DomainError):
        ArmStats(1, 2)
    with pytest.raises(DomainError):
        ArmStats(-1, 0)
    s = ArmStats().impressed(4).clicked(1)
    assert (s.alpha, s.beta, s.mean) == (2.0, 4.0, 0.25)
    assert ArmStats.from_json(s.to_json()) == s
    key = ArmKey.map("m", "x", 3)
    assert ArmKey.deserialize(key.serialize()) == key


def test_map_table_layout():
    stats = {ArmKey.map("m", "b", 2): ArmStats(10, 3), ArmKey.map("other", "b", 2): ArmStats(5, 5),
             ArmKey.map("m", "zz", 1): ArmStats(4, 1)}
    t = map_table("m", ["a", "b"], [1.0, 0.5], 2, stats)
    assert t.shape == (2, 2)
    assert t.impressions.tolist() == [[0, 0], [0, 10]]
    assert t.alpha[1, 1] == 4 and t.beta[1, 1] == 8
    assert t.means[1, 1] == pytest.approx(0.3)


def test_registry():
    reg = default_policies()
    assert reg.names() == ["epsilon_greedy", "inorder", "thompson", "ucb1", "uniform"]
    reg.alias("HotChain", "epsilon_greedy", epsilon=0.3)
    assert reg.get("HotChain").epsilon == 0.3
    assert reg.get({"name": "epsilon_greedy", "epsilon": 0.0}).deterministic
    with pytest.raises(UnknownPolicy):
        reg.get("nope")
    with pytest.raises(DomainError):
        reg.get("epsilon_greedy", epsilon=2)


def test_derived_streams_are_independent_and_stable():
    a = derive_rng(1, "x").random(3)
    assert np.array_equal(a, derive_rng(1, "x").random(3))
    assert not np.array_equal(a, derive_rng(1, "y").random(3))
    assert not np.array_equal(a, derive_rng(2, "x").random(3))


def test_stream_cache_matches_fresh_streams():
    cache = StreamCache()
    first = cache.get(7, "x").random(4)
    cache.get(7, "y").random(2)
    assert np.array_equal(first, derive_rng(7, "x").random(4))
    assert np.array_equal(cache.get(7, "x").random(4), first)  # reseeded, not continued
    assert np.array_equal(cache.get(8, "x").random(4), derive_rng(8, "x").random(4))

