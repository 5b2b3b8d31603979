"""Built-in resolution policies and their registry.

A policy resolves a choice by returning an alternative index, and scores a map
by returning an ``n_items x k`` matrix from which assignments are built greedily
position by position. Returning ``None`` from :meth:`Policy.map_scores` asks
for a uniformly random injective proposal instead.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from ..errors import DomainError, UnknownPolicy
from .stats import ArmStats, ucb_score

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MapTable:
    """Per-(item, position) statistics for one map, items in canonical order."""

    item_ids: tuple[str, ...]
    item_scores: np.ndarray  # (n,)
    impressions: np.ndarray  # (n, k)
    clicks: np.ndarray  # (n, k)
    alpha: np.ndarray  # (n, k)
    beta: np.ndarray  # (n, k)

    @property
    def shape(self) -> tuple[int, int]:
        return self.impressions.shape

    @property
    def means(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.impressions > 0, self.clicks / np.maximum(self.impressions, 1), 0.0)


def _argmax_first(values: Sequence[float]) -> int:
    best, best_v = 0, values[0]
    for i, v in enumerate(values):
        if v > best_v:
            best, best_v = i, v
    return best


class Policy:
    name = "base"
    # Deterministic policies produce the same proposal every time for the
    # same statistics, so retrying them is pointless.
    deterministic = False
    uses_stats = True

    def choose(self, arms: Sequence[ArmStats], rng: np.random.Generator) -> int:
        raise NotImplementedError

    def map_scores(self, table: MapTable, rng: np.random.Generator) -> np.ndarray | None:
        raise NotImplementedError

    def describe(self) -> str:
        return self.name


class Uniform(Policy):
    name = "uniform"
    uses_stats = False

    def choose(self, arms, rng):
        return int(rng.integers(len(arms)))

    def map_scores(self, table, rng):
        return None


class InOrder(Policy):
    """Top-k by item score; a choice takes its first alternative."""

    name = "inorder"
    deterministic = True
    uses_stats = False

    def choose(self, arms, rng):
        return 0

    def map_scores(self, table, rng):
        n, k = table.shape
        return np.repeat(table.item_scores[:, None], k, axis=1)


class EpsilonGreedy(Policy):
    name = "epsilon_greedy"

    def __init__(self, epsilon: float = 0.1):
        if not 0.0 <= epsilon <= 1.0:
            raise DomainError(f"epsilon must be in [0, 1], got {epsilon}")
        self.epsilon = float(epsilon)
        self.deterministic = self.epsilon == 0.0

    def choose(self, arms, rng):
        if self.epsilon > 0 and rng.random() < self.epsilon:
            return int(rng.integers(len(arms)))
        return _argmax_first([a.mean for a in arms])

    def map_scores(self, table, rng):
        if self.epsilon > 0 and rng.random() < self.epsilon:
            return None
        return table.means

    def describe(self) -> str:
        return f"epsilon_greedy(epsilon={self.epsilon:g})"


class UCB1(Policy):
    """UCB1; arms never played are tried first, lowest index first."""

    name = "ucb1"
    deterministic = True

    def choose(self, arms, rng):
        for i, a in enumerate(arms):
            if a.impressions == 0:
                return i
        t = sum(a.impressions for a in arms)
        return _argmax_first([ucb_score(a, t) for a in arms])

    def map_scores(self, table, rng):
        n = table.impressions
        t = n.sum(axis=0, keepdims=True)  # plays of each position
        with np.errstate(divide="ignore", invalid="ignore"):
            bonus = np.sqrt(2.0 * np.log(np.maximum(t, 1)) / np.maximum(n, 1))
        return np.where(n > 0, table.means + bonus, math.inf)


class Thompson(Policy):
    """Beta-Bernoulli Thompson sampling, prior Beta(1, 1)."""

    name = "thompson"

    def choose(self, arms, rng):
        # scalar draws: same stream as the vector call, far less overhead
        return _argmax_first([rng.beta(a.alpha, a.beta) for a in arms])

    def map_scores(self, table, rng):
        return rng.beta(table.alpha, table.beta)


PolicyFactory = Callable[..., Policy]


class PolicyRegistry:
    """Name -> policy factory, plus handler aliases such as
    ``InorderMapSearcherChain -> inorder``."""

    def __init__(self):
        self._factories: dict[str, PolicyFactory] = {}
        self._aliases: dict[str, tuple[str, dict[str, Any]]] = {}

    def register(self, name: str, factory: PolicyFactory) -> None:
        if name in self._factories:
            log.info("re-registering policy %r", name)
        self._factories[name] = factory

    def alias(self, handler: str, policy: str, **params: Any) -> None:
        self._aliases[handler] = (policy, params)

    def names(self) -> list[str]:
        return sorted(self._factories)

    def __contains__(self, name: str) -> bool:
        return name in self._factories or name in self._aliases

    def get(self, name: str | Mapping[str, Any], **params: Any) -> Policy:
        """Instantiate a policy from a name, an alias, or ``{"name": ..., **params}``."""
        if isinstance(name, Mapping):
            spec = dict(name)
            name = spec.pop("name")
            params = {**spec, **params}
        if name in self._aliases and name not in self._factories:
            target, alias_params = self._aliases[name]
            return self.get(target, **{**alias_params, **params})
        factory = self._factories.get(name)
        if factory is None:
            raise UnknownPolicy(name)
        return factory(**params)


def default_policies() -> PolicyRegistry:
    reg = PolicyRegistry()
    reg.register("uniform", Uniform)
    reg.register("inorder", InOrder)
    reg.register("epsilon_greedy", EpsilonGreedy)
    reg.register("ucb1", UCB1)
    reg.register("thompson", Thompson)
    return reg
