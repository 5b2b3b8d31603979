"""Reward bookkeeping primitives: arm keys, Beta-Bernoulli arm statistics, and
the two scoring rules (UCB1 index, posterior draw) the bandit policies use."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import DomainError

PRIOR_ALPHA = 1.0
PRIOR_BETA = 1.0


class ArmKey(NamedTuple):
    """One rewardable decision unit.

    For a choice arm ``detail`` is the alternative id and ``position`` is 0;
    for a map arm it is the item id and its 1-based position. Tuple ordering
    gives the total order used for deterministic iteration.
    """

    dof_id: str
    kind: str
    detail: str
    position: int = 0

    @classmethod
    def choice(cls, dof_id: str, alternative: str) -> ArmKey:
        return cls(dof_id, "choice", alternative, 0)

    @classmethod
    def map(cls, dof_id: str, item: str, position: int) -> ArmKey:
        return cls(dof_id, "map", item, position)

    def serialize(self) -> str:
        return json.dumps([self.dof_id, self.kind, self.detail, self.position], ensure_ascii=False)

    @classmethod
    def deserialize(cls, text: str) -> ArmKey:
        dof_id, kind, detail, position = json.loads(text)
        return cls(dof_id, kind, detail, int(position))


@dataclass(frozen=True)
class ArmStats:
    impressions: int = 0
    clicks: int = 0
    prior_alpha: float = PRIOR_ALPHA
    prior_beta: float = PRIOR_BETA

    def __post_init__(self):
        if self.impressions < 0 or self.clicks < 0:
            raise DomainError("counts must be non-negative")
        if self.clicks > self.impressions:
            raise DomainError(f"clicks ({self.clicks}) exceed impressions ({self.impressions})")

    @property
    def alpha(self) -> float:
        return self.prior_alpha + self.clicks

    @property
    def beta(self) -> float:
        return self.prior_beta + self.impressions - self.clicks

    @property
    def mean(self) -> float:
        """Empirical click rate; 0 for an unplayed arm."""
        return self.clicks / self.impressions if self.impressions else 0.0

    def impressed(self, n: int = 1) -> ArmStats:
        return ArmStats(self.impressions + n, self.clicks, self.prior_alpha, self.prior_beta)

    def clicked(self, n: int = 1) -> ArmStats:
        return ArmStats(self.impressions, self.clicks + n, self.prior_alpha, self.prior_beta)

    def to_json(self) -> dict:
        return {"impressions": self.impressions, "clicks": self.clicks, "alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_json(cls, obj: dict) -> ArmStats:
        impressions, clicks = int(obj["impressions"]), int(obj["clicks"])
        alpha = float(obj.get("alpha", PRIOR_ALPHA + clicks))
        beta = float(obj.get("beta", PRIOR_BETA + impressions - clicks))
        return cls(impressions, clicks, alpha - clicks, beta - (impressions - clicks))


EMPTY = ArmStats()


def ucb_score(arm: ArmStats, t: int) -> float:
    """UCB1 index: empirical mean plus ``sqrt(2 ln t / n)``."""
    if arm.impressions <= 0:
        raise DomainError("UCB score undefined for an unplayed arm")
    if t < arm.impressions:
        raise DomainError(f"total plays {t} smaller than arm plays {arm.impressions}")
    return arm.clicks / arm.impressions + math.sqrt(2.0 * math.log(t) / arm.impressions)


def posterior_sample(arm: ArmStats, rng: np.random.Generator) -> float:
    """One draw from the arm's Beta posterior."""
    a, b = arm.alpha, arm.beta
    if not (a > 0 and b > 0):
        raise DomainError(f"Beta parameters must be positive, got ({a}, {b})")
    return float(rng.beta(a, b))
