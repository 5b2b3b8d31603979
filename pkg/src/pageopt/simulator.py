"""Closed-loop evaluation against synthetic users.

Each simulated serve instantiates a page, records it, draws an independent
Bernoulli click for every clickable slot from a hidden :class:`UserModel`,
and feeds the clicks back. Regret is measured with expected (not realised)
clicks, relative to the best feasible decision under the hidden model.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .dsl import GUARD, ConstraintExpr, enumerate_feasible
from .engine import EPOCH, Context, Engine, PageInstance, Slot
from .errors import PageOptError, TooLarge
from .feedback import Event, FeedbackLoop
from .fetchers import FetchContext, Item
from .potl import ChoiceDoF, MapDoF
from .resolvers import ArmKey

# --------------------------------------------------------------------------- user model


@dataclass(frozen=True)
class UserModel:
    item_ctr: Mapping[str, float] = field(default_factory=dict)
    position_bias: Sequence[float] = (1.0,)
    alternative_ctr: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, table in (("item_ctr", self.item_ctr), ("alternative_ctr", self.alternative_ctr)):
            for key, p in table.items():
                if not 0.0 <= p <= 1.0:
                    raise ValueError(f"{name}[{key!r}] = {p} is not a probability")
        if not self.position_bias:
            raise ValueError("position_bias must not be empty")
        for b in self.position_bias:
            if not 0.0 <= b <= 1.0:
                raise ValueError(f"position bias {b} outside [0, 1]")

    def bias(self, position: int) -> float:
        """Multiplier for a 1-based position; positions past the list reuse the last entry."""
        pb = self.position_bias
        return pb[position - 1] if position <= len(pb) else pb[-1]

    def item_prob(self, item: str, position: int) -> float:
        return self.item_ctr.get(item, 0.0) * self.bias(position)

    def alternative_prob(self, alternative: str) -> float:
        return self.alternative_ctr.get(alternative, 0.0)

    def slot_prob(self, slot: Slot) -> float:
        if slot.kind == "map":
            return self.item_prob(slot.value, slot.position)
        if slot.kind == "choice":
            return self.alternative_prob(slot.value)
        return 0.0

    def to_json(self) -> dict[str, Any]:
        return {"item_ctr": dict(self.item_ctr), "position_bias": list(self.position_bias),
                "alternative_ctr": dict(self.alternative_ctr)}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> UserModel:
        return cls(
            {str(k): float(v) for k, v in obj.get("item_ctr", {}).items()},
            tuple(float(b) for b in obj.get("position_bias", [1.0])),
            {str(k): float(v) for k, v in obj.get("alternative_ctr", {}).items()},
        )

    @classmethod
    def load(cls, path: str | Path) -> UserModel:
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


# --------------------------------------------------------------------------- oracle


def map_value(user: UserModel, assignment: Sequence[str]) -> float:
    """Expected clicks of an ordered assignment (item at position 1 first)."""
    return sum(user.item_prob(item, p) for p, item in enumerate(assignment, start=1))


def oracle_best(
    user: UserModel,
    dof: MapDoF | ChoiceDoF,
    items: Sequence[Item] | None = None,
    constraints: Sequence[ConstraintExpr] = (),
    *,
    columns: int = 1,
    now: datetime | None = None,
    guard: int = GUARD,
) -> tuple[dict[int, str] | str, float]:
    """Exhaustive maximisation of expected clicks over the feasible set.

    For a choice, only the alternative's own click rate counts; see
    :class:`Simulation` for choices whose alternatives contain maps.
    Ties go to the first candidate in enumeration order.
    """
    if isinstance(dof, ChoiceDoF):
        best = max(dof.alternatives, key=lambda a: user.alternative_prob(a.id))
        return best.id, user.alternative_prob(best.id)
    view = {it.id: it.view(now) for it in items or ()}
    feasible = enumerate_feasible(view, dof.k, constraints, columns, guard=guard)
    if not feasible:
        raise PageOptError(f"no feasible assignment for {dof.id}")
    values = [map_value(user, a) for a in feasible]
    i = int(np.argmax(values))
    return {p: item for p, item in enumerate(feasible[i], start=1)}, float(values[i])


# --------------------------------------------------------------------------- report


@dataclass
class SimReport:
    serves: int
    seed: int
    policies: dict[str, str]
    total_clicks: int
    click_events: int
    arm_click_increments: int
    window: int
    window_ctr: list[float]
    regret: list[float]
    regret_excluded: list[str]
    choice_log: dict[str, list[str]]
    violations: int
    arms: list[dict[str, Any]]

    def to_json(self) -> dict[str, Any]:
        return {
            "serves": self.serves, "seed": self.seed, "policies": self.policies,
            "total_clicks": self.total_clicks, "click_events": self.click_events,
            "arm_click_increments": self.arm_click_increments, "window": self.window,
            "window_ctr": [round(x, 9) for x in self.window_ctr],
            "regret": [round(x, 9) for x in self.regret],
            "regret_excluded": self.regret_excluded, "choice_log": self.choice_log,
            "violations": self.violations, "arms": self.arms,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    def series_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["serve", "cumulative_regret", "window_ctr"])
        for i, r in enumerate(self.regret, start=1):
            ctr = self.window_ctr[i // self.window - 1] if i % self.window == 0 else ""
            w.writerow([i, f"{r:.9f}", f"{ctr:.9f}" if ctr != "" else ""])
        return buf.getvalue()

    def write(self, path: str | Path) -> tuple[Path, Path]:
        path = Path(path)
        csv_path = path.with_suffix(".csv")
        path.write_text(self.dumps() + "\n", encoding="utf-8")
        csv_path.write_text(self.series_csv(), encoding="utf-8")
        return path, csv_path

    def share(self, dof_id: str, alternative: str, last: int) -> float:
        """Fraction of the final *last* decisions of a choice that picked *alternative*."""
        tail = self.choice_log[dof_id][-last:]
        return tail.count(alternative) / len(tail) if tail else math.nan


def regret_curve(report: SimReport) -> list[float]:
    return list(report.regret)


# --------------------------------------------------------------------------- loop


def _serve_seed(seed: int, i: int) -> int:
    h = hashlib.blake2b(f"{seed}:{i}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "big") >> 1


class Simulation:
    """Serve/click/feedback loop over one engine and user model."""

    def __init__(self, engine: Engine, user: UserModel, *, seed: int = 0, now: datetime = EPOCH,
                 loop: FeedbackLoop | None = None, sync_every: int = 1, window: int = 1000,
                 check_constraints: bool = True):
        if sync_every < 1 or window < 1:
            raise ValueError("sync_every and window must be positive")
        self.engine = engine
        self.user = user
        self.seed = seed
        self.now = now
        self.loop = loop or FeedbackLoop()
        self.sync_every = sync_every
        self.window = window
        self.check_constraints = check_constraints
        self._oracle: dict[tuple, float | None] = {}
        self.excluded: set[str] = set()

    # Expected-value oracle per decision unit, cached on the fetched item ids.

    def _map_oracle(self, dof: MapDoF, items: Sequence[Item]) -> float | None:
        key = ("map", dof.id, tuple(it.id for it in items))
        if key not in self._oracle:
            try:
                _, value = oracle_best(self.user, dof, items, self.engine.constraints[dof.id],
                                       columns=self.engine.columns_for(dof), now=self.now)
            except TooLarge:
                value = None
                self.excluded.add(dof.id)
            self._oracle[key] = value
        return self._oracle[key]

    def _alt_value(self, dof: ChoiceDoF, alt) -> float | None:
        value = self.user.alternative_prob(alt.id)
        if isinstance(alt.body, MapDoF):
            items = self.engine.fetchers.fetch(alt.body.item_source, FetchContext(self.now, {}))
            sub = self._map_oracle(alt.body, items)
            return None if sub is None else value + sub
        return value

    def _choice_oracle(self, dof: ChoiceDoF) -> float | None:
        key = ("choice", dof.id)
        if key not in self._oracle:
            values = [self._alt_value(dof, a) for a in dof.alternatives]
            self._oracle[key] = None if any(v is None for v in values) else max(values)
        return self._oracle[key]

    def regret_of(self, instance: PageInstance) -> float:
        """Expected-click gap between the oracle and the served decisions."""
        regret = 0.0
        inside_choice = {d.dof_id for d in instance.trace if d.ancestors}
        for d in instance.trace:
            if d.dof_id in inside_choice:
                continue  # accounted for by its enclosing choice
            dof = self.engine.descriptor(d.dof_id).dof
            if isinstance(dof, MapDoF):
                items = self._fetched(instance, dof)
                best = self._map_oracle(dof, items)
                if best is not None:
                    regret += max(best - map_value(self.user, d.resolution), 0.0)
            else:
                best = self._choice_oracle(dof)
                if best is None:
                    continue
                got = self.user.alternative_prob(d.resolution)
                arm = ArmKey.choice(dof.id, d.resolution)
                for sub in instance.trace:
                    if sub.ancestors and sub.ancestors[-1] == arm:
                        got += map_value(self.user, sub.resolution)
                # The served decision is feasible, so only float noise can push this below 0.
                regret += max(best - got, 0.0)
        return regret

    def _fetched(self, instance: PageInstance, dof: MapDoF) -> list[Item]:
        return self.engine.fetchers.fetch(dof.item_source, FetchContext(self.now, instance.query))

    def run(self, n_serves: int) -> SimReport:
        if n_serves < 1:
            raise ValueError("n_serves must be at least 1")
        click_rng = np.random.default_rng([self.seed & 0xFFFFFFFFFFFFFFFF, 0x5EED])
        loop = self.loop
        stats = loop.snapshot()
        total_clicks = 0
        increments = 0
        violations = 0
        window_clicks = 0
        window_slots = 0
        window_ctr: list[float] = []
        regret: list[float] = []
        cumulative = 0.0
        choice_log: dict[str, list[str]] = {
            d.id: [] for d in self.engine.dofs if d.kind == "choice"
        }
        for i in range(n_serves):
            if i % self.sync_every == 0:
                stats = loop.snapshot()
            ctx = Context(f"sim-{self.seed}-{i}", now=self.now, seed=_serve_seed(self.seed, i))
            try:
                instance = self.engine.instantiate(ctx, stats)
            except PageOptError as exc:
                raise _at_serve(exc, i)
            if self.check_constraints:
                violations += sum(not v.ok for v in self.engine.check_instance(instance).values())
            loop.record_serve(instance)
            for d in instance.trace:
                if d.kind == "choice":
                    choice_log[d.dof_id].append(d.resolution)
            cumulative += self.regret_of(instance)
            regret.append(cumulative)
            for slot in instance.slots:
                p = self.user.slot_prob(slot)
                if slot.kind != "static":
                    window_slots += 1
                if p > 0.0 and click_rng.random() < p:
                    res = loop.ingest_event(Event(instance.instance_id, "click", self.now, slot.token))
                    total_clicks += 1
                    window_clicks += 1
                    increments += res.slot_arm is not None
            if (i + 1) % self.window == 0:
                window_ctr.append(window_clicks / window_slots if window_slots else 0.0)
                window_clicks = window_slots = 0
        snap = loop.snapshot()
        arms = [{"key": list(k), **v.to_json()} for k, v in sorted(snap.items())]
        policies = {d.id: self.engine.policy_for(d.dof).describe() for d in self.engine.dofs}
        return SimReport(
            n_serves, self.seed, policies, total_clicks, loop.click_events, increments, self.window,
            window_ctr, regret, sorted(self.excluded), choice_log, violations, arms,
        )


def _at_serve(exc: PageOptError, i: int) -> PageOptError:
    exc.args = (f"serve {i}: {exc.args[0]}",) + tuple(exc.args[1:])
    exc.serve_index = i
    return exc


def simulate(engine: Engine, user: UserModel, n_serves: int, seed: int = 0, **kwargs: Any) -> SimReport:
    """Run a fresh closed loop; see :class:`Simulation` for keyword options."""
    return Simulation(engine, user, seed=seed, **kwargs).run(n_serves)
