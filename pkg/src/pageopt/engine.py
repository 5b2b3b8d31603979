"""Turns a logical page model into a concrete, instrumented page instance.

Sources are visited in document pre-order. For each one the engine fetches its
items, resolves its degree of freedom (if any) against the constraints in
scope, and renders a fragment. Every clickable unit gets an instrumentation
token so that feedback can be attributed back to the decisions that produced
it. Any failure aborts the whole instantiation; partial pages are never served.
"""

from __future__ import annotations

import hashlib
import html
import json
import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Mapping, Sequence

from .dsl import ConstraintExpr, EvalContext, Verdict, check_scope, compile_constraint
from .errors import PageOptError
from .fetchers import FetchContext, FetcherRegistry, Item, format_timestamp, parse_timestamp
from .potl import ChoiceDoF, DofDescriptor, MapDoF, OperatorDef, PageModel, enumerate_dofs
from .resolvers import (
    DEFAULT_MAX_REJECTIONS,
    ArmKey,
    ArmStats,
    PolicyRegistry,
    StreamCache,
    default_policies,
    resolve_choice,
    resolve_map,
)

log = logging.getLogger(__name__)

EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)
INADMISSIBLE_MEMO_SIZE = 256


@dataclass(frozen=True)
class Context:
    request_id: str
    user_id: str | None = None
    now: datetime = EPOCH
    seed: int = 0
    extra: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Decision:
    dof_id: str
    kind: str
    policy: str
    resolution: str | tuple[str, ...]
    proposal_rank: int
    stats_generation: int
    rejections: int = 0
    fallback: bool = False
    fetch_seq: int | None = None  # index into the instance's fetch log
    columns: int = 1
    ancestors: tuple[ArmKey, ...] = ()

    def to_dict(self) -> dict:
        return {
            "dof_id": self.dof_id, "kind": self.kind, "policy": self.policy,
            "resolution": list(self.resolution) if isinstance(self.resolution, tuple) else self.resolution,
            "proposal_rank": self.proposal_rank, "rejections": self.rejections, "fallback": self.fallback,
            "stats_generation": self.stats_generation, "fetch_seq": self.fetch_seq, "columns": self.columns,
            "ancestors": [list(a) for a in self.ancestors],
        }


@dataclass(frozen=True)
class Slot:
    """One clickable unit of a served page."""

    token: str
    region: str
    label: str
    kind: str  # "map" | "choice" | "static"
    dof_id: str | None
    position: int
    value: str | None
    arm: ArmKey | None
    ancestors: tuple[ArmKey, ...]
    fragment: str

    def to_dict(self) -> dict:
        return {
            "token": self.token, "region": self.region, "label": self.label, "kind": self.kind,
            "dof_id": self.dof_id, "position": self.position, "value": self.value,
            "arm": list(self.arm) if self.arm else None,
            "ancestors": [list(a) for a in self.ancestors], "fragment": self.fragment,
        }


@dataclass(frozen=True)
class RegionRender:
    label: str
    token: str
    module: str
    fragment: str

    def to_dict(self) -> dict:
        return {"label": self.label, "token": self.token, "module": self.module, "fragment": self.fragment}


@dataclass(frozen=True)
class PageInstance:
    instance_id: str
    model_digest: str
    request_id: str
    seed: int
    assignment: dict[str, Any]
    trace: tuple[Decision, ...]
    slots: tuple[Slot, ...]
    regions: tuple[RegionRender, ...]
    created_at: datetime
    fetch_log: tuple[str, ...] = ()
    # Attributes of the items actually placed, per map, for post-hoc checks.
    served_items: dict[str, dict[str, dict[str, Any]]] = field(default_factory=dict)
    query: dict[str, Any] = field(default_factory=dict)

    def exercised_arms(self) -> list[ArmKey]:
        arms: list[ArmKey] = []
        for d in self.trace:
            if d.kind == "choice":
                arms.append(ArmKey.choice(d.dof_id, d.resolution))
            else:
                arms.extend(ArmKey.map(d.dof_id, item, p) for p, item in enumerate(d.resolution, start=1))
        return arms

    def slot_for(self, token: str) -> Slot | None:
        for s in self.slots:
            if s.token == token:
                return s
        return None

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "model_digest": self.model_digest,
            "request_id": self.request_id,
            "seed": self.seed,
            "created_at": format_timestamp(self.created_at),
            "assignment": {k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in self.assignment.items()},
            "trace": [d.to_dict() for d in self.trace],
            "slots": [s.to_dict() for s in self.slots],
            "regions": [r.to_dict() for r in self.regions],
            "fetch_log": list(self.fetch_log),
            "served_items": self.served_items,
            "query": self.query,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PageInstance:
        def arm(x):
            return ArmKey(x[0], x[1], x[2], int(x[3])) if x else None

        trace = tuple(
            Decision(
                t["dof_id"], t["kind"], t["policy"],
                tuple(t["resolution"]) if isinstance(t["resolution"], list) else t["resolution"],
                t["proposal_rank"], t["stats_generation"], t.get("rejections", 0), t.get("fallback", False),
                t.get("fetch_seq"), t.get("columns", 1), tuple(arm(a) for a in t.get("ancestors", [])),
            )
            for t in d["trace"]
        )
        slots = tuple(
            Slot(s["token"], s["region"], s["label"], s["kind"], s["dof_id"], s["position"], s["value"],
                 arm(s["arm"]), tuple(arm(a) for a in s["ancestors"]), s["fragment"])
            for s in d["slots"]
        )
        regions = tuple(RegionRender(r["label"], r["token"], r["module"], r["fragment"]) for r in d["regions"])
        return cls(d["instance_id"], d["model_digest"], d["request_id"], d["seed"], dict(d["assignment"]),
                   trace, slots, regions, parse_timestamp(d["created_at"]), tuple(d.get("fetch_log", ())),
                   dict(d.get("served_items", {})), dict(d.get("query", {})))


def _canonical(obj):
    if isinstance(obj, float):
        return round(obj, 9)
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def render_json(instance: PageInstance) -> str:
    """Canonical JSON: sorted keys, compact separators, floats rounded to 9 places."""
    return json.dumps(_canonical(instance.to_dict()), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def make_instance_id(model_digest: str, request_id: str, seed: int) -> str:
    h = hashlib.blake2b(digest_size=16)
    for part in (model_digest, request_id, str(seed)):
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def make_token(instance_id: str, key: str) -> str:
    return hashlib.blake2b(f"{instance_id}\x00{key}".encode("utf-8"), digest_size=8).hexdigest()


# --------------------------------------------------------------------------- renderers


@dataclass(frozen=True)
class RenderInput:
    module: str
    renderer: str
    region: str
    items: Sequence[Item]
    slots: Sequence[Slot]


Renderer = Callable[[RenderInput], str]


def _title(item: Item | None, fallback: str) -> str:
    if item is None:
        return html.escape(fallback)
    return html.escape(str(item.attributes.get("title", item.id)))


def default_renderer(data: RenderInput) -> str:
    by_id = {it.id: it for it in data.items}
    parts = [f'<div class="module" data-module="{html.escape(data.module)}">']
    for s in data.slots:
        if s.kind == "map":
            parts.append(f'<span data-slot="{s.token}">{_title(by_id.get(s.value), s.value or "")}</span>')
        else:
            titles = ", ".join(_title(it, it.id) for it in data.items)
            parts.append(f'<span data-slot="{s.token}">{titles}</span>')
    parts.append("</div>")
    return "".join(parts)


class RendererRegistry:
    def __init__(self, default: Renderer = default_renderer):
        self._entries: dict[str, Renderer] = {}
        self.default = default

    def register(self, label: str, renderer: Renderer) -> None:
        self._entries[label] = renderer

    def get(self, label: str) -> Renderer:
        return self._entries.get(label, self.default)


# --------------------------------------------------------------------------- engine


@dataclass
class _Build:
    ctx: Context
    instance_id: str
    stats: Mapping[ArmKey, ArmStats]
    generation: int
    trace: list[Decision] = field(default_factory=list)
    slots: list[Slot] = field(default_factory=list)
    regions: list[RegionRender] = field(default_factory=list)
    fetch_log: list[str] = field(default_factory=list)
    assignment: dict[str, Any] = field(default_factory=dict)
    served: dict[str, dict[str, dict[str, Any]]] = field(default_factory=dict)

    def token(self, key: str) -> str:
        return make_token(self.instance_id, key)


class Engine:
    """Binds a page model to fetcher, policy and renderer registries."""

    def __init__(
        self,
        model: PageModel,
        fetchers: FetcherRegistry,
        policies: PolicyRegistry | None = None,
        renderers: RendererRegistry | None = None,
        *,
        policy_overrides: Mapping[str, Any] | None = None,
        default_policy: str = "uniform",
        max_rejections: int = DEFAULT_MAX_REJECTIONS,
        max_rejections_per_dof: Mapping[str, int] | None = None,
        columns: Mapping[str, int] | None = None,
    ):
        self.model = model
        self.fetchers = fetchers
        self.policies = policies or default_policies()
        self.renderers = renderers or RendererRegistry()
        self.policy_overrides = dict(policy_overrides or {})
        self.default_policy = default_policy
        self.max_rejections = max_rejections
        self.max_rejections_per_dof = dict(max_rejections_per_dof or {})
        self.columns = dict(columns or {})
        self.dofs: list[DofDescriptor] = enumerate_dofs(model)
        self._by_id = {d.id: d for d in self.dofs}
        self.constraints: dict[str, list[ConstraintExpr]] = {
            d.id: [compile_constraint(c.expression_text, c.id) for c in d.constraints]
            for d in self.dofs if d.kind == "map"
        }
        self._policy_cache: dict[str, Any] = {}
        # Per-pool memo of (item, position) pairs that violate a constraint on their own.
        self._inadmissible: OrderedDict[tuple, set[tuple[int, int]]] = OrderedDict()
        self._memo_lock = threading.Lock()
        self._streams = StreamCache()

    # -- configuration lookups

    def policy_spec(self, dof) -> Any:
        if dof.id in self.policy_overrides:
            return self.policy_overrides[dof.id]
        return dof.handler or self.default_policy

    def policy_for(self, dof):
        policy = self._policy_cache.get(dof.id)
        if policy is None:
            policy = self.policies.get(self.policy_spec(dof))
            self._policy_cache[dof.id] = policy
        return policy

    def columns_for(self, dof: MapDoF) -> int:
        return self.columns.get(dof.id) or dof.columns or 1

    def _inadmissible_for(self, key: tuple) -> set[tuple[int, int]]:
        with self._memo_lock:
            memo = self._inadmissible.get(key)
            if memo is None:
                memo = self._inadmissible[key] = set()
                while len(self._inadmissible) > INADMISSIBLE_MEMO_SIZE:
                    self._inadmissible.popitem(last=False)
            else:
                self._inadmissible.move_to_end(key)
            return memo

    def descriptor(self, dof_id: str) -> DofDescriptor:
        return self._by_id[dof_id]

    # -- instantiation

    def instantiate(self, ctx: Context, stats: Mapping[ArmKey, ArmStats] | None = None) -> PageInstance:
        stats = stats if stats is not None else {}
        generation = int(getattr(stats, "generation", 0))
        b = _Build(ctx, make_instance_id(self.model.source_digest, ctx.request_id, ctx.seed), stats, generation)
        for region in self.model.regions:
            try:
                self._region(b, region)
            except PageOptError as exc:
                raise exc.in_region(region.label, region.path)
        tokens = [s.token for s in b.slots] + [r.token for r in b.regions]
        if len(set(tokens)) != len(tokens):
            raise RuntimeError("instrumentation token collision")
        return PageInstance(
            b.instance_id, self.model.source_digest, ctx.request_id, ctx.seed, b.assignment, tuple(b.trace),
            tuple(b.slots), tuple(b.regions), ctx.now, tuple(b.fetch_log), b.served, dict(ctx.extra),
        )

    def _fetch(self, b: _Build, op: OperatorDef) -> tuple[list[Item], int]:
        items = self.fetchers.fetch(op, FetchContext(b.ctx.now, b.ctx.extra))
        b.fetch_log.append(op.id)
        return items, len(b.fetch_log) - 1

    def _region(self, b: _Build, region) -> None:
        for module in region.modules:
            body = module.source.body
            start = len(b.slots)
            if isinstance(body, OperatorDef):
                items, _ = self._fetch(b, body)
                b.slots.append(Slot(b.token(f"static:{module.label}"), region.label, module.label, "static",
                                    None, 0, None, None, (), ""))
            elif isinstance(body, MapDoF):
                items = self._map(b, region.label, body, ())
            else:
                items = self._choice(b, region.label, body)
            own = b.slots[start:]
            fragment = self.renderers.get(module.renderer_label)(
                RenderInput(module.label, module.renderer_label, region.label, items, own))
            b.regions.append(RegionRender(region.label, b.token(f"region:{region.label}"), module.label, fragment))

    def _map(self, b: _Build, region: str, dof: MapDoF, ancestors: tuple[ArmKey, ...]) -> list[Item]:
        items, seq = self._fetch(b, dof.item_source)
        policy = self.policy_for(dof)
        cols = self.columns_for(dof)
        memo = self._inadmissible_for(
            (dof.id, tuple(it.id for it in items), b.ctx.now, cols, tuple(sorted(b.ctx.extra.items()))))
        res = resolve_map(
            dof, items, self.constraints[dof.id], policy, b.stats, self._streams.get(b.ctx.seed, dof.id),
            columns=cols, max_rejections=self.max_rejections_per_dof.get(dof.id, self.max_rejections),
            now=b.ctx.now, query=b.ctx.extra, inadmissible=memo,
        )
        chosen = tuple(res.assignment[p] for p in range(1, dof.k + 1))
        b.trace.append(Decision(dof.id, "map", policy.describe(), chosen, res.proposal_rank, b.generation,
                                res.rejections, res.fallback, seq, cols, ancestors))
        b.assignment[dof.id] = list(chosen)
        by_id = {it.id: it for it in items}
        b.served[dof.id] = {i: by_id[i].view(b.ctx.now) for i in chosen}
        labels = dof.position_labels
        for p, item in enumerate(chosen, start=1):
            label = labels[p - 1] or f"{dof.id}[{p}]"
            b.slots.append(Slot(b.token(f"map:{dof.id}:{p}"), region, label, "map", dof.id, p, item,
                                ArmKey.map(dof.id, item, p), ancestors, ""))
        return [by_id[i] for i in chosen]

    def _choice(self, b: _Build, region: str, dof: ChoiceDoF) -> list[Item]:
        policy = self.policy_for(dof)
        index = resolve_choice(dof, policy, b.stats, self._streams.get(b.ctx.seed, dof.id))
        alt = dof.alternatives[index]
        b.trace.append(Decision(dof.id, "choice", policy.describe(), alt.id, 1, b.generation))
        b.assignment[dof.id] = alt.id
        arm = ArmKey.choice(dof.id, alt.id)
        if isinstance(alt.body, MapDoF):
            return self._map(b, region, alt.body, (arm,))
        items, _ = self._fetch(b, alt.body)
        b.slots.append(Slot(b.token(f"choice:{dof.id}"), region, alt.id, "choice", dof.id, 0, alt.id, arm, (), ""))
        return items

    # -- post-hoc verification

    def check_instance(self, instance: PageInstance) -> dict[str, Verdict]:
        """Re-run every constraint scope on the served assignment."""
        out: dict[str, Verdict] = {}
        for d in instance.trace:
            if d.kind != "map":
                continue
            view = instance.served_items[d.dof_id]
            assignment = {p: item for p, item in enumerate(d.resolution, start=1)}
            out[d.dof_id] = check_scope(self.constraints[d.dof_id],
                                        EvalContext(assignment, view, d.columns, query=instance.query))
        return out
