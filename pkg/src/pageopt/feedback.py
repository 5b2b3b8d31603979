"""Real-time feedback: serves, impressions and clicks flowing back into arm stats.

Every served instance credits one impression to each arm it exercised. A click
on a slot token credits the slot's own arm and every ancestor decision on the
path from the layout root (e.g. the choice whose alternative contains the map).
Each arm is credited at most once per instance, which keeps
``clicks <= impressions`` on every arm.

All mutations go through :class:`FeedbackLoop`, which serialises them under a
lock. Readers take immutable snapshots.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from collections import OrderedDict, deque
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Iterator, Mapping

from .engine import PageInstance
from .errors import DomainError, DuplicateInstance, StorageError
from .fetchers import format_timestamp, parse_timestamp
from .resolvers import EMPTY, ArmKey, ArmStats

log = logging.getLogger(__name__)

DEFAULT_INDEX_CAPACITY = 100_000
DEFAULT_DEDUP_WINDOW = 100_000


def ctr(arm: ArmStats) -> float:
    if arm.impressions < 1:
        raise DomainError("CTR undefined for zero impressions")
    return arm.clicks / arm.impressions


@dataclass(frozen=True)
class Event:
    instance_id: str
    type: str  # "impression" | "click"
    at: datetime
    token: str | None = None

    def __post_init__(self):
        if self.type not in ("impression", "click"):
            raise ValueError(f"event type must be 'impression' or 'click', got {self.type!r}")
        if self.type == "click" and not self.token:
            raise ValueError("click events must carry a token")

    @property
    def identity(self) -> tuple:
        return (self.instance_id, self.token, self.type, format_timestamp(self.at))

    def to_json(self) -> dict[str, Any]:
        d: dict[str, Any] = {"instance_id": self.instance_id, "type": self.type, "at": format_timestamp(self.at)}
        if self.token is not None:
            d["token"] = self.token
        return d

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> Event:
        if not isinstance(obj, Mapping):
            raise ValueError("event must be a JSON object")
        iid = obj.get("instance_id")
        if not isinstance(iid, str) or not iid:
            raise ValueError("event needs a non-empty string instance_id")
        token = obj.get("token")
        if token is not None and not isinstance(token, str):
            raise ValueError("token must be a string")
        at = obj.get("at")
        if not isinstance(at, str):
            raise ValueError("event needs an ISO-8601 'at'")
        return cls(iid, obj.get("type"), parse_timestamp(at), token)


class StatsSnapshot(Mapping):
    """Immutable view of the arm table at one generation.

    Arms are grouped per DoF so that resolvers can read just the arms of the
    DoF they are resolving.
    """

    def __init__(self, by_dof: Mapping[str, Mapping[ArmKey, ArmStats]], generation: int):
        self._by_dof = by_dof
        self.generation = generation

    def __getitem__(self, key: ArmKey) -> ArmStats:
        return self._by_dof[key[0]][key]

    def get(self, key: ArmKey, default=None):
        group = self._by_dof.get(key[0])
        return default if group is None else group.get(key, default)

    def __contains__(self, key) -> bool:
        group = self._by_dof.get(key[0]) if isinstance(key, tuple) and key else None
        return group is not None and key in group

    def __iter__(self) -> Iterator[ArmKey]:
        for group in self._by_dof.values():
            yield from group

    def __len__(self) -> int:
        return sum(len(g) for g in self._by_dof.values())

    def dof_arms(self, dof_id: str) -> Mapping[ArmKey, ArmStats]:
        return self._by_dof.get(dof_id, MappingProxyType({}))

    def for_dof(self, dof_id: str) -> dict[ArmKey, ArmStats]:
        return dict(sorted(self.dof_arms(dof_id).items()))


class StatsStore:
    """Arm table. Mutations copy only the per-DoF groups they touch, so
    snapshots are cheap and never change once taken."""

    def __init__(self, arms: Mapping[ArmKey, ArmStats] | None = None, generation: int = 0):
        self._by_dof: dict[str, dict[ArmKey, ArmStats]] = {}
        for key, value in (arms or {}).items():
            self._by_dof.setdefault(key.dof_id, {})[key] = value
        self.generation = generation
        self._snapshot: StatsSnapshot | None = None
        self._shared: set[str] = set()  # groups currently referenced by a snapshot

    @property
    def arms(self) -> Mapping[ArmKey, ArmStats]:
        return MappingProxyType({k: v for g in self._by_dof.values() for k, v in g.items()})

    def get(self, key: ArmKey) -> ArmStats:
        return self._by_dof.get(key.dof_id, {}).get(key, EMPTY)

    def _group(self, dof_id: str) -> dict[ArmKey, ArmStats]:
        group = self._by_dof.get(dof_id)
        if group is None:
            group = self._by_dof[dof_id] = {}
        elif dof_id in self._shared:
            group = self._by_dof[dof_id] = dict(group)
            self._shared.discard(dof_id)
        return group

    def apply(self, impressions: Iterable[ArmKey] = (), clicks: Iterable[ArmKey] = ()) -> None:
        """Apply one batch and bump the generation."""
        for key in impressions:
            g = self._group(key.dof_id)
            g[key] = g.get(key, EMPTY).impressed()
        for key in clicks:
            g = self._group(key.dof_id)
            g[key] = g.get(key, EMPTY).clicked()
        self.generation += 1
        self._snapshot = None

    def snapshot(self) -> StatsSnapshot:
        if self._snapshot is None:
            groups = {d: MappingProxyType(g) for d, g in self._by_dof.items()}
            self._shared = set(self._by_dof)
            self._snapshot = StatsSnapshot(MappingProxyType(groups), self.generation)
        return self._snapshot

    def to_json(self) -> dict[str, Any]:
        arms = {k: v for g in self._by_dof.values() for k, v in g.items()}
        return {
            "generation": self.generation,
            "arms": {k.serialize(): v.to_json() for k, v in sorted(arms.items())},
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> StatsStore:
        arms = {ArmKey.deserialize(k): ArmStats.from_json(v) for k, v in obj["arms"].items()}
        return cls(arms, int(obj["generation"]))


def snapshot(store: StatsStore) -> StatsSnapshot:
    return store.snapshot()


def persist(store: StatsStore, path: str | Path, *, log_offset: int | None = None) -> None:
    """Write the arm table atomically (temp file + rename)."""
    data = store.to_json()
    if log_offset is not None:
        data["log_offset"] = log_offset
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with tmp.open("w", encoding="utf-8") as fh:
            json.dump(data, fh, sort_keys=True, indent=1)
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageError(f"cannot write stats snapshot: {exc}", path=str(path)) from exc


def load(path: str | Path) -> StatsStore:
    try:
        with open(path, encoding="utf-8") as fh:
            return StatsStore.from_json(json.load(fh))
    except (OSError, ValueError, KeyError) as exc:
        raise StorageError(f"cannot load stats snapshot: {exc}", path=str(path)) from exc


@dataclass(frozen=True)
class _Indexed:
    arms: tuple[ArmKey, ...]
    tokens: Mapping[str, tuple[ArmKey, ...]]  # token -> (own arm..., ancestors...)


class InstanceIndex:
    """Bounded LRU of served instances; lookups on evicted ids return ``None``."""

    def __init__(self, capacity: int = DEFAULT_INDEX_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._entries: OrderedDict[str, _Indexed] = OrderedDict()
        self._ever: set[str] = set()
        # Arms already credited with a click, per instance.
        self.credited: dict[str, set[ArmKey]] = {}

    def __contains__(self, instance_id: str) -> bool:
        return instance_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def seen(self, instance_id: str) -> bool:
        return instance_id in self._ever

    def add(self, instance_id: str, entry: _Indexed) -> None:
        self._entries[instance_id] = entry
        self._ever.add(instance_id)
        self.credited[instance_id] = set()
        while len(self._entries) > self.capacity:
            evicted, _ = self._entries.popitem(last=False)
            self.credited.pop(evicted, None)

    def get(self, instance_id: str) -> _Indexed | None:
        entry = self._entries.get(instance_id)
        if entry is not None:
            self._entries.move_to_end(instance_id)
        return entry


@dataclass(frozen=True)
class AttributionResult:
    updated: tuple[ArmKey, ...] = ()
    slot_arm: ArmKey | None = None
    dead_letter: str | None = None
    duplicate: bool = False


@dataclass(frozen=True)
class DeadLetter:
    event: Mapping[str, Any]
    reason: str


def _serve_record(instance: PageInstance) -> dict[str, Any]:
    tokens = {}
    for s in instance.slots:
        chain = ([s.arm] if s.arm else []) + list(s.ancestors)
        tokens[s.token] = [list(a) for a in chain]
    return {"instance_id": instance.instance_id, "arms": [list(a) for a in instance.exercised_arms()],
            "tokens": tokens}


def _arm(x) -> ArmKey:
    return ArmKey(x[0], x[1], x[2], int(x[3]))


class FeedbackLoop:
    """Single-writer owner of the stats store, instance index and event log."""

    def __init__(
        self,
        store: StatsStore | None = None,
        *,
        index_capacity: int = DEFAULT_INDEX_CAPACITY,
        dedup_window: int = DEFAULT_DEDUP_WINDOW,
        event_log: str | Path | None = None,
    ):
        self.store = store or StatsStore()
        self.index = InstanceIndex(index_capacity)
        self.dedup_window = dedup_window
        self._recent: deque[tuple] = deque()
        self._recent_set: set[tuple] = set()
        self.dead_letters: list[DeadLetter] = []
        self.click_events = 0
        self.impression_events = 0
        self.serves = 0
        self._lock = threading.RLock()
        self._log_path = Path(event_log) if event_log else None
        self._log_fh = None
        self.log_lines = 0
        if self._log_path is not None:
            try:
                self._log_fh = self._log_path.open("a", encoding="utf-8")
            except OSError as exc:
                raise StorageError(f"cannot open event log: {exc}", path=str(self._log_path)) from exc

    def close(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    def _append(self, record: Mapping[str, Any]) -> None:
        self.log_lines += 1
        if self._log_fh is not None:
            self._log_fh.write(json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n")
            self._log_fh.flush()

    def snapshot(self) -> StatsSnapshot:
        with self._lock:
            return self.store.snapshot()

    # -- writes

    def record_serve(self, instance: PageInstance) -> None:
        self._apply_serve(_serve_record(instance))

    def _apply_serve(self, record: Mapping[str, Any]) -> None:
        with self._lock:
            iid = record["instance_id"]
            if self.index.seen(iid):
                raise DuplicateInstance(f"instance {iid} already recorded")
            arms = tuple(_arm(a) for a in record["arms"])
            tokens = {t: tuple(_arm(a) for a in chain) for t, chain in record["tokens"].items()}
            self.index.add(iid, _Indexed(arms, tokens))
            self.store.apply(impressions=arms)
            self.serves += 1
            self._append({"serve": record})

    def ingest_event(self, event: Event | Mapping[str, Any]) -> AttributionResult:
        with self._lock:
            raw = event.to_json() if isinstance(event, Event) else dict(event)
            try:
                ev = event if isinstance(event, Event) else Event.from_json(event)
            except (ValueError, TypeError) as exc:
                return self._dead(raw, f"malformed event: {exc}")
            key = ev.identity
            if key in self._recent_set:
                return AttributionResult(duplicate=True)
            self._remember(key)
            self._append(ev.to_json())
            entry = self.index.get(ev.instance_id)
            if entry is None:
                reason = "evicted instance" if self.index.seen(ev.instance_id) else "unknown instance"
                return self._dead(raw, reason, logged=True)
            if ev.type == "impression":
                # Impressions are credited at serve time; the event is only counted.
                self.impression_events += 1
                return AttributionResult()
            chain = entry.tokens.get(ev.token)
            if chain is None:
                return self._dead(raw, "unknown token", logged=True)
            self.click_events += 1
            credited = self.index.credited[ev.instance_id]
            fresh = tuple(a for a in chain if a not in credited)
            credited.update(fresh)
            if fresh:
                self.store.apply(clicks=fresh)
            own = chain[0] if chain else None
            return AttributionResult(fresh, own if own in fresh else None)

    def _remember(self, key: tuple) -> None:
        if self.dedup_window <= 0:
            return
        self._recent.append(key)
        self._recent_set.add(key)
        while len(self._recent) > self.dedup_window:
            self._recent_set.discard(self._recent.popleft())

    def _dead(self, raw: Mapping[str, Any], reason: str, logged: bool = False) -> AttributionResult:
        self.dead_letters.append(DeadLetter(raw, reason))
        log.debug("dead-lettered event %s: %s", raw, reason)
        return AttributionResult(dead_letter=reason)

    # -- replay / recovery

    def replay(self, lines: Iterable[str]) -> int:
        """Re-apply a JSONL log (serve records and events) in order."""
        n = 0
        for line in lines:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "serve" in record:
                self._apply_serve(record["serve"])
            else:
                self.ingest_event(record)
            n += 1
        return n

    @classmethod
    def from_log(cls, path: str | Path, **kwargs) -> FeedbackLoop:
        loop = cls(**kwargs)
        try:
            with open(path, encoding="utf-8") as fh:
                loop.replay(fh)
        except OSError as exc:
            raise StorageError(f"cannot read event log: {exc}", path=str(path)) from exc
        return loop

    def checkpoint(self, path: str | Path) -> None:
        with self._lock:
            persist(self.store, path, log_offset=self.log_lines)

    @classmethod
    def recover(cls, snapshot_path: str | Path, log_path: str | Path, **kwargs) -> FeedbackLoop:
        """Load the last checkpoint, then replay the log tail written after it.

        Clicks in the tail on instances served before the checkpoint are
        dead-lettered, since the instance index is not checkpointed.
        """
        try:
            with open(snapshot_path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, ValueError) as exc:
            raise StorageError(f"cannot load stats snapshot: {exc}", path=str(snapshot_path)) from exc
        offset = int(data.get("log_offset", 0))
        loop = cls(StatsStore.from_json(data), **kwargs)
        try:
            with open(log_path, encoding="utf-8") as fh:
                tail = [ln for i, ln in enumerate(fh) if i >= offset]
        except OSError as exc:
            raise StorageError(f"cannot read event log: {exc}", path=str(log_path)) from exc
        loop.replay(tail)
        loop.log_lines = offset + len(tail)
        return loop

    def stats_for(self, dof_id: str, include: Iterable[ArmKey] = ()) -> dict[str, Any]:
        """Arm table of one DoF; arms in *include* are listed even if never played."""
        snap = self.snapshot()
        arms = dict(snap.for_dof(dof_id))
        for key in include:
            arms.setdefault(key, EMPTY)
        arms = dict(sorted(arms.items()))
        return {
            "dof_id": dof_id,
            "generation": snap.generation,
            "arms": [{"key": list(k), **v.to_json()} for k, v in arms.items()],
        }
