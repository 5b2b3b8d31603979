"""Dynamic content acquisition.

An operator's ``handler`` names a fetcher in a :class:`FetcherRegistry`. The
built-in fetchers read a JSON catalog file, return items given inline, or GET a
JSON array over HTTP. All of them return items in canonical order (score
descending, id ascending) and honour the ``number of items`` property as an
upper bound on the result size.
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

from .errors import FetchFailed, PageOptError, UnknownHandler
from .potl import PROP_ITEMS, OperatorDef

log = logging.getLogger(__name__)

Scalar = str | int | float | bool


def parse_timestamp(value: str | datetime) -> datetime:
    """ISO-8601 to an aware UTC datetime (accepts a trailing ``Z``)."""
    if isinstance(value, datetime):
        dt = value
    else:
        text = value.strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


@dataclass(frozen=True)
class Item:
    id: str
    attributes: Mapping[str, Scalar] = field(default_factory=dict)
    score: float = 0.0
    created_at: datetime | None = None

    def age_hours(self, now: datetime) -> float | None:
        if self.created_at is None:
            return None
        return (now - self.created_at).total_seconds() / 3600.0

    def view(self, now: datetime | None = None) -> dict[str, Scalar]:
        """Attributes visible to constraints, including derived ``age_hours``."""
        out = dict(self.attributes)
        if now is not None and self.created_at is not None:
            out["age_hours"] = self.age_hours(now)
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> Item:
        if not isinstance(obj, Mapping) or not isinstance(obj.get("id"), str):
            raise ValueError(f"catalog entry needs a string 'id': {obj!r}")
        created = obj.get("created_at")
        return cls(
            id=obj["id"],
            attributes=dict(obj.get("attributes") or {}),
            score=float(obj.get("score", 0.0)),
            created_at=parse_timestamp(created) if created else None,
        )

    def to_json(self) -> dict[str, Any]:
        d: dict[str, Any] = {"id": self.id, "score": self.score, "attributes": dict(self.attributes)}
        if self.created_at is not None:
            d["created_at"] = format_timestamp(self.created_at)
        return d


@dataclass(frozen=True)
class Catalog:
    name: str
    items: tuple[Item, ...]

    def __post_init__(self):
        seen: set[str] = set()
        for it in self.items:
            if it.id in seen:
                raise ValueError(f"catalog {self.name!r} has duplicate item id {it.id!r}")
            seen.add(it.id)

    @classmethod
    def from_json(cls, name: str, data: Any) -> Catalog:
        if not isinstance(data, list):
            raise ValueError(f"catalog {name!r} must be a JSON array")
        return cls(name, tuple(Item.from_json(o) for o in data))


def load_catalog(path: str | Path) -> Catalog:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return Catalog.from_json(path.name, json.load(fh))


@dataclass(frozen=True)
class FetchContext:
    now: datetime
    extra: Mapping[str, str] = field(default_factory=dict)


class Fetcher(Protocol):
    def __call__(self, op: OperatorDef, context: FetchContext) -> list[Item]: ...


def canonical_order(items) -> list[Item]:
    return sorted(items, key=lambda it: (-it.score, it.id))


def matching(op: OperatorDef, items, keys: Sequence[str]) -> list[Item]:
    """Items whose attribute equals the operator property of the same name, for each key."""
    wanted = [(k, op.prop(k)) for k in keys if op.prop(k) is not None]
    return [it for it in items if all(str(it.attributes.get(k)) == v for k, v in wanted)]


def bounded(op: OperatorDef, items) -> list[Item]:
    """Canonical order, truncated to the operator's ``number of items`` when set."""
    ordered = canonical_order(items)
    limit = op.prop(PROP_ITEMS)
    if limit is not None:
        ordered = ordered[: max(int(limit), 0)]
    return ordered


class CatalogFetcher:
    """Items from a JSON catalog file.

    The parsed file is reused while its mtime and size are unchanged, so an
    edited file is picked up on the next fetch.
    """

    def __init__(self, path: str | Path, match: Sequence[str] = ()):
        self.path = Path(path)
        self.match = tuple(match)
        self._cached: tuple[tuple[int, int], Catalog] | None = None
        self._lock = threading.Lock()

    def _catalog(self) -> Catalog:
        st = self.path.stat()
        stamp = (st.st_mtime_ns, st.st_size)
        with self._lock:
            if self._cached is None or self._cached[0] != stamp:
                self._cached = (stamp, load_catalog(self.path))
                self._results: dict[tuple, tuple[Item, ...]] = {}
            return self._cached[1]

    def _stamp(self) -> tuple[int, int] | None:
        return self._cached[0] if self._cached else None

    def __call__(self, op: OperatorDef, context: FetchContext) -> list[Item]:
        catalog = self._catalog()
        key = (self._stamp(), op.id, tuple(op.properties))
        with self._lock:
            hit = self._results.get(key)
        if hit is None:
            hit = tuple(bounded(op, matching(op, catalog.items, self.match)))
            with self._lock:
                self._results[key] = hit
        return list(hit)

    def __repr__(self) -> str:
        return f"CatalogFetcher({str(self.path)!r})"


class ConstFetcher:
    def __init__(self, items, match: Sequence[str] = ()):
        self.catalog = Catalog("const", tuple(it if isinstance(it, Item) else Item.from_json(it) for it in items))
        self.match = tuple(match)

    def __call__(self, op: OperatorDef, context: FetchContext) -> list[Item]:
        return bounded(op, matching(op, self.catalog.items, self.match))


class HttpFetcher:
    def __init__(self, url: str, timeout: float = 5.0):
        self.url = url
        self.timeout = timeout

    def __call__(self, op: OperatorDef, context: FetchContext) -> list[Item]:
        req = urllib.request.Request(self.url, headers={"Accept": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            if not 200 <= resp.status < 300:
                raise RuntimeError(f"HTTP {resp.status} from {self.url}")
            payload = json.loads(resp.read().decode("utf-8"))
        return bounded(op, Catalog.from_json(self.url, payload).items)


class FetcherRegistry:
    def __init__(self, entries: Mapping[str, Fetcher] | None = None):
        self._entries: dict[str, Fetcher] = {}
        for name, fetcher in (entries or {}).items():
            self.register(name, fetcher)

    def register(self, name: str, fetcher: Fetcher) -> None:
        if not name:
            raise ValueError("fetcher name must be non-empty")
        if name in self._entries:
            log.info("re-registering fetcher %r (was %r)", name, self._entries[name])
        self._entries[name] = fetcher

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def names(self) -> list[str]:
        return sorted(self._entries)

    def get(self, name: str) -> Fetcher:
        try:
            return self._entries[name]
        except KeyError:
            raise UnknownHandler(name) from None

    def fetch(self, op: OperatorDef, context: FetchContext) -> list[Item]:
        fetcher = self.get(op.handler)
        try:
            items = list(fetcher(op, context))
        except PageOptError:
            raise
        except (OSError, ValueError, RuntimeError, urllib.error.URLError) as exc:
            raise FetchFailed(op.id, exc, path=op.path) from exc
        ids = [it.id for it in items]
        if len(set(ids)) != len(ids):
            raise FetchFailed(op.id, "duplicate item ids in fetch result", path=op.path)
        return items


def fetcher_from_spec(spec: Mapping[str, Any] | str, base_dir: Path | None = None) -> Fetcher:
    """Build a built-in fetcher from its config entry.

    A bare string is a catalog path; otherwise ``{"type": "catalog"|"const"|"http", ...}``.
    """
    if isinstance(spec, str):
        spec = {"type": "catalog", "path": spec}
    kind = spec.get("type", "catalog")
    if kind == "catalog":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return CatalogFetcher(path, spec.get("match", ()))
    if kind == "const":
        return ConstFetcher(spec.get("items", []), spec.get("match", ()))
    if kind == "http":
        return HttpFetcher(spec["url"], float(spec.get("timeout", 5.0)))
    raise ValueError(f"unknown fetcher type {kind!r}")


BUILTIN_FETCHERS: dict[str, Callable[..., Fetcher]] = {
    "catalog": CatalogFetcher,
    "const": ConstFetcher,
    "http": HttpFetcher,
}
