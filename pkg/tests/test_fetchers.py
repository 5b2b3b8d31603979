from __future__ import annotations

import json
import os
from datetime import datetime, timezone

import pytest

from pageopt.errors import FetchFailed, UnknownHandler
from pageopt.fetchers import (
    CatalogFetcher,
    ConstFetcher,
    FetchContext,
    FetcherRegistry,
    Item,
    fetcher_from_spec,
    format_timestamp,
    parse_timestamp,
)
from pageopt.potl import enumerate_dofs, parse_potl

from conftest import map_model

NOW = datetime(2024, 1, 1, 12, tzinfo=timezone.utc)
CTX = FetchContext(NOW)


def operator(k=2, pool=None):
    return enumerate_dofs(parse_potl(map_model(k, pool=pool)))[0].dof.item_source


def write(path, items):
    path.write_text(json.dumps(items), encoding="utf-8")
    return path


def test_timestamps():
    dt = parse_timestamp("2024-01-01T10:30:00Z")
    assert dt == datetime(2024, 1, 1, 10, 30, tzinfo=timezone.utc)
    assert parse_timestamp("2024-01-01T10:30:00") == dt
    assert parse_timestamp(format_timestamp(dt)) == dt


def test_item_view_adds_age():
    it = Item.from_json({"id": "x", "created_at": "2024-01-01T10:30:00Z", "attributes": {"a": 1}})
    assert it.view(NOW) == {"a": 1, "age_hours": 1.5}
    assert it.view() == {"a": 1}
    assert Item.from_json(it.to_json()) == it


def test_canonical_order_and_bound(tmp_path):
    path = write(tmp_path / "c.json", [{"id": "b", "score": 1}, {"id": "a", "score": 1}, {"id": "c", "score": 2}])
    got = CatalogFetcher(path)(operator(pool=2), CTX)
    assert [it.id for it in got] == ["c", "a"]
    assert [it.id for it in CatalogFetcher(path)(operator(), CTX)] == ["c", "a", "b"]


def test_catalog_reload_on_change(tmp_path):
    path = write(tmp_path / "c.json", [{"id": "a"}])
    f = CatalogFetcher(path)
    assert [it.id for it in f(operator(1), CTX)] == ["a"]
    write(path, [{"id": "a"}, {"id": "zz", "score": 5}])
    os.utime(path, ns=(1, 10**18))
    assert [it.id for it in f(operator(1), CTX)] == ["zz", "a"]


def test_results_are_copies(tmp_path):
    f = CatalogFetcher(write(tmp_path / "c.json", [{"id": "a"}]))
    first = f(operator(1), CTX)
    first.clear()
    assert len(f(operator(1), CTX)) == 1


def test_match_filter(demo):
    choice = demo.engine.descriptor("ImageColorChoice").dof
    fetch = demo.engine.fetchers.fetch
    for alt, vertical in zip(choice.alternatives, ["cars", "jobs", "games"]):
        got = fetch(alt.body, CTX)
        assert got and {it.attributes["verticalId"] for it in got} == {vertical}


def test_registry_errors(tmp_path):
    reg = FetcherRegistry()
    with pytest.raises(UnknownHandler):
        reg.fetch(operator(), CTX)
    reg.register("items", CatalogFetcher(tmp_path / "missing.json"))
    with pytest.raises(FetchFailed):
        reg.fetch(operator(), CTX)
    reg.register("items", lambda op, ctx: [Item("a"), Item("a")])
    with pytest.raises(FetchFailed):
        reg.fetch(operator(), CTX)


def test_bad_catalog_content(tmp_path):
    reg = FetcherRegistry({"items": CatalogFetcher(write(tmp_path / "c.json", {"id": "a"}))})
    with pytest.raises(FetchFailed):
        reg.fetch(operator(), CTX)
    reg.register("items", CatalogFetcher(write(tmp_path / "d.json", [{"id": "a"}, {"id": "a"}])))
    with pytest.raises(FetchFailed):
        reg.fetch(operator(), CTX)


def test_spec_forms(tmp_path):
    write(tmp_path / "c.json", [{"id": "a"}])
    assert isinstance(fetcher_from_spec("c.json", tmp_path), CatalogFetcher)
    const = fetcher_from_spec({"type": "const", "items": [{"id": "q", "attributes": {"v": "x"}}], "match": ["v"]})
    assert isinstance(const, ConstFetcher)
    assert [it.id for it in const(operator(), CTX)] == ["q"]
    with pytest.raises(ValueError):
        fetcher_from_spec({"type": "ftp"})
