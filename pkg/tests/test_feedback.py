from __future__ import annotations

import json
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pageopt.engine import Context, Engine
from pageopt.errors import DomainError, DuplicateInstance, StorageError
from pageopt.feedback import Event, FeedbackLoop, StatsStore, ctr, load, persist
from pageopt.fetchers import ConstFetcher, FetcherRegistry, Item
from pageopt.potl import parse_potl
from pageopt.resolvers import ArmKey, ArmStats

from conftest import map_model, wrap_source

AT = datetime(2024, 1, 1, 12, tzinfo=timezone.utc)


def nested_engine():
    alt = ('<apl:alternative id="{0}"><apl:map id="m{0}" handler="uniform"><apl:operator id="o{0}" handler="items">'
           '<property key="number of regions" value="2"/></apl:operator></apl:map></apl:alternative>')
    text = wrap_source(f'<apl:choice id="c" handler="uniform">{alt.format("x")}{alt.format("y")}</apl:choice>')
    return Engine(parse_potl(text), FetcherRegistry({"items": ConstFetcher([Item("a"), Item("b"), Item("c")])}))


def map_engine():
    return Engine(parse_potl(map_model(2)), FetcherRegistry({"items": ConstFetcher([Item("a"), Item("b")])}))


def click(inst, slot_index=0, at=AT):
    return Event(inst.instance_id, "click", at, inst.slots[slot_index].token)


def test_ctr():
    assert ctr(ArmStats(4, 1)) == 0.25
    with pytest.raises(DomainError):
        ctr(ArmStats())


def test_serve_credits_impressions():
    loop = FeedbackLoop()
    inst = map_engine().instantiate(Context("r"))
    loop.record_serve(inst)
    snap = loop.snapshot()
    assert {k: v.impressions for k, v in snap.items()} == {k: 1 for k in inst.exercised_arms()}
    assert snap.generation == 1


def test_click_credits_own_arm_and_ancestors_once():
    loop = FeedbackLoop()
    inst = nested_engine().instantiate(Context("r"))
    loop.record_serve(inst)
    first = loop.ingest_event(click(inst, 0))
    chosen = inst.assignment["c"]
    choice_arm = ArmKey.choice("c", chosen)
    assert first.slot_arm == inst.slots[0].arm
    assert set(first.updated) == {inst.slots[0].arm, choice_arm}
    # Second click on a sibling slot: the choice arm is not credited twice.
    second = loop.ingest_event(click(inst, 1))
    assert set(second.updated) == {inst.slots[1].arm}
    snap = loop.snapshot()
    assert snap[choice_arm] == ArmStats(1, 1)
    assert all(v.clicks <= v.impressions for v in snap.values())


def test_duplicate_events_are_ignored():
    loop = FeedbackLoop()
    inst = map_engine().instantiate(Context("r"))
    loop.record_serve(inst)
    loop.ingest_event(click(inst))
    assert loop.ingest_event(click(inst)).duplicate
    assert loop.click_events == 1


def test_repeat_click_after_dedup_window_credits_nothing():
    loop = FeedbackLoop(dedup_window=0)
    inst = map_engine().instantiate(Context("r"))
    loop.record_serve(inst)
    loop.ingest_event(click(inst))
    again = loop.ingest_event(click(inst))
    assert again.updated == () and again.slot_arm is None
    assert loop.snapshot()[inst.slots[0].arm] == ArmStats(1, 1)


@pytest.mark.parametrize("event, reason", [
    ({"instance_id": "nope", "type": "click", "at": "2024-01-01T00:00:00Z", "token": "t"}, "unknown instance"),
    ({"instance_id": "x", "type": "hover", "at": "2024-01-01T00:00:00Z"}, "malformed"),
    ({"instance_id": "x", "type": "click", "at": "2024-01-01T00:00:00Z"}, "malformed"),
    ({"type": "click"}, "malformed"),
])
def test_dead_letters(event, reason):
    loop = FeedbackLoop()
    res = loop.ingest_event(event)
    assert reason in res.dead_letter
    assert len(loop.dead_letters) == 1
    assert len(loop.snapshot()) == 0


def test_unknown_token_and_eviction():
    loop = FeedbackLoop(index_capacity=1)
    eng = map_engine()
    a, b = eng.instantiate(Context("a")), eng.instantiate(Context("b"))
    loop.record_serve(a)
    assert "unknown token" in loop.ingest_event(Event(a.instance_id, "click", AT, "zz")).dead_letter
    loop.record_serve(b)
    assert loop.ingest_event(click(a)).dead_letter == "evicted instance"


def test_impression_events_do_not_double_count():
    loop = FeedbackLoop()
    inst = map_engine().instantiate(Context("r"))
    loop.record_serve(inst)
    loop.ingest_event(Event(inst.instance_id, "impression", AT))
    assert all(v.impressions == 1 for v in loop.snapshot().values())
    assert loop.impression_events == 1


def test_duplicate_serve():
    loop = FeedbackLoop()
    inst = map_engine().instantiate(Context("r"))
    loop.record_serve(inst)
    with pytest.raises(DuplicateInstance):
        loop.record_serve(inst)


def test_snapshots_are_immutable():
    loop = FeedbackLoop()
    eng = map_engine()
    loop.record_serve(eng.instantiate(Context("a")))
    before = loop.snapshot()
    frozen = dict(before)
    loop.record_serve(eng.instantiate(Context("b")))
    assert dict(before) == frozen
    assert loop.snapshot().generation == before.generation + 1
    with pytest.raises(TypeError):
        before.dof_arms("m")[ArmKey.map("m", "a", 1)] = ArmStats()


def test_persist_and_load(tmp_path):
    store = StatsStore({ArmKey.map("m", "a", 1): ArmStats(3, 1), ArmKey.choice("c", "x"): ArmStats(2, 2)}, 5)
    persist(store, tmp_path / "s.json")
    again = load(tmp_path / "s.json")
    assert dict(again.arms) == dict(store.arms) and again.generation == 5
    assert not (tmp_path / "s.json.tmp").exists()
    with pytest.raises(StorageError):
        load(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(StorageError):
        load(tmp_path / "bad.json")


def _drive(loop, eng, n, clicks_every=2):
    for i in range(n):
        inst = eng.instantiate(Context(f"r{i}", seed=i), loop.snapshot())
        loop.record_serve(inst)
        if i % clicks_every == 0:
            loop.ingest_event(click(inst, i % len(inst.slots)))


def test_replay_reproduces_the_table(tmp_path):
    log_path = tmp_path / "events.jsonl"
    loop = FeedbackLoop(event_log=log_path)
    _drive(loop, nested_engine(), 40)
    loop.ingest_event({"instance_id": "ghost", "type": "click", "at": "2024-01-01T00:00:00Z", "token": "t"})
    loop.close()
    again = FeedbackLoop.from_log(log_path)
    assert dict(again.snapshot()) == dict(loop.snapshot())
    assert again.snapshot().generation == loop.snapshot().generation
    assert len(again.dead_letters) == len(loop.dead_letters) == 1


def test_checkpoint_and_recover(tmp_path):
    log_path, snap_path = tmp_path / "events.jsonl", tmp_path / "stats.json"
    eng = nested_engine()
    loop = FeedbackLoop(event_log=log_path)
    _drive(loop, eng, 20)
    loop.checkpoint(snap_path)
    for i in range(20, 35):
        inst = eng.instantiate(Context(f"r{i}", seed=i), loop.snapshot())
        loop.record_serve(inst)
        loop.ingest_event(click(inst))
    loop.close()
    rec = FeedbackLoop.recover(snap_path, log_path)
    assert dict(rec.snapshot()) == dict(loop.snapshot())
    with pytest.raises(StorageError):
        FeedbackLoop.recover(tmp_path / "none.json", log_path)


def test_stats_for_lists_requested_arms():
    loop = FeedbackLoop()
    out = loop.stats_for("c", include=[ArmKey.choice("c", "x")])
    assert out["arms"] == [{"key": ["c", "choice", "x", 0], "impressions": 0, "clicks": 0, "alpha": 1.0, "beta": 1.0}]


def test_event_json_round_trip():
    ev = Event("i", "click", AT, "t")
    assert Event.from_json(json.loads(json.dumps(ev.to_json()))) == ev


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 3)), max_size=40))
def test_clicks_never_exceed_impressions(clicks):
    loop = FeedbackLoop(dedup_window=0)
    eng = nested_engine()
    served = []
    for i in range(10):
        inst = eng.instantiate(Context(f"r{i}", seed=i), loop.snapshot())
        loop.record_serve(inst)
        served.append(inst)
    for which, slot in clicks:
        inst = served[which]
        loop.ingest_event(click(inst, slot % len(inst.slots)))
    assert all(v.clicks <= v.impressions for v in loop.snapshot().values())
