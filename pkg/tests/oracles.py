"""Hand-written reference predicates for the eight constraint encodings.

Each one reads the assignment as a plain tuple (item at position 1 first) and
the item attributes as dicts. They share no code with the DSL evaluator.
"""

from __future__ import annotations

import math

def ref_not_adjacent(seq, view, cols):
    pos = {x: p for p, x in enumerate(seq, 1)}
    return not ("mail" in pos and "messenger" in pos and abs(pos["mail"] - pos["messenger"]) == 1)


def ref_travel_needs_weather(seq, view, cols):
    return "travel" not in seq or "weather" in seq


def ref_mail_first(seq, view, cols):
    return bool(seq) and seq[0] == "mail"


def _count(seq, view, key, value):
    return sum(1 for x in seq if view[x].get(key) == value)


def ref_sport_cap(seq, view, cols):
    return _count(seq, view, "category", "sport") <= 2


def ref_local_floor(seq, view, cols):
    return _count(seq, view, "geo_local", "yes") >= 1


def ref_fresh_lead(seq, view, cols):
    age = view[seq[0]].get("age_hours") if seq else None
    return isinstance(age, (int, float)) and age < 2


def ref_celeb_cap(seq, view, cols):
    return _count(seq, view, "category", "celeb") <= 3


def ref_long_per_row(seq, view, cols):
    rows: dict[int, int] = {}
    for p, x in enumerate(seq, 1):
        wc = view[x].get("word_count")
        if isinstance(wc, (int, float)) and wc > 2:
            rows[math.ceil(p / cols)] = rows.get(math.ceil(p / cols), 0) + 1
    return max(rows.values(), default=0) <= 1


ENCODINGS = {
    'not adjacent("mail","messenger")': ref_not_adjacent,
    'implies(contains("travel"), contains("weather"))': ref_travel_needs_weather,
    'position("mail") = 1': ref_mail_first,
    'count(item.category = "sport") <= 2': ref_sport_cap,
    'count(item.geo_local = "yes") >= 1': ref_local_floor,
    'attr(1, "age_hours") < 2': ref_fresh_lead,
    'count(item.category = "celeb") <= 3': ref_celeb_cap,
    "max_per_row(item.word_count > 2) <= 1": ref_long_per_row,
}
