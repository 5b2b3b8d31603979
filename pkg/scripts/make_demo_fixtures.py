"""Regenerate the demo catalogs, configs and user models under src/pageopt/fixtures/.

Deterministic: the same script always writes byte-identical files.
"""

from __future__ import annotations

import json
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "pageopt" / "fixtures"
NOW = datetime(2024, 1, 1, 12, tzinfo=timezone.utc)

SITES = [
    "mail", "messenger", "travel", "weather", "finance", "sports", "news", "movies", "music", "games",
    "autos", "shopping", "answers", "groups", "maps", "health", "realestate", "jobs", "horoscopes",
    "personals", "flickr", "omg", "tv", "style", "food", "tech", "parenting", "local", "search", "dating",
]
NEWS_CATEGORIES = ["sport", "politics", "business", "tech", "celeb", "world", "science", "local"]
TREND_CATEGORIES = ["celeb", "sport", "tv", "music", "politics", "tech"]
WORDS = "storm final vote star launch record playoff premiere crash merger rally award trial quake".split()


def _dump(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _ts(dt: datetime) -> str:
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def catalogs(rng: random.Random) -> dict[str, list[dict]]:
    sites = [
        {"id": s, "score": round(1 - i / len(SITES), 4), "attributes": {"title": s.capitalize()}}
        for i, s in enumerate(SITES)
    ]
    news = []
    for i in range(500):
        age = rng.uniform(0.05, 48.0)
        news.append({
            "id": f"news{i:03d}",
            "score": round(rng.random(), 4),
            "created_at": _ts(NOW - timedelta(hours=age)),
            "attributes": {
                "title": f"Story {i}",
                "category": rng.choice(NEWS_CATEGORIES),
                "geo_local": "yes" if rng.random() < 0.2 else "no",
            },
        })
    trends = []
    for i in range(300):
        n_words = rng.choice([1, 1, 2, 2, 2, 3, 4])
        trends.append({
            "id": f"trend{i:03d}",
            "score": round(rng.random(), 4),
            "attributes": {
                "title": " ".join(rng.choice(WORDS) for _ in range(n_words)),
                "category": rng.choice(TREND_CATEGORIES),
                "word_count": n_words,
            },
        })
    verticals = [
        {"id": f"{v}{j}", "score": round(1 - j / 10, 2), "attributes": {"title": f"{v} pick {j}", "verticalId": v}}
        for v in ("cars", "jobs", "games") for j in range(3)
    ]

    def static(prefix: str, n: int) -> list[dict]:
        return [{"id": f"{prefix}{j}", "score": round(1 - j / 10, 2), "attributes": {"title": f"{prefix} {j}"}}
                for j in range(n)]

    return {
        "sites": sites, "news": news, "trends": trends, "verticals": verticals,
        "header": static("header", 1), "ads": static("ad", 2), "headlines": static("headline", 5),
        "video": static("video", 3),
    }


def demo_config() -> dict:
    cat = "catalogs/{}.json".format
    return {
        "model": "appendix_b.potl",
        "layout": "appendix_a.html",
        "alias": {
            "YahooHeader": "header", "YahooSitesRegion": "westRegtion", "TodayRegion": "centerUpRegion",
            "TrendingNowRegion": "centerButtomRegion", "DisplayAds": "East1Region",
            "VeritcalHeadlines": "East2Region", "LatestVideo": "East3Region", "YahooVertical": "East4Region",
        },
        "fetchers": {
            "YahooHeaderSearcherChain": cat("header"),
            "YahooSiteSearcherChain": cat("sites"),
            "NewsSearcherChain": cat("news"),
            "TrendingNowSearcherChain": cat("trends"),
            "DisplayAdsSearcherChain": cat("ads"),
            "VeritcalHeadlinesSearcherChain": cat("headlines"),
            "LatestVideoSearcherChain": cat("video"),
            "VerticalInfoSearchChain": {"type": "catalog", "path": cat("verticals"), "match": ["verticalId"]},
        },
        "policy_aliases": {
            "SiteSelectorSearcherChain": "thompson",
            "HotItemSearcherChain": "thompson",
            "InorderMapSearcherChain": "inorder",
        },
        "default_policy": "thompson",
        "columns": {"TrendingNowMap": 2},
        "max_rejections": 100,
        "seed": 42,
        "now": _ts(NOW),
        "user_model": "demo_users.json",
    }


def demo_users(rng: random.Random, cats: dict[str, list[dict]]) -> dict:
    item_ctr = {}
    for name in ("sites", "news", "trends"):
        for it in cats[name]:
            item_ctr[it["id"]] = round(rng.uniform(0.01, 0.2), 4)
    return {
        "item_ctr": item_ctr,
        "position_bias": [round(1 / (1 + 0.15 * p), 4) for p in range(18)],
        "alternative_ctr": {"vertical1Alternativ": 0.05, "vertical2Alternativ": 0.10, "vertical3Alternativ": 0.15},
    }


CHOICE3 = """<layout label="ChoicePage">
 <region label="Vertical">
  <module label="VerticalModule">
   <source label="VerticalSource">
    <apl:choice id="ColorChoice">
     <apl:alternative id="alt1"><apl:operator id="op1" handler="const" /></apl:alternative>
     <apl:alternative id="alt2"><apl:operator id="op2" handler="const" /></apl:alternative>
     <apl:alternative id="alt3"><apl:operator id="op3" handler="const" /></apl:alternative>
    </apl:choice>
   </source>
   <renderer label="VerticalRenderer" />
  </module>
 </region>
</layout>
"""

MAP6 = """<layout label="MapPage">
 <region label="Slots">
  <module label="SlotsModule">
   <source label="SlotsSource">
    <apl:map id="SixMap" handler="thompson">
     <apl:operator id="sixOperator" handler="const">
      <property key="number of regions" value="3" />
      <property key="number of items" value="6" />
     </apl:operator>
    </apl:map>
   </source>
   <renderer label="SlotsRenderer" />
  </module>
 </region>
</layout>
"""


def small_configs() -> None:
    (OUT / "choice3.potl").write_text(CHOICE3, encoding="utf-8")
    _dump(OUT / "choice3.json", {
        "model": "choice3.potl",
        "fetchers": {"const": {"type": "const", "items": [{"id": "tile", "score": 1.0}]}},
        "default_policy": "thompson",
        "seed": 7,
        "user_model": "choice3_users.json",
    })
    _dump(OUT / "choice3_users.json", {
        "item_ctr": {}, "position_bias": [1.0],
        "alternative_ctr": {"alt1": 0.05, "alt2": 0.10, "alt3": 0.15},
    })
    (OUT / "map6.potl").write_text(MAP6, encoding="utf-8")
    items = [{"id": f"i{j}", "score": round(0.5 - j / 100, 2)} for j in range(1, 7)]
    _dump(OUT / "map6.json", {
        "model": "map6.potl",
        "fetchers": {"const": {"type": "const", "items": items}},
        "default_policy": "thompson",
        "seed": 11,
        "user_model": "map6_users.json",
    })
    _dump(OUT / "map6_users.json", {
        "item_ctr": {"i1": 0.10, "i2": 0.30, "i3": 0.05, "i4": 0.25, "i5": 0.15, "i6": 0.20},
        "position_bias": [1.0, 0.8, 0.6],
        "alternative_ctr": {},
    })


def main() -> None:
    rng = random.Random(20240101)
    cats = catalogs(rng)
    for name, items in cats.items():
        _dump(OUT / "catalogs" / f"{name}.json", items)
    _dump(OUT / "demo.json", demo_config())
    _dump(OUT / "demo_users.json", demo_users(rng, cats))
    small_configs()


if __name__ == "__main__":
    main()
