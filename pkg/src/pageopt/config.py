"""Engine configuration files.

A config is a JSON object; relative paths resolve against the config file's
directory. Only ``model`` and ``fetchers`` are required::

    {
      "model": "appendix_b.potl",
      "layout": "appendix_a.html",
      "alias": {"TodayRegion": "centerUpRegion"},
      "fetchers": {"NewsSearcherChain": "catalogs/news.json",
                   "VerticalInfoSearchChain": {"type": "catalog", "path": "catalogs/verticals.json",
                                               "match": ["verticalId"]}},
      "policy_aliases": {"HotItemSearcherChain": "thompson"},
      "policy_overrides": {"TodayMap": {"name": "epsilon_greedy", "epsilon": 0.05}},
      "default_policy": "thompson",
      "max_rejections": 100,
      "max_rejections_per_dof": {},
      "columns": {"TrendingNowMap": 2},
      "seed": 42,
      "now": "2024-01-01T12:00:00Z",
      "persistence": {"event_log": "events.jsonl", "snapshot": "stats.json"},
      "dedup_window": 100000,
      "index_capacity": 100000,
      "user_model": "users.json"
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Mapping

from .engine import EPOCH, Engine
from .errors import ConfigError
from .fetchers import FetcherRegistry, fetcher_from_spec, parse_timestamp
from .layout import BindingMap, LayoutTree, bind_regions, parse_layout_html
from .potl import PageModel, parse_potl
from .resolvers import DEFAULT_MAX_REJECTIONS, PolicyRegistry, default_policies

_KNOWN_KEYS = {
    "model", "layout", "alias", "fetchers", "policy_aliases", "policy_overrides", "default_policy",
    "max_rejections", "max_rejections_per_dof", "columns", "seed", "now", "persistence", "dedup_window",
    "index_capacity", "user_model",
}


@dataclass(frozen=True)
class EngineConfig:
    model_path: Path
    fetchers: Mapping[str, Any]
    base_dir: Path
    layout_path: Path | None = None
    alias: Mapping[str, str] = field(default_factory=dict)
    policy_aliases: Mapping[str, Any] = field(default_factory=dict)
    policy_overrides: Mapping[str, Any] = field(default_factory=dict)
    default_policy: str = "uniform"
    max_rejections: int = DEFAULT_MAX_REJECTIONS
    max_rejections_per_dof: Mapping[str, int] = field(default_factory=dict)
    columns: Mapping[str, int] = field(default_factory=dict)
    seed: int = 0
    now: datetime = EPOCH
    event_log: Path | None = None
    snapshot_path: Path | None = None
    dedup_window: int = 100_000
    index_capacity: int = 100_000
    user_model_path: Path | None = None

    def with_overrides(self, **changes: Any) -> EngineConfig:
        from dataclasses import replace

        return replace(self, **changes)


def _path(base: Path, value: Any, key: str) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{key} must be a non-empty path string")
    p = Path(value)
    return p if p.is_absolute() else base / p


def _require_file(p: Path, key: str) -> Path:
    if not p.is_file():
        raise FileNotFoundError(f"{key}: no such file {p}")
    return p


def parse_config(data: Mapping[str, Any], base_dir: Path) -> EngineConfig:
    """Build a config from decoded JSON. Referenced files must exist."""
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a JSON object")
    for key in data:
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    if "model" not in data:
        raise ConfigError("config needs a 'model' path")
    fetchers = data.get("fetchers", {})
    if not isinstance(fetchers, Mapping):
        raise ConfigError("fetchers must map handler names to specs")
    for name, spec in fetchers.items():
        path = spec if isinstance(spec, str) else spec.get("path") if isinstance(spec, Mapping) else None
        if path is not None:
            _require_file(_path(base_dir, path, f"fetchers.{name}"), f"fetchers.{name}")
    persistence = data.get("persistence", {}) or {}
    try:
        cfg = EngineConfig(
            model_path=_require_file(_path(base_dir, data["model"], "model"), "model"),
            fetchers=dict(fetchers),
            base_dir=base_dir,
            layout_path=_require_file(_path(base_dir, data["layout"], "layout"), "layout") if "layout" in data else None,
            alias=dict(data.get("alias", {})),
            policy_aliases=dict(data.get("policy_aliases", {})),
            policy_overrides=dict(data.get("policy_overrides", {})),
            default_policy=str(data.get("default_policy", "uniform")),
            max_rejections=int(data.get("max_rejections", DEFAULT_MAX_REJECTIONS)),
            max_rejections_per_dof={k: int(v) for k, v in data.get("max_rejections_per_dof", {}).items()},
            columns={k: int(v) for k, v in data.get("columns", {}).items()},
            seed=int(data.get("seed", 0)),
            now=parse_timestamp(data["now"]) if "now" in data else EPOCH,
            event_log=_path(base_dir, persistence["event_log"], "persistence.event_log")
            if "event_log" in persistence else None,
            snapshot_path=_path(base_dir, persistence["snapshot"], "persistence.snapshot")
            if "snapshot" in persistence else None,
            dedup_window=int(data.get("dedup_window", 100_000)),
            index_capacity=int(data.get("index_capacity", 100_000)),
            user_model_path=_path(base_dir, data["user_model"], "user_model") if "user_model" in data else None,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    if cfg.max_rejections < 1:
        raise ConfigError("max_rejections must be at least 1")
    if any(c < 1 for c in cfg.columns.values()):
        raise ConfigError("columns must be positive")
    return cfg


def load_config(path: str | Path) -> EngineConfig:
    """Read a config file. Raises OSError / ValueError on unreadable JSON."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        data = json.load(fh)
    return parse_config(data, path.resolve().parent)


@dataclass(frozen=True)
class Assembly:
    """Everything built from one config."""

    config: EngineConfig
    model: PageModel
    engine: Engine
    layout: LayoutTree | None
    binding: BindingMap | None


def build_policies(cfg: EngineConfig) -> PolicyRegistry:
    reg = default_policies()
    for handler, target in cfg.policy_aliases.items():
        if isinstance(target, Mapping):
            params = dict(target)
            reg.alias(handler, params.pop("name"), **params)
        else:
            reg.alias(handler, str(target))
    return reg


def build_fetchers(cfg: EngineConfig) -> FetcherRegistry:
    reg = FetcherRegistry()
    for handler, spec in cfg.fetchers.items():
        try:
            reg.register(handler, fetcher_from_spec(spec, cfg.base_dir))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad fetcher spec for {handler!r}: {exc}") from exc
    return reg


def assemble(cfg: EngineConfig, *, policy: str | None = None) -> Assembly:
    """Parse the model and layout, and wire up the engine.

    *policy* (if given) overrides the policy of every degree of freedom.
    """
    model = parse_potl(cfg.model_path.read_text(encoding="utf-8"))
    overrides = dict(cfg.policy_overrides)
    engine = Engine(
        model,
        build_fetchers(cfg),
        build_policies(cfg),
        policy_overrides=overrides,
        default_policy=cfg.default_policy,
        max_rejections=cfg.max_rejections,
        max_rejections_per_dof=cfg.max_rejections_per_dof,
        columns=cfg.columns,
    )
    if policy is not None:
        engine.policy_overrides.update({d.id: policy for d in engine.dofs})
    for d in engine.dofs:
        engine.policy_for(d.dof)  # fail fast on unknown policies
    layout = binding = None
    if cfg.layout_path is not None:
        layout = parse_layout_html(cfg.layout_path.read_text(encoding="utf-8"))
        binding = bind_regions(layout, model, cfg.alias)
    return Assembly(cfg, model, engine, layout, binding)
