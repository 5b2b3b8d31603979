"""Page-model optimisation engine.

Parses hierarchical page models, resolves their degrees of freedom with
pluggable policies under editorial constraints, serves instrumented page
instances and learns from click feedback.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .config import EngineConfig, assemble, load_config
from .engine import Context, Engine, PageInstance, render_json
from .errors import PageOptError
from .feedback import Event, FeedbackLoop, StatsStore
from .layout import bind_regions, parse_layout_html, render_html
from .potl import PageModel, enumerate_dofs, parse_potl, validate_model
from .simulator import SimReport, UserModel, oracle_best, regret_curve, simulate

__version__ = "0.1.0"


def fixture_path(name: str) -> Path:
    """Path of a file shipped in ``pageopt/fixtures``."""
    return Path(str(resources.files(__package__).joinpath("fixtures", name)))


__all__ = [
    "Context",
    "Engine",
    "EngineConfig",
    "Event",
    "FeedbackLoop",
    "PageInstance",
    "PageModel",
    "PageOptError",
    "SimReport",
    "StatsStore",
    "UserModel",
    "assemble",
    "bind_regions",
    "enumerate_dofs",
    "fixture_path",
    "load_config",
    "oracle_best",
    "parse_layout_html",
    "parse_potl",
    "regret_curve",
    "render_html",
    "render_json",
    "simulate",
    "validate_model",
]
