from __future__ import annotations

from pathlib import Path

import pytest

from pageopt import assemble, fixture_path, load_config
from pageopt.potl import parse_potl

FIXTURES = Path(fixture_path("appendix_b.potl")).parent


def wrap_source(body: str, constraints: str = "", label: str = "L") -> str:
    """Single-region model around one source body."""
    return (
        f'<layout label="{label}"><region label="R"><module label="M"><source label="S">'
        f'{body}{constraints}</source><renderer label="rr"/></module></region></layout>'
    )


def map_model(k: int, handler: str = "uniform", constraints: tuple[str, ...] = (), pool: int | None = None,
              columns: int | None = None) -> str:
    props = f'<property key="number of regions" value="{k}"/>'
    if pool is not None:
        props += f'<property key="number of items" value="{pool}"/>'
    if columns is not None:
        props += f'<property key="columns" value="{columns}"/>'
    body = f'<apl:map id="m" handler="{handler}"><apl:operator id="o" handler="items">{props}</apl:operator></apl:map>'
    if not constraints:
        return wrap_source(body)
    decls = "".join(f'<apl:constraint id="c{i}"><![CDATA[{c}]]></apl:constraint>' for i, c in enumerate(constraints))
    return wrap_source(f'<apl:constraints id="cs">{body}{decls}</apl:constraints>')


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def appendix_b_text() -> str:
    return (FIXTURES / "appendix_b.potl").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def appendix_a_text() -> str:
    return (FIXTURES / "appendix_a.html").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def appendix_b(appendix_b_text):
    return parse_potl(appendix_b_text)


@pytest.fixture(scope="session")
def demo_config():
    return load_config(FIXTURES / "demo.json")


@pytest.fixture()
def demo(demo_config):
    return assemble(demo_config)


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE: dict[int, tuple[str, str, float]] = {}
DETAILS: dict[int, list[str]] = {}


def note(number: int, text: str) -> None:
    """Attach a measured value to an acceptance criterion's summary line."""
    DETAILS.setdefault(number, []).append(text)
    print(f"[criterion {number}] {text}")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    previous = ACCEPTANCE.get(number)
    status = "PASS" if rep.passed else "FAIL"
    if previous is not None and previous[0] == "FAIL":
        status = "FAIL"
    duration = rep.duration + (previous[2] if previous and rep.when == "call" else 0.0)
    ACCEPTANCE[number] = (status, title, duration)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, title, duration = ACCEPTANCE[number]
        detail = "; ".join(DETAILS.get(number, []))
        terminalreporter.write_line(f"{status} criterion {number} ({title}) {duration:.1f}s{' | ' + detail if detail else ''}")
