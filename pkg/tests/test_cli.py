from __future__ import annotations

import json
import shutil
import subprocess
import sys

import pytest

from pageopt.cli import main
from pageopt.feedback import StatsStore, persist
from pageopt.resolvers import ArmKey, ArmStats


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate_ok(capsys, fixtures_dir):
    code, out, _ = run(capsys, "validate", str(fixtures_dir / "appendix_b.potl"))
    assert code == 0 and out.strip().endswith("ok")


def test_validate_json_and_dump(capsys, fixtures_dir):
    code, out, _ = run(capsys, "validate", "--json", str(fixtures_dir / "appendix_b.potl"))
    assert code == 0 and json.loads(out)["ok"] is True


def test_validate_domain_error(capsys, fixtures_dir):
    code, out, _ = run(capsys, "validate", str(fixtures_dir / "appendix_b_original.potl"))
    assert code == 1 and "8 error(s)" in out


def test_validate_usage_errors(capsys, tmp_path):
    assert run(capsys, "validate", str(tmp_path / "missing.potl"))[0] == 2
    (tmp_path / "bad.potl").write_text("<layout")
    assert run(capsys, "validate", str(tmp_path / "bad.potl"))[0] == 2


def test_instantiate_is_byte_stable(capsys, fixtures_dir, tmp_path):
    cfg = str(fixtures_dir / "demo.json")
    a, b, page = tmp_path / "a.json", tmp_path / "b.json", tmp_path / "p.html"
    assert run(capsys, "instantiate", "--config", cfg, "--seed", "3", "--out", str(a), "--html", str(page))[0] == 0
    assert run(capsys, "instantiate", "--config", cfg, "--seed", "3", "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert page.read_text().count("data-token=") == 8


def test_instantiate_domain_error(capsys, tmp_path):
    (tmp_path / "m.potl").write_text(
        '<layout label="L"><region label="R"><module label="M"><source label="S">'
        '<apl:map id="m" handler="uniform"><apl:operator id="o" handler="items">'
        '<property key="number of regions" value="3"/></apl:operator></apl:map>'
        '</source><renderer label="r"/></module></region></layout>')
    (tmp_path / "c.json").write_text(json.dumps(
        {"model": "m.potl", "fetchers": {"items": {"type": "const", "items": [{"id": "a"}]}}}))
    code, _, err = run(capsys, "instantiate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o"))
    assert code == 1 and "PoolTooSmall" in err


@pytest.mark.parametrize("content", ["{", '{"model": "missing.potl"}', '{"model": "x", "surprise": 1}'])
def test_bad_configs(capsys, tmp_path, content):
    (tmp_path / "c.json").write_text(content)
    assert run(capsys, "instantiate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o"))[0] == 2


def test_simulate(capsys, fixtures_dir, tmp_path):
    report = tmp_path / "rep.json"
    code, out, _ = run(capsys, "simulate", "--config", str(fixtures_dir / "choice3.json"), "--serves", "500",
                       "--policy", "uniform", "--report", str(report), "--final-window", "100")
    assert code == 0
    summary = json.loads(out)
    assert summary["serves"] == 500 and summary["violations"] == 0
    assert set(summary["final_window_share"]["ColorChoice"]) <= {"alt1", "alt2", "alt3"}
    assert report.exists() and report.with_suffix(".csv").exists()


def test_simulate_needs_user_model(capsys, fixtures_dir, tmp_path):
    for name in ("choice3.potl",):
        shutil.copy(fixtures_dir / name, tmp_path / name)
    (tmp_path / "c.json").write_text(json.dumps(
        {"model": "choice3.potl", "fetchers": {"const": {"type": "const", "items": [{"id": "t"}]}}}))
    code, _, err = run(capsys, "simulate", "--config", str(tmp_path / "c.json"), "--serves", "5",
                       "--report", str(tmp_path / "r.json"))
    assert code == 2 and "user model" in err


def test_simulate_rejects_zero_serves(capsys, fixtures_dir, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--config", str(fixtures_dir / "choice3.json"), "--serves", "0",
              "--report", str(tmp_path / "r.json")])
    assert exc.value.code == 2


def test_stats(capsys, tmp_path):
    persist(StatsStore({ArmKey.choice("c", "x"): ArmStats(4, 1), ArmKey.map("m", "a", 1): ArmStats(2, 0)}, 3),
            tmp_path / "s.json")
    code, out, _ = run(capsys, "stats", "--snapshot", str(tmp_path / "s.json"), "--dof", "c")
    doc = json.loads(out)
    assert code == 0 and doc["generation"] == 3
    assert doc["arms"] == [{"key": ["c", "choice", "x", 0], "impressions": 4, "clicks": 1, "alpha": 2.0, "beta": 4.0}]
    assert run(capsys, "stats", "--snapshot", str(tmp_path / "none.json"))[0] == 2


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "pageopt.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "simulate" in proc.stdout
