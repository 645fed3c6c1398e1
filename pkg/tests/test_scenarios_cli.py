from __future__ import annotations

import csv
import json
import subprocess
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from cdlab.cli import run
from cdlab.scenarios import (ConfigError, Scenario, corpus_configs, format_config, load_config,
                             scenario_corpus, sweep_points)

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="module")
def schema():
    text = resources.files("cdlab").joinpath("schemas/report.schema.json").read_text()
    return json.loads(text)


def _diagnose(tmp_path, stem, *extra):
    out = tmp_path / stem
    code = run(["diagnose", "--config", str(SCENARIOS / f"{stem}.json"), "--out", str(out),
                *extra])
    return code, json.loads((out / "report.json").read_text()), out


def test_sweep_points():
    pts = sweep_points(30, 0.9)
    assert pts.size == 30 and pts[0] == 0 and np.max(np.abs(pts)) == pytest.approx(0.9)
    assert np.min(np.abs(pts - 0.5)) > 0.1
    np.testing.assert_array_equal(pts, sweep_points(30, 0.9))


def test_corpus_contents():
    corpus = {sc.name: sc for sc in scenario_corpus()}
    assert {k: v.expected for k, v in corpus.items()} == {
        "constant_frame": "Similar", "bounded_perturbation": "Similar",
        "h2_in_bergman": "NotSimilar", "zero_at_point": "NotSimilar",
        "cross_atom_pair": "Similar"}
    assert [a.alpha for a in corpus["cross_atom_pair"].atoms] == [1.0, 2.0]


def test_shipped_files_match_corpus():
    for stem, cfg in corpus_configs().items():
        path = SCENARIOS / f"{stem}.json"
        assert json.loads(path.read_text()) == json.loads(json.dumps(cfg)), stem
        assert path.read_text() == format_config(cfg)


def test_config_roundtrip_and_errors(tmp_path):
    for sc in scenario_corpus():
        back = Scenario.from_config(json.loads(json.dumps(sc.to_config())))
        np.testing.assert_array_equal(back.frame.coefficients, sc.frame.coefficients)
        assert back.atoms == sc.atoms
    good = corpus_configs()["bounded_perturbation"]
    for bad in ({**good, "colour": 1},
                {**good, "grid": {"J": 8, "r_max": 1.5}},
                {**good, "tolerances": {"h": -1}},
                {**good, "analyses": ["nonsense"]},
                {k: v for k, v in good.items() if k != "atom"},
                {**good, "atom": {"family": "power", "alpha": "two"}}):
        with pytest.raises(ConfigError):
            Scenario.from_config(bad)
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_exit_code_config_error(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"name": "x", "atom": {"family": "power"}}')
    assert run(["diagnose", "--config", str(path)]) == 64
    assert run(["atom"]) == 64
    assert "cdlab:" in capsys.readouterr().err


def test_exit_code_evaluation_failure(tmp_path):
    # the frame vanishes at the first sweep point, so the identities analysis fails
    cfg = corpus_configs()["zero_at_point"]
    cfg["frame"]["coefficients"] = [[[0, 0]], [[1, 0]]]
    cfg["analyses"] = ["identities"]
    path = tmp_path / "origin_zero.json"
    path.write_text(json.dumps(cfg))
    assert run(["diagnose", "--config", str(path), "--out", str(tmp_path / "o")]) == 70
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert "error" in report["analyses"]["power(alpha=2)"]["identities"]


def test_curvature_command(capsys):
    code = run(["curvature", "--config", str(SCENARIOS / "bergman2.json"), "--at", "0.5", "0"])
    assert code == 0
    assert capsys.readouterr().out.strip() == "-3.555555555556"


def test_atom_and_modulemap_commands(capsys):
    cfg = str(SCENARIOS / "bounded_perturbation.json")
    assert run(["atom", "--config", cfg, "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["atom"]["power(alpha=2)"]["kernel_diagonal"] == pytest.approx(0.75 ** -2)
    assert run(["modulemap", "--config", cfg]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[3] == "L,residual,annihilation,norm"
    assert [int(l.split(",")[0]) for l in lines[4:]] == [10, 20, 40, 60]


def test_corpus_command(tmp_path, capsys):
    assert run(["corpus", "--out", str(tmp_path)]) == 0
    assert sorted(p.stem for p in tmp_path.glob("*.json")) == sorted(corpus_configs())
    assert "h2_in_bergman" in capsys.readouterr().out


def test_diagnose_exit_codes_and_schema(tmp_path, schema):
    expected = {"constant_frame": 0, "bounded_perturbation": 0, "zero_at_point": 1,
                "h2_in_bergman": 1, "cross_atom_pair": 0}
    for stem, want in expected.items():
        code, report, out = _diagnose(tmp_path, stem)
        assert code == want, stem
        jsonschema.validate(report, schema)
        for name in ("identities", "defect", "green_scan", "carleson"):
            with open(out / f"{name}.csv", newline="") as fh:
                header = next(csv.reader(fh))
            assert header[0] == "atom"
        if stem == "cross_atom_pair":
            assert report["transfer_consistent"] is True
            assert set(report["verdicts"]) == {"power(alpha=1)", "power(alpha=2)"}


def test_report_is_reproducible(tmp_path):
    _, first, _ = _diagnose(tmp_path / "a", "bounded_perturbation")
    _, second, _ = _diagnose(tmp_path / "b", "bounded_perturbation")
    for rep in (first, second):
        rep.pop("timing")
    assert first == second


def test_overrides_recorded(tmp_path):
    code, report, _ = _diagnose(tmp_path, "constant_frame", "--depth", "6", "--rmax", "0.99")
    assert code == 0
    assert report["overrides"] == {"h": 0.001, "r_max": 0.99, "depth": 6}
    diag = report["analyses"]["power(alpha=2)"]["diagnostics"]
    assert diag["carleson"]["depths"] == [4, 5, 6]


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "cdlab.cli", "--version"], capture_output=True,
                         text=True, check=True)
    assert out.stdout.startswith("cdlab ")
