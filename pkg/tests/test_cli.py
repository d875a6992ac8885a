import csv
import io
import json
from importlib import resources
from pathlib import Path

import pytest

from dsomdp.cli import main

BUNDLED = Path(str(resources.files("dsomdp") / "data" / "profiles"))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, small_config_text):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.json").write_text(small_config_text)
    return d


@pytest.fixture(scope="module")
def solved(workdir):
    assert main(["solve-offline", str(workdir / "small.json"), "--out",
                 str(workdir / "t1.dsu"), "-q"]) == 0
    return workdir / "t1.dsu"


@pytest.fixture(scope="module")
def runs(workdir, solved):
    out = workdir / "runs"
    assert main(["run", str(workdir / "small.json"), "--controller", "all", "--table",
                 str(solved), "--out-dir", str(out), "-q"]) == 0
    return out


def test_dry_run_full_preset(capsys):
    assert main(["solve-offline", "--preset", "full", "--dry-run"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["states"] == 2057
    assert rep["offline_actions"] == 90000
    assert rep["online_actions"] == 291600


def test_solve_writes_report(solved):
    rep = json.loads(solved.with_suffix(".json").read_text())
    assert rep["states"] == 45 and rep["infeasible_states_t0"] == 0
    assert rep["table"] == solved.name


def test_resolve_is_byte_identical(workdir, solved):
    again = workdir / "t2.dsu"
    assert main(["solve-offline", str(workdir / "small.json"), "--out", str(again), "-q"]) == 0
    assert again.read_bytes() == solved.read_bytes()
    assert again.with_suffix(".json").read_text().replace("t2.dsu", "t1.dsu") \
        == solved.with_suffix(".json").read_text()


def test_run_outputs(runs):
    for name in ("mdp", "deterministic", "oracle"):
        s = json.loads((runs / f"case1_{name}.json").read_text())
        assert s["excessive"] >= 0
        assert s["violations"] == 0
        rows = list(csv.DictReader(io.StringIO((runs / s["trajectory"]).read_text())))
        assert len(rows) == 96
    orc = json.loads((runs / "case1_oracle.json").read_text())
    assert orc["excessive"] == 0.0 and orc["oracle_feasible"]


def test_compare(runs, tmp_path, capsys):
    files = [str(runs / f"case1_{n}.json") for n in ("mdp", "oracle", "deterministic")]
    assert main(["compare", *files, "--out-dir", str(tmp_path)]) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "comparison.csv").read_text())))
    assert [r["controller"] for r in rows] == ["mdp", "deterministic", "oracle"]
    assert float(rows[2]["delta_total"]) == 0.0
    assert float(rows[0]["delta_total"]) > 0.0
    for f in ("cost_bars.csv", "soc_trace.csv", "p_ts_trace.csv"):
        assert (tmp_path / f).exists()
    assert len((tmp_path / "soc_trace.csv").read_text().splitlines()) == 1 + 3 * 96


def test_compare_identical_runs_has_zero_deltas(runs, tmp_path):
    f = str(runs / "case1_mdp.json")
    assert main(["compare", f, f, "--out-dir", str(tmp_path)]) == 0
    for r in csv.DictReader(io.StringIO((tmp_path / "comparison.csv").read_text())):
        assert all(float(r[k]) == 0.0 for k in r if k.startswith("delta_"))


def test_compare_needs_two(runs, tmp_path):
    assert main(["compare", str(runs / "case1_mdp.json"), "--out-dir", str(tmp_path)]) == 2


def test_compare_rejects_mixed_scenarios(runs, tmp_path):
    s = json.loads((runs / "case1_mdp.json").read_text())
    s["scenario_checksum"] = "0" * 64
    other = tmp_path / "other.json"
    other.write_text(json.dumps(s))
    assert main(["compare", str(runs / "case1_mdp.json"), str(other)]) == 5


def test_table_for_other_case_is_rejected(workdir, solved, tmp_path):
    code = main(["run", str(workdir / "small.json"), "--controller", "mdp", "--case", "5",
                 "--table", str(solved), "--no-oracle", "--out-dir", str(tmp_path), "-q"])
    assert code == 5


def test_table_for_other_prices_is_rejected(workdir, solved, tmp_path):
    cfg = json.loads((workdir / "small.json").read_text())
    cfg["prices"] = {"c_grid": 250}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code = main(["run", str(tmp_path / "c.json"), "--controller", "mdp", "--table",
                 str(solved), "--no-oracle", "--out-dir", str(tmp_path), "-q"])
    assert code == 5


@pytest.mark.parametrize(("argv", "code"), [
    (["run", "missing.json", "--controller", "oracle"], 4),
    (["solve-offline", "--preset", "nope", "--dry-run"], 3),
    (["estimate-matrix", "missing.csv"], 4),
    (["compare", "a.json", "b.json"], 4),
])
def test_exit_codes(argv, code, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code


def test_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{\n  "gamma": 2\n}')
    assert main(["solve-offline", str(tmp_path / "c.json"), "--dry-run"]) == 3
    assert "c.json:2:" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["run"])
    assert e.value.code == 2
    cfg = tmp_path / "c.json"
    cfg.write_text("{}")
    assert main(["run", str(cfg), "--case", "7", "--out-dir", str(tmp_path)]) == 2


def test_mdp_without_table(workdir, tmp_path):
    assert main(["run", str(workdir / "small.json"), "--controller", "mdp", "--no-oracle",
                 "--out-dir", str(tmp_path), "-q"]) == 2


def test_malformed_profiles(workdir, tmp_path):
    prof = tmp_path / "prof"
    prof.mkdir()
    for f in BUNDLED.glob("*.csv"):
        (prof / f.name).write_text(f.read_text())
    (prof / "loads.csv").write_text("t,oops\n")
    cfg = json.loads((workdir / "small.json").read_text())
    cfg["profiles"] = "prof"
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["solve-offline", str(tmp_path / "c.json"), "--dry-run"]) == 4


def test_estimate_matrix(tmp_path, capsys):
    out = tmp_path / "m.csv"
    assert main(["estimate-matrix", str(BUNDLED / "history.csv"), "--bins", "5",
                 "--out", str(out)]) == 0
    rows = [r for r in out.read_text().splitlines() if not r.startswith("#")]
    assert len(rows) == 6
    assert main(["estimate-matrix", str(BUNDLED / "history.csv"), "--bins", "5"]) == 0
    assert capsys.readouterr().out == out.read_text()


def test_gen_fixtures_matches_bundle(tmp_path):
    assert main(["gen-fixtures", str(tmp_path)]) == 0
    for f in BUNDLED.glob("*.csv"):
        assert (tmp_path / f.name).read_bytes() == f.read_bytes(), f.name
