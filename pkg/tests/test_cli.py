import filecmp
import json
import os

import numpy as np
import pytest

from dynport.cli import main
from dynport.exceptions import ConfigError
from dynport.pipeline import RunConfig, compare, load_config, parse_key_values
from dynport.problem import ProblemSpec, build_qubo, read_qubo
from dynport.solvers import SolutionSet


@pytest.fixture(scope="module")
def small_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("small") / "p3.csv"
    assert main(["synth", "--out", str(path), "--groups", "3", "--group-size", "1",
                 "--quiet", "0", "--years", "1"]) == 0
    return str(path)


def run_cli(tmp_path, name, *args):
    out = tmp_path / name
    code = main(["run", *args, "--out", str(out)])
    return code, out


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# -- config -------------------------------------------------------------------


def test_key_value_config(tmp_path):
    text = """
    # comment
    profile = S
    solver = mps
    lambda = 0.5
    cluster = none
    solver.bond_dim = 8
    [solver_params]
    samples = 32
    """
    data = parse_key_values(text)
    assert data == {"profile": "S", "solver": "mps", "lambda": 0.5, "cluster": None,
                    "solver_params": {"bond_dim": 8, "samples": 32}}
    cfg = RunConfig.from_mapping(data)
    assert cfg.lam == 0.5 and cfg.cluster is None
    path = tmp_path / "c.cfg"
    path.write_text(text)
    assert load_config(path) == data
    path.write_text(json.dumps({"profile": "M"}))
    assert load_config(path) == {"profile": "M"}


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="line 1"):
        parse_key_values("no equals sign")
    with pytest.raises(ConfigError, match="unknown configuration"):
        RunConfig.from_mapping({"colour": "red"})
    with pytest.raises(ConfigError, match="unknown parameters"):
        RunConfig(solver="annealing", solver_params={"bond_dim": 4})
    with pytest.raises(ConfigError, match="profile"):
        RunConfig(profile="XXXL")
    with pytest.raises(ConfigError, match="custom"):
        RunConfig(profile="custom", N=2).dimensions


def test_flags_override_config(tmp_path, small_csv):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"input = {small_csv}\nprofile = XS\nsolver = annealing\nseed = 5\n"
                   "solver.restarts = 3\n")
    code, out = run_cli(tmp_path, "r", "--config", str(cfg), "--seed", "9", "-p", "restarts=4")
    assert code == 0
    manifest = read_json(out / "manifest.json")
    assert manifest["seed"] == 9
    assert manifest["config"]["solver_params"] == {"restarts": "4"}
    assert manifest["solver_info"]["restarts"] == 4


# -- run ----------------------------------------------------------------------


def test_xs_run_artifacts(tmp_path, small_csv):
    code, out = run_cli(tmp_path, "xs", "--input", small_csv, "--profile", "XS",
                        "--solver", "exhaustive")
    assert code == 0
    manifest = read_json(out / "manifest.json")
    assert manifest["dimensions"]["N_tot"] == 6
    assert set(manifest["wall_time_s"]) == {"ingest", "preprocess", "build", "solve", "report"}
    assert {"numpy", "scipy", "dynport"} <= set(manifest["versions"])
    for name in manifest["artifacts"].values():
        assert (out / name).exists()
    spec = ProblemSpec.from_json(read_json(out / "problem.json"))
    q = read_qubo(out / "problem.qubo")
    sol = SolutionSet.from_json(out / "solution.json")
    ref = build_qubo(spec)
    for e in sol:
        assert q.energy(e.bits) == pytest.approx(ref.energy(e.bits), abs=1e-9)
    report = read_json(out / "report.json")
    assert report["metrics"]["energy"] == pytest.approx(sol.best.energy)
    if "asset_holdings" in report:
        per_t = np.sum(list(report["asset_holdings"].values()), axis=0)
        np.testing.assert_allclose(per_t, np.sum(report["holdings"], axis=0))
    assert (out / "landscape.csv").read_text().startswith("T,E,C,R,TC,P,SR\n")
    assert not (out / ".lock").exists()


def test_run_deterministic(tmp_path, small_csv):
    args = ["--input", small_csv, "--profile", "XS", "--solver", "mps", "--seed", "3"]
    assert run_cli(tmp_path, "a", *args)[0] == 0
    assert run_cli(tmp_path, "b", *args)[0] == 0
    for name in ("solution.json", "problem.json", "problem.qubo", "landscape.csv", "report.json"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)
    fa = read_json(tmp_path / "a" / "manifest.json")["fingerprint"]
    assert fa == read_json(tmp_path / "b" / "manifest.json")["fingerprint"]


def test_exhaustive_cap_refusal(tmp_path, small_csv, capsys):
    code, _ = run_cli(tmp_path, "xxl", "--input", small_csv, "--profile", "XXL",
                      "--solver", "exhaustive")
    assert code == 4
    assert "24 variables" in capsys.readouterr().err


def test_shortfall_errors(tmp_path, small_csv, capsys):
    code, _ = run_cli(tmp_path, "l", "--input", small_csv, "--profile", "L")
    assert code == 3
    assert "short by" in capsys.readouterr().err
    code, _ = run_cli(tmp_path, "t", "--input", small_csv, "--profile", "custom", "--N", "2",
                      "--N_t", "40", "--N_q", "1", "--K", "2", "--cluster", "none")
    assert code == 3
    assert "N_t=40" in capsys.readouterr().err


def test_missing_input(tmp_path):
    assert run_cli(tmp_path, "m", "--input", str(tmp_path / "nope.csv"))[0] == 3
    assert run_cli(tmp_path, "m2")[0] == 2


def test_lock_refuses_concurrent_run(tmp_path, small_csv):
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".lock").write_text("123")
    code = main(["run", "--input", small_csv, "--out", str(out)])
    assert code == 2


def test_forecast_modes(tmp_path, small_csv):
    base = ["--input", small_csv, "--profile", "XS", "--solver", "exhaustive", "--cluster", "none"]
    run_cli(tmp_path, "real", *base)
    run_cli(tmp_path, "lag", *base, "--forecast", "lagged")
    real = read_json(tmp_path / "real" / "problem.json")
    lag = read_json(tmp_path / "lag" / "problem.json")
    # lagged mu at step t is the realized mu of step t - 1
    np.testing.assert_array_equal(np.array(lag["mu"])[:, 1:], np.array(real["mu"])[:, :-1])
    assert real["sigma"] == lag["sigma"]


# -- stage verbs --------------------------------------------------------------


def test_stage_verbs(tmp_path, small_csv, capsys):
    out = str(tmp_path / "stages")
    assert main(["ingest", "--input", small_csv, "--out", out]) == 0
    assert read_json(os.path.join(out, "ingest.json"))["assets"] == ["G0_0", "G1_0", "G2_0"]
    assert main(["preprocess", "--input", small_csv, "--out", out]) == 0
    assert "retained" in read_json(os.path.join(out, "preprocess.json"))
    assert main(["build", "--input", small_csv, "--out", out, "--profile", "XS"]) == 0
    problem = os.path.join(out, "problem.json")
    sol = os.path.join(out, "sol.json")
    assert main(["solve", problem, "--solver", "annealing", "-p", "restarts=5",
                 "--out", sol, "--no-timing"]) == 0
    assert read_json(sol)["wall_time_s"] is None
    capsys.readouterr()
    assert main(["score", problem, sol, "--out", os.path.join(out, "score.csv")]) == 0
    assert capsys.readouterr().out.split()[:7] == ["T", "E", "C", "R", "TC", "P", "SR"]


def test_solve_bad_param(tmp_path, small_csv):
    out = str(tmp_path / "bad")
    main(["build", "--input", small_csv, "--out", out, "--profile", "XS"])
    assert main(["solve", os.path.join(out, "problem.json"), "-p", "bond_dim=3"]) == 2
    assert main(["solve", os.path.join(out, "missing.json")]) == 2


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["run", "--solver", "gekko"])
    assert exc.value.code == 2


# -- compare ------------------------------------------------------------------


def test_compare_grids(tmp_path, small_csv, capsys):
    base = ["--input", small_csv, "--cluster", "none"]
    dirs = []
    for solver in ("exhaustive", "annealing"):
        code, out = run_cli(tmp_path, f"xs-{solver}", *base, "--profile", "XS", "--solver", solver)
        assert code == 0
        dirs.append(str(out))
    code, out = run_cli(tmp_path, "s-ann", *base, "--profile", "custom", "--N", "3", "--N_t", "3",
                        "--N_q", "1", "--K", "2", "--dataset", "XS3", "--solver", "annealing")
    assert code == 0
    dirs.append(str(out))

    one = compare(dirs[:1])
    assert one.grid("sharpe") == [[read_json(os.path.join(dirs[0], "manifest.json"))["best"]["sharpe"]]]

    table = compare(dirs)
    assert table.methods == ["exhaustive", "annealing"] and table.datasets == ["XS", "XS3"]
    sharpe = table.grid("sharpe")
    assert sharpe[0][0] == sharpe[1][0]  # both reach the optimum
    assert sharpe[0][1] is None  # no exhaustive run on the second dataset
    assert main(["compare", *dirs, "--out", str(tmp_path / "cmp.csv")]) == 0
    text = capsys.readouterr().out
    assert "Sharpe ratio" in text and "Profit (%)" in text
    rows = (tmp_path / "cmp.csv").read_text().splitlines()
    assert rows[0] == "metric,method,XS,XS3"
    assert rows[2].startswith("sharpe,annealing,")
    assert rows[1].endswith(",")  # blank cell


def test_compare_fingerprint_mismatch(tmp_path, small_csv, capsys):
    base = ["--input", small_csv, "--cluster", "none", "--profile", "XS"]
    a = run_cli(tmp_path, "a", *base, "--solver", "exhaustive")[1]
    b = run_cli(tmp_path, "b", *base, "--solver", "annealing", "--gamma", "2")[1]
    assert main(["compare", str(a), str(b)]) == 2
    assert "gamma" in capsys.readouterr().err
    c = run_cli(tmp_path, "c", *base, "--solver", "exhaustive")[1]
    with pytest.raises(ConfigError, match="two runs"):
        compare([str(a), str(c)])


def test_compare_rejects_non_runs(tmp_path):
    assert main(["compare", str(tmp_path)]) == 3
