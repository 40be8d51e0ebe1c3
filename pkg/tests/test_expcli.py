import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drlsolve import expcli as X
from drlsolve.oracles import cole_series, lorenz_rhs, rk4_fixed

TINY_VDP = """
[experiment]
name = tiny_vdp
seed = 3

[equation]
name = van_der_pol

[network]
hidden_widths = 8, 8

[march]
dt_seconds = 0.01
n_steps = 4
n_current = 20
threshold = 1e-3
max_iterations = 3000

[learning_rate]
initial = 1e-2

[evaluation]
n_t = 9

[oracle]
name = rk45
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY_VDP)
    return p


# --------------------------------------------------------------------------- config

@pytest.mark.parametrize("name", X.bundled_configs())
def test_bundled_configs_round_trip(name):
    cfg = X.load_config(name)
    again = X.ExperimentConfig.from_ini(cfg.to_ini())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()
    cfg.march_config()
    cfg.build_equation()


@given(dt=st.floats(1e-4, 1.0), steps=st.integers(1, 10 ** 4), seed=st.integers(0, 2 ** 31),
       widths=st.lists(st.integers(1, 128), min_size=1, max_size=8),
       lr=st.floats(1e-6, 1.0), rate=st.floats(0.01, 1.0))
@settings(max_examples=40, deadline=None)
def test_config_round_trip_property(dt, steps, seed, widths, lr, rate):
    cfg = X.ExperimentConfig.from_ini(TINY_VDP)
    cfg.march["dt_seconds"] = dt
    cfg.march["n_steps"] = steps
    cfg.experiment["seed"] = seed
    cfg.network["hidden_widths"] = tuple(widths)
    cfg.learning_rate.update(initial=lr, decay_rate=rate)
    back = X.ExperimentConfig.from_ini(cfg.to_ini())
    assert back == cfg
    assert X.ExperimentConfig.from_ini(back.to_ini()).to_ini() == cfg.to_ini()


def test_negative_dt_names_field():
    with pytest.raises(X.ConfigError) as err:
        X.ExperimentConfig.from_ini(TINY_VDP.replace("dt_seconds = 0.01", "dt_seconds = -0.01"))
    assert err.value.section == "march" and err.value.key == "dt_seconds"
    assert err.value.line == TINY_VDP.splitlines().index("dt_seconds = 0.01") + 1


def test_cli_negative_dt_exit_code(tiny, tmp_path, capsys):
    code = X.main(["solve", "--config", str(tiny), "--out", str(tmp_path / "o"),
                   "--set", "march.dt_seconds=-1"])
    assert code == X.EXIT_CONFIG
    assert "dt_seconds" in capsys.readouterr().err


@pytest.mark.parametrize("edit, key", [
    (("[march]", "[march]\nbogus = 1"), "bogus"),
    (("name = van_der_pol", "name = heat"), "name"),
    (("name = rk45", "name = cole"), "name"),
    (("n_steps = 4", "n_steps = 2.5"), "n_steps"),
    (("hidden_widths = 8, 8", "hidden_widths = 8, 0"), "hidden_widths"),
    (("initial = 1e-2", "initial = 1e-2\nfloor = 1.0"), "floor"),
    (("[march]", "[march]\nthreshold_boundary = 1e-3"), "threshold_boundary"),
])
def test_invalid_fields_rejected(edit, key):
    with pytest.raises(X.ConfigError) as err:
        X.ExperimentConfig.from_ini(TINY_VDP.replace(*edit, 1))
    assert err.value.key == key


def test_missing_required_field():
    with pytest.raises(X.ConfigError) as err:
        X.ExperimentConfig.from_ini(TINY_VDP.replace("n_steps = 4\n", ""))
    assert err.value.key == "n_steps"


def test_hash_ignores_output_dir_but_not_seed():
    a = X.ExperimentConfig.from_ini(TINY_VDP)
    b = X.ExperimentConfig.from_ini(TINY_VDP)
    b.experiment["output_dir"] = "elsewhere"
    assert a.config_hash() == b.config_hash()
    b.experiment["seed"] = 4
    assert a.config_hash() != b.config_hash()


def test_profile_resolution():
    assert X.load_config("burgers").experiment["profile"] == "desk"
    assert X.load_config("burgers", "paper").name == "burgers_paper"
    with pytest.raises(X.ConfigError):
        X.load_config("no_such_thing")


def test_profile_mismatch_for_file(tiny):
    with pytest.raises(X.ConfigError):
        X.load_config(str(tiny), profile="paper")


def test_threshold_per_monitor():
    cfg = X.load_config("schrodinger")
    cfg.march["threshold_initial"] = 3e-5
    mc = cfg.march_config()
    assert mc.threshold_for("initial") == 3e-5
    assert mc.threshold_for("eq") == cfg.march["threshold"]


# --------------------------------------------------------------------------- CSV tables

def test_table_round_trip_full_precision(tmp_path):
    vals = np.array([[0.1, 1 / 3, -2.5e-300], [math.pi, 1e17 + 1, 7.0]])
    X.write_table(tmp_path / "t.csv", "demo", ["a", "b", "c"], vals, {"k": "v"})
    back = X.read_table(tmp_path / "t.csv")
    assert back.kind == "demo" and back.meta == {"k": "v"}
    assert back.data.tobytes() == vals.tobytes()


def test_table_rejects_unversioned(tmp_path):
    p = tmp_path / "plain.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        X.read_table(p)


# --------------------------------------------------------------------------- oracle command

def test_oracle_lorenz_columns(tmp_path):
    out = tmp_path / "lor.csv"
    assert X.main(["oracle", "--config", "lorenz", "--out", str(out)]) == 0
    tab = X.read_table(out)
    assert tab.columns == ["t", "x", "y", "z"]
    assert tab.data[0].tolist() == [0.0, 0.0, 2.0, 0.0]
    assert tab.data[-1, 0] == 5.0
    ref = rk4_fixed(lorenz_rhs(rho=15.0), [0.0, 2.0, 0.0], (0.0, 5.0), 2e-4)
    assert np.max(np.abs(tab.data[-1, 1:] - ref)) <= 1e-5


def test_oracle_couette_linear_profile(tmp_path):
    out = tmp_path / "c.csv"
    assert X.main(["oracle", "--config", "couette", "--out", str(out)]) == 0
    tab = X.read_table(out)
    y = tab.column("y")
    assert np.max(np.abs(tab.column("u") - (y + 0.005) / 0.01)) <= 1e-12
    assert np.all(tab.column("v") == 0) and np.all(tab.column("p") == 0)


def test_oracle_cole_field(tmp_path):
    out = tmp_path / "cole.csv"
    code = X.main(["oracle", "--config", "burgers", "--out", str(out),
                   "--set", "evaluation.n_x=256", "--set", "evaluation.n_t=101",
                   "--set", "evaluation.snapshot_times_seconds="])
    assert code == 0
    tab = X.read_table(out)
    assert tab.data.shape == (256 * 101, 3)
    row = tab.data[256 * 50 + 77]
    assert row[2] == pytest.approx(cole_series(row[0], row[1], 0.1), rel=1e-13, abs=1e-15)


@pytest.mark.parametrize("scaled", ["true", "false"])
def test_oracle_cole_failure_exit(tmp_path, capsys, scaled):
    code = X.main(["oracle", "--config", "burgers", "--out", str(tmp_path / "x.csv"),
                   "--set", "equation.nu=0.002", "--set", f"oracle.scaled={scaled}"])
    assert code == X.EXIT_ORACLE
    assert "cole" in capsys.readouterr().err.lower()
    assert not (tmp_path / "x.csv").exists()


# --------------------------------------------------------------------------- compare

def _field_table(tmp_path, name, fn, xs, ts, h="abc", comps=("u",)):
    X_, T_ = np.meshgrid(xs, ts)
    pts = np.column_stack([X_.ravel(), T_.ravel()])
    vals = np.column_stack([fn(pts[:, 0], pts[:, 1])])
    p = tmp_path / name
    X.write_table(p, "solution", ["x", "t", *comps], np.column_stack([pts, vals]),
                  {"config_sha256": h, "coords": "x,t", "components": ",".join(comps)})
    return p


def test_compare_identical_is_zero(tmp_path):
    f = lambda x, t: np.sin(3 * x) * np.exp(-t)  # noqa: E731
    p = _field_table(tmp_path, "a.csv", f, np.linspace(-1, 1, 11), np.linspace(0, 1, 5))
    rep = X.compare_tables(X.read_table(p), X.read_table(p))
    assert rep["max_abs"] == 0 and rep["rms"] == 0
    assert all(row["u"] == 0 for row in rep["snapshots"])


def test_compare_constant_shift(tmp_path):
    xs, ts = np.linspace(-1, 1, 11), np.linspace(0, 1, 5)
    f = lambda x, t: x * t  # noqa: E731
    a = _field_table(tmp_path, "a.csv", f, xs, ts)
    b = _field_table(tmp_path, "b.csv", lambda x, t: f(x, t) + 0.1, xs, ts)
    rep = X.compare_tables(X.read_table(b), X.read_table(a))
    assert rep["max_abs"] == pytest.approx(0.1, abs=1e-15)
    assert rep["rms"] == pytest.approx(0.1, abs=1e-15)


def test_compare_interpolates_bilinear_fields_exactly(tmp_path):
    f = lambda x, t: 2 * x - 3 * t + 0.5  # noqa: E731
    ref = _field_table(tmp_path, "ref.csv", f, np.linspace(-1, 1, 5), np.linspace(0, 1, 3))
    sol = _field_table(tmp_path, "sol.csv", f, np.linspace(-1, 1, 17), np.linspace(0, 1, 7))
    rep = X.compare_tables(X.read_table(sol), X.read_table(ref))
    assert rep["max_abs"] <= 1e-14
    assert rep["points_outside"] == 0


def test_compare_disjoint_rejected(tmp_path, capsys):
    f = lambda x, t: x  # noqa: E731
    a = _field_table(tmp_path, "a.csv", f, np.linspace(-1, 1, 5), np.linspace(0, 1, 3))
    b = _field_table(tmp_path, "b.csv", f, np.linspace(2, 3, 5), np.linspace(0, 1, 3))
    assert X.main(["compare", str(b), str(a)]) == X.EXIT_REJECTED
    assert "disjoint" in capsys.readouterr().err


def test_compare_hash_mismatch_needs_force(tmp_path):
    f = lambda x, t: x  # noqa: E731
    xs, ts = np.linspace(-1, 1, 5), np.linspace(0, 1, 3)
    a = _field_table(tmp_path, "a.csv", f, xs, ts, h="aaa")
    b = _field_table(tmp_path, "b.csv", f, xs, ts, h="bbb")
    assert X.main(["compare", str(a), str(b)]) == X.EXIT_REJECTED
    assert X.main(["compare", str(a), str(b), "--force"]) == 0


def _traj(tmp_path, name, ts, x, y, z):
    p = tmp_path / name
    X.write_table(p, "solution", ["t", "x", "y", "z"], np.column_stack([ts, x, y, z]),
                  {"config_sha256": "h", "coords": "t", "components": "x,y,z"})
    return p


def test_pair_symmetry_columns(tmp_path):
    ts = np.linspace(0, 1, 11)
    a = _traj(tmp_path, "a.csv", ts, np.sin(ts), np.cos(ts), ts ** 2)
    b = _traj(tmp_path, "b.csv", ts, -np.sin(ts), -np.cos(ts), ts ** 2)
    sym = X.pair_symmetry(X.read_table(a), X.read_table(b))
    assert sym == {"rms_x_sum": 0.0, "rms_y_sum": 0.0, "rms_z_diff": 0.0}
    c = _traj(tmp_path, "c.csv", ts, -np.sin(ts) + 0.2, -np.cos(ts), ts ** 2 - 0.3)
    sym = X.pair_symmetry(X.read_table(a), X.read_table(c))
    assert sym["rms_x_sum"] == pytest.approx(0.2, abs=1e-15)
    assert sym["rms_y_sum"] == 0.0
    assert sym["rms_z_diff"] == pytest.approx(0.3, abs=1e-15)


# --------------------------------------------------------------------------- metrics

def test_transfer_ratio_constructed():
    r = X.transfer_ratio([1000, 400, 100, 50, 40, 30])
    assert r["ratio"] < 1
    assert r["median_late"] == 40.0 and r["first"] == 1000


def test_transfer_ratio_single_step_undefined():
    r = X.transfer_ratio([321])
    assert r["ratio"] is None and r["status"].startswith("undefined")


def test_metrics_missing_log_rejected(tmp_path):
    assert X.main(["metrics", str(tmp_path)]) == X.EXIT_REJECTED


# --------------------------------------------------------------------------- solve

def test_solve_artifacts_and_reload(tiny, tmp_path):
    out = tmp_path / "run"
    assert X.main(["solve", "--config", str(tiny), "--out", str(out), "--quiet"]) == 0
    for name in ("config.ini", "metrics_iterations.csv", "metrics_steps.csv", "solution.csv",
                 "run.json", "solution.svg", "iterations.svg", "checkpoints/manifest.json"):
        assert (out / name).is_file(), name
    h = X.ExperimentConfig.from_file(tiny).config_hash()
    assert X.read_table(out / "solution.csv").meta["config_sha256"] == h
    assert X.ExperimentConfig.from_file(out / "config.ini").config_hash() == h
    steps = X.read_table(out / "metrics_steps.csv")
    assert steps.column("step").tolist() == [1, 2, 3, 4]
    assert np.all(steps.column("loss_eq") <= 1e-3)
    sol = X.load_solution(out)
    tab = X.read_table(out / "solution.csv")
    again = sol(tab.data[:, :1])
    assert again.tobytes() == tab.data[:, 1:].tobytes()
    assert X.main(["metrics", str(out)]) == 0
    ratio = json.loads((out / "transfer.json").read_text())
    assert ratio["first"] == steps.column("iterations")[0]


def test_solve_deterministic_rerun_byte_identical(tiny, tmp_path):
    for d in ("a", "b"):
        assert X.main(["solve", "--config", str(tiny), "--out", str(tmp_path / d), "--quiet",
                       "--deterministic"]) == 0
    for name in ("metrics_iterations.csv", "metrics_steps.csv", "solution.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_solve_seed_flag_changes_run(tiny, tmp_path):
    X.main(["solve", "--config", str(tiny), "--out", str(tmp_path / "a"), "--quiet"])
    X.main(["solve", "--config", str(tiny), "--out", str(tmp_path / "b"), "--quiet",
            "--seed", "11"])
    a = (tmp_path / "a" / "metrics_iterations.csv").read_bytes()
    b = (tmp_path / "b" / "metrics_iterations.csv").read_bytes()
    assert a != b
    assert X.ExperimentConfig.from_file(tmp_path / "b" / "config.ini").seed == 11


def test_solve_non_converged_exit(tiny, tmp_path, capsys):
    code = X.main(["solve", "--config", str(tiny), "--out", str(tmp_path / "r"), "--quiet",
                   "--set", "march.max_iterations=1", "--set", "march.threshold=1e-12"])
    assert code == X.EXIT_NOT_CONVERGED
    assert "1, 2, 3, 4" in capsys.readouterr().err
    summary = json.loads((tmp_path / "r" / "run.json").read_text())
    assert summary["flagged_steps"] == [1, 2, 3, 4]


def test_solution_csv_compares_against_oracle(tiny, tmp_path):
    X.main(["solve", "--config", str(tiny), "--out", str(tmp_path / "r"), "--quiet"])
    X.main(["oracle", "--config", str(tiny), "--out", str(tmp_path / "o.csv")])
    rep = X.compare_tables(X.read_table(tmp_path / "r" / "solution.csv"),
                           X.read_table(tmp_path / "o.csv"))
    assert rep["points_compared"] == 9
    assert rep["max_abs"] < 1e-2
