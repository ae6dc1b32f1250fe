import json

import numpy as np
import pytest

from mfgdpi import GridField, Solution, SpaceTimeGrid
from mfgdpi import io as mio
from mfgdpi.cli import ConfigError, ExperimentConfig, emit_plot, list_problems, main, parse_config


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# --- config ---------------------------------------------------------------------


def test_parse_config_types_and_comments():
    cfg = parse_config("problem = traffic  # comment\n\nsolver=pi_fd\nI = 40\nfp_tol = 1e-9\nclamp_rho0 = yes\n")
    assert cfg.problem == "traffic" and cfg.solver == "pi_fd"
    assert cfg.I == 40 and cfg.fp_tol == 1e-9 and cfg.clamp_rho0 is True


@pytest.mark.parametrize("text", ["bogus = 1", "I = ten", "just words", "clamp_rho0 = maybe"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_default_training_preset_follows_problem():
    assert ExperimentConfig(problem="lq").train_config().inner_steps == 1
    assert ExperimentConfig(problem="lq", gamma=0.1).train_config().rho_spec.output_transform.value == "Softplus"
    c = ExperimentConfig(problem="lq", d=10, iterations=7, B=33).train_config()
    assert (c.K, c.B, c.q_spec.output_dim) == (7, 33, 10)


# --- run ---------------------------------------------------------------------------


def test_run_fd_writes_artifacts(tmp_path):
    cfg = write_cfg(tmp_path, "problem = traffic\nsolver = pi_fd\nreference = fixed_point\nI = 20\nN = 20\nK = 4\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out), "--deterministic"]) == 0
    hist = mio.read_csv_columns(out / "history.csv")
    assert list(hist)[:9] == list(mio.HISTORY_COLUMNS)
    assert np.all(np.isnan(hist["loss_fp"])) and np.all(np.isfinite(hist["linf_rho"]))
    sol = mio.read_csv_columns(out / "solution.csv")
    assert list(sol) == ["t", "x", "rho", "phi", "q"] and sol["t"].size == 21 * 20
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_status"] == 0 and man["seed"] == 0
    assert man["config"]["problem"] == "traffic" and "numpy" in man["versions"] and man["wall_time_s"] > 0


def test_run_lq_fd_with_analytic_reference(tmp_path):
    cfg = write_cfg(tmp_path, "problem = lq\nsolver = pi_fd\nreference = analytic\nI = 20\nN = 10\nK = 2\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    hist = mio.read_csv_columns(tmp_path / "o" / "history.csv")
    assert np.all(np.isfinite(hist["relerr_rho"]))


def test_run_dpi_tiny(tmp_path):
    cfg = write_cfg(tmp_path, "problem = lq\nsolver = dpi\nreference = analytic\niterations = 4\neval_every = 2\nB = 8\nS = 8\n")
    out = tmp_path / "dpi"
    assert main(["run", "--config", cfg, "--out", str(out), "--seed", "3"]) == 0
    hist = mio.read_csv_columns(out / "history.csv")
    assert hist["iter"].tolist() == [0, 1, 2, 3]
    assert np.isnan(hist["relerr_rho"][0]) and np.isfinite(hist["relerr_rho"][1])
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3 and man["train_config"]["B"] == 8
    assert (out / "rho_net.npz").exists()


def test_run_deterministic_histories_identical(tmp_path):
    cfg = write_cfg(tmp_path, "problem = example1\nd = 2\nsolver = dpi\niterations = 3\nB = 8\nS = 8\nI = 6\nN = 4\n")
    for name in ("a", "b"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / name), "--deterministic"]) == 0
    a = (tmp_path / "a" / "history.csv").read_bytes()
    assert a == (tmp_path / "b" / "history.csv").read_bytes()
    assert (tmp_path / "a" / "solution.csv").read_bytes() == (tmp_path / "b" / "solution.csv").read_bytes()


def test_high_dimension_solution_dump(tmp_path):
    cfg = write_cfg(tmp_path, "problem = lq\nd = 3\nsolver = dpi\niterations = 1\nB = 4\nS = 4\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    cols = mio.read_csv_columns(tmp_path / "o" / "solution.csv")
    assert {"x1", "x2", "x3", "q1", "q2", "q3"} <= set(cols)


def test_fd_dimension_limit_is_config_error(tmp_path, caplog):
    cfg = write_cfg(tmp_path, "problem = example1\nsolver = pi_fd\nd = 3\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "dimension" in caplog.text


@pytest.mark.parametrize(
    "text",
    ["problem = nowhere\n", "solver = magic\n", "problem = traffic\nreference = analytic\n", "I = x\n"],
)
def test_config_errors_exit_1(tmp_path, text):
    assert main(["run", "--config", write_cfg(tmp_path, text), "--out", str(tmp_path / "o")]) == 1


def test_missing_config_file_exit_1(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.cfg")]) == 1


def test_unwritable_output_exit_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = write_cfg(tmp_path, "problem = traffic\nsolver = pi_fd\nI = 10\nN = 5\nK = 1\n")
    assert main(["run", "--config", cfg, "--out", str(blocker / "sub")]) == 1


def test_solver_failure_exit_2(tmp_path):
    cfg = write_cfg(tmp_path, "problem = traffic\nsolver = fixed_point\nI = 10\nN = 5\nfp_max_iters = 1\nfp_tol = 1e-15\n")
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 2
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_status"] == 2 and "did not converge" in man["error"]


def test_list_problems(capsys):
    assert main(["list-problems"]) == 0
    text = capsys.readouterr().out
    for name, kind in [("lq", "SeparableLQ"), ("example1", "Congestion1"), ("example2", "Congestion2"), ("traffic", "TrafficFlow")]:
        assert any(line.startswith(name) and kind in line for line in text.splitlines())
    assert text.strip() == list_problems()


# --- plots ------------------------------------------------------------------------------


@pytest.fixture
def history_csv(tmp_path):
    rows = [{"iter": k, "loss_fp": 1 / (k + 1), "loss_hjb": 2 / (k + 1), "loss_policy": 3 / (k + 1),
             "linf_rho": 0.5 / (k + 1), "linf_phi": 0.1, "linf_q": 0.2} for k in range(30)]
    p = tmp_path / "history.csv"
    mio.write_history(p, rows)
    return p


@pytest.mark.parametrize("kind", ["loss", "linf"])
def test_plot_is_deterministic(tmp_path, history_csv, kind):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert main(["plot", "--input", str(history_csv), "--kind", kind, "--out", str(a), "--savgol"]) == 0
    assert emit_plot(history_csv, kind, b, smooth=True) == 3
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().lstrip().startswith("<?xml")


def test_plot_slice(tmp_path):
    g = SpaceTimeGrid(1, 0.0, 1.0, 10, 4, 1.0)
    x = g.axis()
    rho = np.tile(1 + np.sin(2 * np.pi * x), (5, 1))
    sol = Solution(GridField(g, rho), GridField.zeros(g), GridField.zeros(g))
    mio.write_solution(tmp_path / "s.csv", sol)
    assert emit_plot(tmp_path / "s.csv", "slice", tmp_path / "s.svg", t=0.5) == 1


def test_plot_missing_columns(tmp_path, history_csv):
    assert main(["plot", "--input", str(history_csv), "--kind", "slice", "--out", str(tmp_path / "x.svg")]) == 1


# --- csv round trips --------------------------------------------------------------------


@pytest.mark.parametrize("d", [1, 2])
def test_solution_csv_round_trip_is_exact(tmp_path, d):
    rng = np.random.default_rng(d)
    g = SpaceTimeGrid(d, -2.0, 2.0, 4, 3, 1.0)
    q = rng.normal(size=(4, g.n_space, d))
    qf = GridField(g, q[..., 0]) if d == 1 else GridField(g, q, channels=d)
    sol = Solution(GridField(g, rng.normal(size=(4, g.n_space))), GridField(g, rng.normal(size=(4, g.n_space)) * 1e-7), qf)
    mio.write_solution(tmp_path / "s.csv", sol)
    back = mio.read_solution(tmp_path / "s.csv", g)
    np.testing.assert_array_equal(back.rho.values, sol.rho.values)
    np.testing.assert_array_equal(back.phi.values, sol.phi.values)
    np.testing.assert_array_equal(back.q_array(), sol.q_array())


def test_history_empty_cells(tmp_path):
    mio.write_history(tmp_path / "h.csv", [{"iter": 0, "loss_fp": float("nan"), "loss_hjb": 0.1}])
    line = (tmp_path / "h.csv").read_text().splitlines()[1]
    assert line == "0,,0.10000000000000001,,,,,,"
    cols = mio.read_csv_columns(tmp_path / "h.csv")
    assert np.isnan(cols["loss_fp"][0]) and cols["loss_hjb"][0] == 0.1
