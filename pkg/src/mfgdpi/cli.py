"""Experiment runner.

Usage::

    python -m mfgdpi run --config lq_d1.cfg [--out DIR] [--seed N] [--deterministic]
    python -m mfgdpi list-problems
    python -m mfgdpi plot --input history.csv --kind loss --out loss.svg

Config files are flat ``key = value`` lines (``#`` starts a comment); the
keys are the fields of :class:`ExperimentConfig`.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import dpi as dpi_mod
from . import fdsolver as fd
from . import io as mio
from . import problems as pb
from .core import Boundary, GridField, uniform_grid
from .metrics import evaluation_points, relative_error, savgol

logger = logging.getLogger("mfgdpi")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2
SOLVERS = ("dpi", "pi_fd", "fixed_point")
REFERENCES = ("analytic", "fixed_point", "none")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str = "lq"
    solver: str = "dpi"
    reference: str = "none"
    out: str = "runs/out"
    seed: int = 0
    deterministic: bool = False
    # problem overrides
    d: int = 0
    gamma: float = -1.0
    nu: float = -1.0
    clamp_rho0: bool = False
    printed_rho0: bool = False
    R: float = pb.DEFAULT_POLICY_BOUND
    # finite differences (also the output / reference grid)
    I: int = 100
    N: int = 100
    K: int = 50
    linear_tol: float = 1e-10
    fp_damping: float = 0.5
    fp_tol: float = 1e-8
    fp_max_iters: int = 1000
    # deep policy iteration
    preset: str = ""
    iterations: int = 20000
    B: int = 0
    S: int = 0
    inner_steps: int = 0
    lr: float = 0.0
    weight_decay: float = -1.0
    eval_every: int = 100
    save_checkpoints: bool = True

    def problem_obj(self):
        kw = {"clamp_rho0": self.clamp_rho0, "printed_rho0": self.printed_rho0}
        if self.d > 0:
            kw["d"] = self.d
        if self.gamma >= 0:
            kw["gamma"] = self.gamma
        if self.nu >= 0:
            kw["nu"] = self.nu
        if self.solver in ("pi_fd", "fixed_point") or self.reference == "fixed_point":
            kw["boundary"] = Boundary.PERIODIC
        return pb.make_problem(self.problem, **kw)

    def validate(self) -> None:
        if self.problem not in pb.PRESETS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {', '.join(pb.PRESETS)}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}; choose from {', '.join(SOLVERS)}")
        if self.reference not in REFERENCES:
            raise ConfigError(f"unknown reference {self.reference!r}")
        problem = self.problem_obj()
        fd_needed = self.solver in ("pi_fd", "fixed_point") or self.reference == "fixed_point"
        if fd_needed and problem.d > 2:
            raise ConfigError(f"finite-difference solvers support dimension <= 2, got d={problem.d}")
        if self.reference == "analytic" and problem.kind is not pb.LQ:
            raise ConfigError(f"no analytic solution for problem {self.problem!r}")

    def train_config(self) -> dpi_mod.TrainConfig:
        problem = self.problem_obj()
        preset = self.preset or _default_preset(self.problem, problem)
        kw = {"K": self.iterations, "seed": self.seed, "eval_every": self.eval_every}
        for key in ("B", "S", "lr", "inner_steps"):
            if getattr(self, key) > 0:
                kw[key] = getattr(self, key)
        if self.weight_decay >= 0:
            kw["weight_decay"] = self.weight_decay
        return dpi_mod.preset_config(preset, d=problem.d, **kw)


def _default_preset(name: str, problem) -> str:
    if name == "lq":
        if problem.d > 1:
            return "test4"
        return "test1" if problem.gamma == 0 else "test2"
    return name


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` text into an :class:`ExperimentConfig`."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, val, fields[key].type)
    return ExperimentConfig(**values)


def _coerce(key: str, val: str, typ: str):
    try:
        if typ == "bool":
            low = val.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(val)
        if typ == "int":
            return int(val)
        if typ == "float":
            return float(val)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {val!r} as {typ}") from None
    return val


@contextlib.contextmanager
def _thread_limit(deterministic: bool):
    from threadpoolctl import threadpool_limits

    n = os.environ.get("MFG_THREADS")
    limit = 1 if deterministic else (int(n) if n else None)
    if limit is None:
        yield
    else:
        with threadpool_limits(limits=limit):
            yield


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run one experiment and write its artifacts; returns the exit status."""
    t0 = time.perf_counter()
    try:
        cfg.validate()
        problem = cfg.problem_obj()
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except (ConfigError, KeyError, ValueError) as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        logger.error("cannot write to output directory: %s", exc)
        return EXIT_CONFIG

    record = {
        "config": dataclasses.asdict(cfg),
        "problem": dataclasses.asdict(problem),
        "seed": cfg.seed,
        "versions": {
            "mfgdpi": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": _scipy_version(),
        },
    }
    status = EXIT_OK
    try:
        with _thread_limit(cfg.deterministic):
            if cfg.solver == "dpi":
                _run_dpi(cfg, problem, out, record)
            else:
                _run_fd(cfg, problem, out, record)
    except (fd.LinearSolveError, fd.ConvergenceError, dpi_mod.TrainingError) as exc:
        logger.error("solver failure: %s", exc)
        record["error"] = str(exc)
        status = EXIT_SOLVER
    except (ConfigError, ValueError) as exc:
        logger.error("config error: %s", exc)
        record["error"] = str(exc)
        status = EXIT_CONFIG
    record["exit_status"] = status
    record["wall_time_s"] = time.perf_counter() - t0
    mio.write_manifest(out / "manifest.json", record)
    return status


def _scipy_version() -> str:
    import scipy

    return scipy.__version__


def _run_fd(cfg, problem, out: Path, record: dict) -> None:
    grid = uniform_grid(problem, cfg.I, cfg.N)
    fcfg = fd.FDConfig(
        K=cfg.K, linear_tol=cfg.linear_tol, fp_damping=cfg.fp_damping,
        fp_tol=cfg.fp_tol, fp_max_iters=cfg.fp_max_iters, R=cfg.R,
    )
    if cfg.solver == "fixed_point":
        sol = fd.run_fixed_point(problem, grid, fcfg)
        changes = sol.meta["changes"]
        rows = [{"iter": k, "change_rho": c} for k, c in enumerate(changes)]
        mio.write_history(out / "history.csv", rows, extra_columns=("change_rho",))
        mio.write_solution(out / "solution.csv", sol)
        record["sweeps"] = len(changes)
        return

    ref = None
    if cfg.reference == "fixed_point":
        ref = fd.run_fixed_point(problem, grid, fcfg)
    analytic = None
    if cfg.reference == "analytic":
        params = pb.analytic_params(problem)
        t = grid.times()[:, None]
        x = grid.coords()
        analytic = (pb.analytic_rho(t, x[None], params, problem), pb.analytic_phi(t, x[None], params, problem))
    rel = []

    def track(k, sol):
        if analytic is not None:
            rel.append((relative_error(sol.rho.values, analytic[0]), relative_error(sol.phi.values, analytic[1])))

    sol, hist = fd.run_policy_iteration(problem, grid, fcfg, GridField.zeros(grid, grid.d), ref, callback=track)
    rows = []
    for k in range(len(hist)):
        row = {"iter": k, "change_rho": hist.d_rho[k], "change_phi": hist.d_phi[k], "change_q": hist.d_q[k]}
        if ref is not None:
            row.update(linf_rho=hist.ref_rho[k], linf_phi=hist.ref_phi[k], linf_q=hist.ref_q[k])
        if rel:
            row.update(relerr_rho=rel[k][0], relerr_phi=rel[k][1])
        rows.append(row)
    mio.write_history(out / "history.csv", rows, extra_columns=("change_rho", "change_phi", "change_q"))
    mio.write_solution(out / "solution.csv", sol)


def _run_dpi(cfg, problem, out: Path, record: dict) -> None:
    tcfg = cfg.train_config()
    record["train_config"] = {
        k: (v.to_dict() if hasattr(v, "to_dict") else v) for k, v in dataclasses.asdict(tcfg).items()
    }
    record["train_config"].update(
        {s: getattr(tcfg, s).to_dict() for s in ("rho_spec", "phi_spec", "q_spec")}
    )
    grid = None
    if problem.d <= 2 and problem.periodic:
        grid = uniform_grid(problem, cfg.I, cfg.N)
    reference = None
    if cfg.reference == "analytic":
        reference = dpi_mod.Reference("analytic", problem, n_points=tcfg.eval_points, seed=cfg.seed)
    elif cfg.reference == "fixed_point":
        fcfg = fd.FDConfig(linear_tol=cfg.linear_tol, fp_damping=cfg.fp_damping, fp_tol=cfg.fp_tol,
                           fp_max_iters=cfg.fp_max_iters, R=cfg.R)
        reference = dpi_mod.Reference("solution", problem, fd.run_fixed_point(problem, grid, fcfg))
    state, hist = dpi_mod.dpi_train(problem, tcfg, reference, R=cfg.R)
    mio.write_history(out / "history.csv", hist.rows())
    if grid is not None:
        mio.write_solution(out / "solution.csv", dpi_mod.network_solution(state, grid))
    else:
        t, x = evaluation_points(problem, 11, 100, seed=cfg.seed)
        v = lambda p: dpi_mod.jet_forward(p, t, x, order=0)[0].value  # noqa: E731
        mio.write_points(out / "solution.csv", t, x, v(state.rho)[:, 0], v(state.phi)[:, 0], v(state.q))
    if cfg.save_checkpoints:
        from .nn import save_params

        for name in ("rho", "phi", "q"):
            save_params(out / f"{name}_net.npz", getattr(state, name))


# --- plotting -------------------------------------------------------------------

PLOT_KINDS = {
    "loss": ("loss_fp", "loss_hjb", "loss_policy"),
    "linf": ("linf_rho", "linf_phi", "linf_q"),
    "slice": ("rho",),
}


def emit_plot(input_csv, kind: str, out_svg, smooth: bool = False, window: int = 11,
              polyorder: int = 3, t: float | None = None) -> int:
    """Render a CSV as a deterministic SVG line plot; returns the number of series."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}")
    cols = mio.read_csv_columns(input_csv)
    wanted = PLOT_KINDS[kind]
    missing = [c for c in wanted if c not in cols]
    if missing:
        raise ValueError(f"{input_csv}: missing columns {missing}")
    plt.rcParams["svg.hashsalt"] = "mfgdpi"
    fig, ax = plt.subplots(figsize=(6, 4))
    n = 0
    if kind == "slice":
        xcol = "x" if "x" in cols else "x1"
        times = np.unique(cols["t"])
        t_sel = times[np.argmin(np.abs(times - (t if t is not None else times[len(times) // 2])))]
        mask = cols["t"] == t_sel
        order = np.argsort(cols[xcol][mask])
        ax.plot(cols[xcol][mask][order], cols["rho"][mask][order], label=f"rho(t={t_sel:.3g})")
        ax.set_xlabel(xcol)
        n = 1
    else:
        it = cols["iter"]
        for name in wanted:
            y = cols[name]
            ok = np.isfinite(y)
            if not ok.any():
                continue
            xs, ys = it[ok], y[ok]
            if smooth and ys.size >= window:
                ys = savgol(ys, window, polyorder)
            ax.plot(xs, ys, label=name)
            n += 1
        ax.set_xlabel("iteration")
        if kind == "loss":
            ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_svg, format="svg", metadata={"Date": None})
    plt.close(fig)
    return n


def list_problems() -> str:
    lines = [f"{'name':<10} {'d':>3}  {'hamiltonian':<12} {'domain':<14} {'nu':>5}  boundary"]
    for name in pb.PRESETS:
        p = pb.make_problem(name)
        dom = f"[{p.lo:g},{p.hi:g}]^{p.d}"
        lines.append(f"{name:<10} {p.d:>3}  {p.kind.value:<12} {dom:<14} {p.nu:>5g}  {p.boundary.value}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mfgdpi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", required=True)
    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--seed", type=int)
    run.add_argument("--deterministic", action="store_true")
    sub.add_parser("list-problems", help="show the benchmark presets")
    plot = sub.add_parser("plot", help="plot a history or solution CSV as SVG")
    plot.add_argument("--input", required=True)
    plot.add_argument("--kind", required=True, choices=sorted(PLOT_KINDS))
    plot.add_argument("--out", required=True)
    plot.add_argument("--savgol", action="store_true", help="smooth series before plotting")
    plot.add_argument("--window", type=int, default=11)
    plot.add_argument("--polyorder", type=int, default=3)
    plot.add_argument("--t", type=float, help="time of the density slice")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    if args.cmd == "list-problems":
        print(list_problems())
        return EXIT_OK
    if args.cmd == "plot":
        try:
            emit_plot(args.input, args.kind, args.out, args.savgol, args.window, args.polyorder, args.t)
        except (OSError, ValueError) as exc:
            logger.error("%s", exc)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        cfg = parse_config(Path(args.config).read_text())
    except (OSError, ConfigError) as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.deterministic:
        cfg.deterministic = True
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
