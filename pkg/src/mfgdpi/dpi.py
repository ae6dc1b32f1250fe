"""Deep policy iteration: three networks trained on PDE residuals.

Each outer iteration performs, in order,

1. Adam steps on the Fokker-Planck loss, moving only the density net,
2. Adam steps on the HJB loss, moving only the value net (reading the
   freshly updated density net),
3. Adam steps on the policy loss, moving only the policy net (reading
   both fresh nets).

Every loss is a mean squared interior residual at uniformly sampled
points plus the squared mismatch of the matching initial/terminal or
optimality condition.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import problems as pb
from .core import MFGProblem, Solution
from .nn import (
    Activation,
    AdamState,
    Jet2,
    NetParams,
    NetworkSpec,
    NonFiniteLossError,
    OutputTransform,
    adam_step,
    init_network,
    jet_forward,
    loss_and_param_grad,
)

logger = logging.getLogger(__name__)

STAGES = ("fp", "hjb", "policy")


class TrainingError(RuntimeError):
    def __init__(self, message: str, stage: str, iteration: int):
        super().__init__(f"{message} [stage {stage}, iteration {iteration}]")
        self.stage = stage
        self.iteration = iteration


@dataclass
class TrainConfig:
    rho_spec: NetworkSpec
    phi_spec: NetworkSpec
    q_spec: NetworkSpec
    B: int = 50
    S: int = 50
    K: int = 20000
    inner_steps: int = 1
    lr: float = 1e-4
    weight_decay: float = 1e-3
    seed: int = 0
    eval_every: int = 100
    eval_points: int = 100

    def __post_init__(self):
        if self.B < 1 or self.S < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.K < 1 or self.inner_steps < 1:
            raise ValueError("K and inner_steps must be >= 1")


@dataclass
class ConvergenceHistory:
    """Per-iteration losses plus the periodic evaluation against a reference."""

    loss_fp: list[float] = field(default_factory=list)
    loss_hjb: list[float] = field(default_factory=list)
    loss_policy: list[float] = field(default_factory=list)
    eval_iter: list[int] = field(default_factory=list)
    relerr_rho: list[float] = field(default_factory=list)
    relerr_phi: list[float] = field(default_factory=list)
    linf_rho: list[float] = field(default_factory=list)
    linf_phi: list[float] = field(default_factory=list)
    linf_q: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.loss_fp)

    def rows(self):
        """One dict per iteration; unevaluated metrics are ``None``."""
        evals = {k: i for i, k in enumerate(self.eval_iter)}
        cols = ("linf_rho", "linf_phi", "linf_q", "relerr_rho", "relerr_phi")
        for k in range(len(self)):
            row = {
                "iter": k,
                "loss_fp": self.loss_fp[k],
                "loss_hjb": self.loss_hjb[k],
                "loss_policy": self.loss_policy[k],
            }
            j = evals.get(k)
            for c in cols:
                series = getattr(self, c)
                row[c] = series[j] if j is not None and j < len(series) else None
            yield row


@dataclass
class DPIState:
    rho: NetParams
    phi: NetParams
    q: NetParams
    adam: dict[str, AdamState]
    history: ConvergenceHistory = field(default_factory=ConvergenceHistory)
    iteration: int = 0

    def net(self, stage: str) -> NetParams:
        return {"fp": self.rho, "hjb": self.phi, "policy": self.q}[stage]


def init_state(problem: MFGProblem, cfg: TrainConfig) -> DPIState:
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    nets = [
        init_network(spec, int(s.generate_state(1)[0]))
        for spec, s in zip((cfg.rho_spec, cfg.phi_spec, cfg.q_spec), seeds)
    ]
    for spec, name in zip((cfg.rho_spec, cfg.phi_spec, cfg.q_spec), ("rho", "phi", "q")):
        if spec.input_dim != problem.d + 1:
            raise ValueError(f"{name} net takes {spec.input_dim} inputs, problem needs {problem.d + 1}")
    if cfg.rho_spec.output_dim != 1 or cfg.phi_spec.output_dim != 1 or cfg.q_spec.output_dim != problem.d:
        raise ValueError("density/value nets need 1 output and the policy net d outputs")
    adam = {s: AdamState.zeros(n.flat.size) for s, n in zip(STAGES, nets)}
    return DPIState(rho=nets[0], phi=nets[1], q=nets[2], adam=adam)


# --- sampling ------------------------------------------------------------------


def sample_interior(B: int, problem: MFGProblem, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``B`` points uniform on ``[0, T] x Omega``."""
    if B < 1:
        raise ValueError("batch size must be >= 1")
    t = rng.uniform(0.0, problem.T, size=B)
    x = rng.uniform(problem.lo, problem.hi, size=(B, problem.d))
    return t, x


def sample_spatial(S: int, problem: MFGProblem, rng: np.random.Generator) -> np.ndarray:
    if S < 1:
        raise ValueError("batch size must be >= 1")
    return rng.uniform(problem.lo, problem.hi, size=(S, problem.d))


# --- losses ------------------------------------------------------------------
#
# Each ``_*_terms`` evaluator receives the trained network as a recorder
# (see nn.loss_and_param_grad) and the frozen networks as NetParams, and
# returns (loss, adjoints of the recorded jets).


def _value(params: NetParams, t, x) -> np.ndarray:
    return jet_forward(params, t, x, order=0)[0].value


def _fp_terms(net, state: DPIState, problem: MFGProblem, interior, xs):
    t, x = interior
    B, S = t.size, xs.shape[0]
    r = net(t, x, 2)
    qj = jet_forward(state.q, t, x, order=1)[0]
    q = qj.value
    div_q = np.trace(qj.grad_x, axis1=1, axis2=2)
    grad_r = r.grad_x[:, 0, :]
    res = r.dt[:, 0] - problem.nu * r.lap_x[:, 0] - (np.sum(grad_r * q, axis=1) + r.value[:, 0] * div_q)
    r0 = net(np.zeros(S), xs, 0)
    cond = r0.value[:, 0] - pb.initial_density(problem, xs)
    loss = np.mean(res**2) + np.mean(cond**2)
    g = 2 * res / B
    adj_int = Jet2(
        value=(-g * div_q)[:, None],
        dt=g[:, None],
        grad_x=(-g[:, None] * q)[:, None, :],
        lap_x=(-problem.nu * g)[:, None],
    )
    adj_cond = Jet2(value=(2 * cond / S)[:, None])
    return loss, [adj_int, adj_cond]


def _hjb_terms(net, state: DPIState, problem: MFGProblem, interior, xs):
    t, x = interior
    B, S = t.size, xs.shape[0]
    p = net(t, x, 2)
    rho = _value(state.rho, t, x)[:, 0]
    q = _value(state.q, t, x)
    grad_p = p.grad_x[:, 0, :]
    running = pb.lagrangian(problem, x, rho, q)
    res = -p.dt[:, 0] - problem.nu * p.lap_x[:, 0] + np.sum(q * grad_p, axis=1) - running
    tT = np.full(S, problem.T)
    pT = net(tT, xs, 0)
    rhoT = _value(state.rho, tT, xs)[:, 0]
    cond = pT.value[:, 0] - pb.terminal_cost(problem, xs, rhoT)
    loss = np.mean(res**2) + np.mean(cond**2)
    g = 2 * res / B
    adj_int = Jet2(
        value=None,
        dt=-g[:, None],
        grad_x=(g[:, None] * q)[:, None, :],
        lap_x=(-problem.nu * g)[:, None],
    )
    adj_cond = Jet2(value=(2 * cond / S)[:, None])
    return loss, [adj_int, adj_cond]


def _policy_terms(net, state: DPIState, problem: MFGProblem, interior, R: float):
    t, x = interior
    B = t.size
    q = net(t, x, 0).value
    rho = _value(state.rho, t, x)[:, 0]
    p = jet_forward(state.phi, t, x, order=1)[0].grad_x[:, 0, :]
    gap = pb.lagrangian(problem, x, rho, q) - np.sum(q * p, axis=1)
    mismatch = q - pb.optimal_policy(problem, x, rho, p, R)
    loss = np.mean(gap**2) + np.mean(np.sum(mismatch**2, axis=1))
    dq = (2 * gap / B)[:, None] * (pb.lagrangian_grad_q(problem, x, rho, q) - p) + 2 * mismatch / B
    return loss, [Jet2(value=dq)]


class _Frozen:
    """Recorder stand-in that evaluates without taping."""

    def __init__(self, params: NetParams):
        self.params = params

    def __call__(self, t, x, order=2):
        return jet_forward(self.params, t, x, order)[0]


def _stage_loss(stage, state, problem, interior, xs, R, with_grad):
    params = state.net(stage)

    def evaluate(net):
        if stage == "fp":
            return _fp_terms(net, state, problem, interior, xs)
        if stage == "hjb":
            return _hjb_terms(net, state, problem, interior, xs)
        return _policy_terms(net, state, problem, interior, R)

    if with_grad:
        return loss_and_param_grad(evaluate, params)
    return float(evaluate(_Frozen(params))[0])


def loss_fp(state: DPIState, problem: MFGProblem, interior, boundary) -> float:
    """Fokker-Planck residual loss plus initial-condition mismatch."""
    return _stage_loss("fp", state, problem, interior, boundary, None, False)


def loss_hjb(state: DPIState, problem: MFGProblem, interior, boundary) -> float:
    """HJB residual loss plus terminal-condition mismatch."""
    return _stage_loss("hjb", state, problem, interior, boundary, None, False)


def loss_policy(state: DPIState, problem: MFGProblem, interior, R: float = pb.DEFAULT_POLICY_BOUND) -> float:
    """Legendre gap ``L(q) - q.grad phi`` plus distance to ``grad_p H``."""
    return _stage_loss("policy", state, problem, interior, None, R, False)


def stage_grad(stage: str, state: DPIState, problem: MFGProblem, interior, boundary=None, R=pb.DEFAULT_POLICY_BOUND):
    """``(loss, gradient)`` of one stage loss with respect to that stage's network."""
    return _stage_loss(stage, state, problem, interior, boundary, R, True)


# --- evaluation ------------------------------------------------------------


class Reference:
    """What a training run is measured against.

    ``kind`` is ``"analytic"`` (SeparableLQ closed form, relative L2 errors
    on a time x space grid) or ``"solution"`` (a finite-difference
    :class:`Solution`, sup-norm distances on its nodes).
    """

    def __init__(self, kind: str, problem: MFGProblem, solution: Solution | None = None, n_points: int = 100, seed: int = 0):
        self.kind = kind
        self.problem = problem
        self.solution = solution
        if kind == "analytic":
            from .metrics import evaluation_points

            self.t, self.x = evaluation_points(problem, n_points, n_points, seed=seed)
            params = pb.analytic_params(problem)
            self.rho_ref = pb.analytic_rho(self.t, self.x, params, problem)
            self.phi_ref = pb.analytic_phi(self.t, self.x, params, problem)
        elif kind == "solution":
            if solution is None:
                raise ValueError("a solution reference needs the solution")
            g = solution.grid
            t = np.repeat(g.times(), g.n_space)
            x = np.tile(g.coords(), (g.N + 1, 1))
            self.t, self.x = t, x
        else:
            raise ValueError(f"unknown reference kind {kind!r}")

    def measure(self, state: DPIState) -> dict[str, float]:
        from .metrics import linf_distance, relative_error

        rho = _value(state.rho, self.t, self.x)[:, 0]
        phi = _value(state.phi, self.t, self.x)[:, 0]
        if self.kind == "analytic":
            return {
                "relerr_rho": relative_error(rho, self.rho_ref),
                "relerr_phi": relative_error(phi, self.phi_ref),
            }
        q = _value(state.q, self.t, self.x)
        g = self.solution.grid
        shape = (g.N + 1, g.n_space)
        pred = {"rho": rho.reshape(shape), "phi": phi.reshape(shape), "q": q.reshape(shape + (g.d,))}
        dist = linf_distance(pred, self.solution)
        return {"linf_rho": dist["rho"], "linf_phi": dist["phi"], "linf_q": dist["q"]}


def network_solution(state: DPIState, grid) -> Solution:
    """Sample the three networks on the nodes of ``grid``."""
    from .core import GridField

    t = np.repeat(grid.times(), grid.n_space)
    x = np.tile(grid.coords(), (grid.N + 1, 1))
    shape = (grid.N + 1, grid.n_space)
    rho = _value(state.rho, t, x)[:, 0].reshape(shape)
    phi = _value(state.phi, t, x)[:, 0].reshape(shape)
    q = _value(state.q, t, x).reshape(shape + (grid.d,))
    qf = GridField(grid, q[..., 0]) if grid.d == 1 else GridField(grid, q, channels=grid.d)
    return Solution(GridField(grid, rho), GridField(grid, phi), qf)


# --- training loop -----------------------------------------------------------


def dpi_train(
    problem: MFGProblem,
    cfg: TrainConfig,
    reference: Reference | None = None,
    state: DPIState | None = None,
    R: float = pb.DEFAULT_POLICY_BOUND,
    callback=None,
) -> tuple[DPIState, ConvergenceHistory]:
    """Run ``cfg.K`` outer iterations; resumes from ``state`` when given.

    ``callback(k, state)`` is called after every outer iteration.
    """
    if state is None:
        state = init_state(problem, cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3])
    # skip the draws of already completed iterations so resumed runs match
    for _ in range(state.iteration):
        _draw(rng, problem, cfg)
    hist = state.history
    t0 = time.perf_counter()
    for k in range(state.iteration, state.iteration + cfg.K):
        batches = _draw(rng, problem, cfg)
        losses = {}
        for stage in STAGES:
            params = state.net(stage)
            for step in range(cfg.inner_steps):
                interior, xs = batches[stage][step]
                try:
                    loss, grad = stage_grad(stage, state, problem, interior, xs, R)
                except (NonFiniteLossError, ValueError, FloatingPointError) as exc:
                    raise TrainingError(str(exc), stage, k) from exc
                if not np.all(np.isfinite(grad)):
                    raise TrainingError("non-finite gradient", stage, k)
                adam_step(params.flat, grad, state.adam[stage], cfg.lr, cfg.weight_decay)
                if step == 0:
                    losses[stage] = loss
        hist.loss_fp.append(losses["fp"])
        hist.loss_hjb.append(losses["hjb"])
        hist.loss_policy.append(losses["policy"])
        if reference is not None and cfg.eval_every and (k + 1) % cfg.eval_every == 0:
            m = reference.measure(state)
            hist.eval_iter.append(k)
            for key, v in m.items():
                getattr(hist, key).append(v)
        state.iteration = k + 1
        if callback is not None:
            callback(k, state)
        if (k + 1) % 1000 == 0:
            logger.info(
                "iter %d  fp %.3e  hjb %.3e  policy %.3e  (%.1fs)",
                k + 1, losses["fp"], losses["hjb"], losses["policy"], time.perf_counter() - t0,
            )
    return state, hist


def _draw(rng, problem, cfg):
    """Batches for one outer iteration, in a fixed order."""
    out = {}
    for stage in STAGES:
        steps = []
        for _ in range(cfg.inner_steps):
            interior = sample_interior(cfg.B, problem, rng)
            xs = sample_spatial(cfg.S, problem, rng) if stage != "policy" else None
            steps.append((interior, xs))
        out[stage] = steps
    return out


# --- presets -----------------------------------------------------------------


def _spec(d, out, widths, act, head=OutputTransform.IDENTITY, skip=0.5):
    return NetworkSpec(1 + d, out, tuple(widths), Activation(act), skip, head)


def preset_config(name: str, d: int | None = None, **overrides) -> TrainConfig:
    """Hyperparameters of the published experiments.

    ``test1`` / ``test2``: analytic problem in 1-D (gamma 0 / 0.1).
    ``test4``: analytic problem in ``d`` dimensions.
    ``example1`` / ``example2``: congestion problems in ``d`` dimensions.
    ``traffic``: the 1-D traffic-flow problem.
    """
    if name in ("test1", "test2"):
        d = 1
        head = OutputTransform.SOFTPLUS if name == "test2" else OutputTransform.IDENTITY
        cfg = TrainConfig(
            rho_spec=_spec(d, 1, [100], "Tanh", head),
            phi_spec=_spec(d, 1, [100], "Softplus"),
            q_spec=_spec(d, d, [100], "Tanh"),
            B=50, S=50, lr=1e-4, weight_decay=1e-3,
            # the log-density coupling converges slowly with one step per stage
            inner_steps=2 if name == "test2" else 1,
        )
    elif name == "test4":
        d = d or 2
        B, width = {2: (100, 100), 50: (500, 200), 100: (1000, 256)}.get(d, (500, 100))
        cfg = TrainConfig(
            rho_spec=_spec(d, 1, [width], "Tanh"),
            phi_spec=_spec(d, 1, [width], "Softplus"),
            q_spec=_spec(d, d, [width], "Tanh"),
            B=B, S=B, lr=1e-4, weight_decay=1e-4,
        )
    elif name in ("example1", "example2"):
        d = d or 2
        B = {2: 100, 10: 500}.get(d, 1000)
        # a positive density keeps 1 + 4*rho and sqrt(rho) valid from the first step
        head = OutputTransform.SOFTPLUS
        cfg = TrainConfig(
            rho_spec=_spec(d, 1, [100], "Tanh", head),
            phi_spec=_spec(d, 1, [100], "Softplus"),
            q_spec=_spec(d, d, [100], "Tanh"),
            B=B, S=B, lr=1e-4, weight_decay=1e-4,
        )
    elif name == "traffic":
        d = 1
        cfg = TrainConfig(
            rho_spec=_spec(d, 1, [100, 100, 100], "Gelu"),
            phi_spec=_spec(d, 1, [100], "Sin"),
            q_spec=_spec(d, d, [100], "Sin"),
            B=50, S=50, lr=1e-4, weight_decay=1e-3,
        )
    else:
        raise KeyError(f"unknown training preset {name!r}")
    return replace(cfg, **overrides) if overrides else cfg
