"""Finite-difference policy iteration and the damped fixed-point reference.

Discretization on a periodic uniform grid: centred second differences
for the Laplacian, Engquist-Osher upwind fluxes for the Fokker-Planck
transport term, upwinded one-sided differences for the HJB transport
term and implicit Euler in time (forward for the density, backward for
the value function).

The agents move with velocity ``-q`` (the Fokker-Planck equation reads
``rho_t - nu*Lap(rho) - div(rho*q) = 0``), so every one-sided stencil
picks its neighbour on the side the velocity ``-q`` comes from.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import problems as pb
from .core import GridField, MFGProblem, Solution, SpaceTimeGrid

logger = logging.getLogger(__name__)


class LinearSolveError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, change: float, solution: Solution | None = None):
        super().__init__(f"{message} (last change {change:.3e})")
        self.change = change
        self.solution = solution


@dataclass
class FDConfig:
    """Solver knobs.

    ``max_linear_iters`` bounds the inner policy (Howard) iterations used
    by the fully nonlinear HJB step of the fixed-point solver; the linear
    systems themselves are factorized directly.
    """

    K: int = 50
    linear_tol: float = 1e-10
    max_linear_iters: int = 100
    fp_damping: float = 0.5
    fp_tol: float = 1e-8
    fp_max_iters: int = 1000
    R: float = pb.DEFAULT_POLICY_BOUND

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.linear_tol > 0:
            raise ValueError("linear_tol must be positive")
        if not 0 < self.fp_damping <= 1:
            raise ValueError("fp_damping must lie in (0, 1]")


@dataclass
class PIHistory:
    """Per-iteration sup-norm changes and distances to a reference."""

    d_rho: list[float] = field(default_factory=list)
    d_phi: list[float] = field(default_factory=list)
    d_q: list[float] = field(default_factory=list)
    ref_rho: list[float] = field(default_factory=list)
    ref_phi: list[float] = field(default_factory=list)
    ref_q: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.d_q)

    def max_change(self) -> np.ndarray:
        return np.nanmax(np.array([self.d_rho, self.d_phi, self.d_q]), axis=0)


# --- stencils on spatial slices --------------------------------------------


def _check_periodic(periodic: bool) -> None:
    if not periodic:
        raise NotImplementedError("finite-difference operators are periodic only")


def discrete_laplacian(u: np.ndarray, h: float, periodic: bool = True) -> np.ndarray:
    """Centred 2nd-order Laplacian of a ``(I,)*d`` array with periodic wrap."""
    _check_periodic(periodic)
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        raise ValueError("empty slice")
    out = np.zeros_like(u)
    for k in range(u.ndim):
        out += np.roll(u, -1, axis=k) - 2 * u + np.roll(u, 1, axis=k)
    return out / h**2


def _face_velocity(qk: np.ndarray, axis: int) -> np.ndarray:
    return 0.5 * (qk + np.roll(qk, -1, axis=axis))


def eo_divergence(rho: np.ndarray, q: np.ndarray, h: float) -> np.ndarray:
    """Upwind (Engquist-Osher) approximation of ``div(rho * q)``.

    ``rho`` has shape ``(I,)*d`` and ``q`` shape ``(I,)*d + (d,)``.  The
    face flux is ``max(q,0)*rho_{i+1} + min(q,0)*rho_i`` with ``q`` averaged
    to the face, which upwinds the transport velocity ``-q``.
    """
    rho = np.asarray(rho, dtype=float)
    q = np.asarray(q, dtype=float)
    if q.shape != rho.shape + (rho.ndim,):
        raise ValueError(f"policy shape {q.shape} does not match density {rho.shape}")
    out = np.zeros_like(rho)
    for k in range(rho.ndim):
        a = _face_velocity(q[..., k], k)
        flux = np.maximum(a, 0) * np.roll(rho, -1, axis=k) + np.minimum(a, 0) * rho
        out += flux - np.roll(flux, 1, axis=k)
    return out / h


def upwind_transport(phi: np.ndarray, q: np.ndarray, h: float) -> np.ndarray:
    """``q . D phi`` with backward differences where ``q > 0``, forward where ``q < 0``."""
    out = np.zeros_like(phi)
    for k in range(phi.ndim):
        back = (phi - np.roll(phi, 1, axis=k)) / h
        fwd = (np.roll(phi, -1, axis=k) - phi) / h
        out += np.maximum(q[..., k], 0) * back + np.minimum(q[..., k], 0) * fwd
    return out


def centred_gradient(phi: np.ndarray, h: float) -> np.ndarray:
    """Centred difference gradient, shape ``phi.shape + (ndim,)``."""
    return np.stack(
        [(np.roll(phi, -1, axis=k) - np.roll(phi, 1, axis=k)) / (2 * h) for k in range(phi.ndim)],
        axis=-1,
    )


# --- sparse operators --------------------------------------------------------


class _Stencil:
    """Neighbour tables and the constant Laplacian for one grid."""

    def __init__(self, grid: SpaceTimeGrid):
        _check_periodic(grid.periodic)
        self.grid = grid
        n = grid.n_space
        idx = np.arange(n).reshape(grid.shape)
        self.idx = idx.ravel()
        self.plus = [np.roll(idx, -1, axis=k).ravel() for k in range(grid.d)]
        self.minus = [np.roll(idx, 1, axis=k).ravel() for k in range(grid.d)]
        h2 = grid.h**2
        rows = [self.idx]
        cols = [self.idx]
        vals = [np.full(n, -2.0 * grid.d / h2)]
        for k in range(grid.d):
            for nb in (self.plus[k], self.minus[k]):
                rows.append(self.idx)
                cols.append(nb)
                vals.append(np.full(n, 1.0 / h2))
        self.lap = self._assemble(rows, cols, vals)
        self.eye = sp.identity(n, format="csr")

    def _assemble(self, rows, cols, vals) -> sp.csr_matrix:
        n = self.grid.n_space
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

    def divergence(self, q: np.ndarray) -> sp.csr_matrix:
        """Matrix of ``rho -> eo_divergence(rho, q)``; ``q`` has shape ``(n, d)``."""
        h = self.grid.h
        rows, cols, vals = [], [], []
        for k in range(self.grid.d):
            qk = q[:, k]
            a = 0.5 * (qk + qk[self.plus[k]])  # face i+1/2
            ap, am = np.maximum(a, 0), np.minimum(a, 0)
            # F_{i+1/2} - F_{i-1/2},  F_{i+1/2} = ap_i rho_{i+1} + am_i rho_i
            rows += [self.idx, self.idx, self.idx, self.idx]
            cols += [self.plus[k], self.idx, self.idx, self.minus[k]]
            vals += [ap / h, am / h, -ap[self.minus[k]] / h, -am[self.minus[k]] / h]
        return self._assemble(rows, cols, vals)

    def transport(self, q: np.ndarray) -> sp.csr_matrix:
        """Matrix of ``phi -> upwind_transport(phi, q)``."""
        h = self.grid.h
        rows, cols, vals = [], [], []
        for k in range(self.grid.d):
            qp, qm = np.maximum(q[:, k], 0) / h, np.minimum(q[:, k], 0) / h
            rows += [self.idx, self.idx, self.idx, self.idx]
            cols += [self.idx, self.minus[k], self.plus[k], self.idx]
            vals += [qp, -qp, qm, -qm]
        return self._assemble(rows, cols, vals)

    def gradient(self, phi: np.ndarray) -> np.ndarray:
        h = self.grid.h
        return np.stack(
            [(phi[self.plus[k]] - phi[self.minus[k]]) / (2 * h) for k in range(self.grid.d)],
            axis=-1,
        )


def _stencil(grid: SpaceTimeGrid) -> _Stencil:
    cached = _STENCILS.get(grid)
    if cached is None:
        cached = _STENCILS[grid] = _Stencil(grid)
    return cached


_STENCILS: dict[SpaceTimeGrid, _Stencil] = {}


def _solve(A: sp.csr_matrix, b: np.ndarray, tol: float, what: str) -> np.ndarray:
    x = spla.splu(A.tocsc()).solve(b)
    res = float(np.max(np.abs(A @ x - b)))
    scale = max(1.0, float(np.max(np.abs(b))))
    if not np.isfinite(res) or res > tol * scale:
        raise LinearSolveError(f"{what}: linear solve did not reach tolerance {tol:g}", res)
    return x


def _as_policy(q, n: int, d: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q.reshape(n, d)


# --- time steps ------------------------------------------------------------


def fp_step_implicit(
    rho_n: np.ndarray, q_next: np.ndarray, grid: SpaceTimeGrid, nu: float, tol: float = 1e-10
) -> np.ndarray:
    """One implicit Euler step of the Fokker-Planck equation.

    Solves ``rho' - dt*(nu*Lap rho' + div(rho' q_next)) = rho_n``.  Flat
    slices of length ``I**d``; ``q_next`` may be ``(I**d,)`` when ``d == 1``.
    """
    st = _stencil(grid)
    q = _as_policy(q_next, grid.n_space, grid.d)
    A = st.eye - grid.dt * (nu * st.lap + st.divergence(q))
    return _solve(A, np.asarray(rho_n, dtype=float), tol, "Fokker-Planck step")


def hjb_step_implicit(
    phi_next: np.ndarray,
    q_n: np.ndarray,
    rho_next: np.ndarray,
    grid: SpaceTimeGrid,
    nu: float,
    problem: MFGProblem,
    q_next: np.ndarray | None = None,
    tol: float = 1e-10,
) -> np.ndarray:
    """One implicit backward step of the linear HJB equation.

    Solves ``phi - dt*(nu*Lap phi - q_n . D phi) = phi_next + dt*L(x, rho_next, q_next)``
    where ``D`` is upwinded by the sign of ``q_n``.  ``q_next`` defaults
    to ``q_n``.
    """
    st = _stencil(grid)
    q = _as_policy(q_n, grid.n_space, grid.d)
    qr = q if q_next is None else _as_policy(q_next, grid.n_space, grid.d)
    running = pb.lagrangian(problem, grid.coords(), np.asarray(rho_next, dtype=float), qr)
    A = st.eye - grid.dt * (nu * st.lap - st.transport(q))
    return _solve(A, np.asarray(phi_next, dtype=float) + grid.dt * running, tol, "HJB step")


def policy_update_fd(
    phi: GridField, grid: SpaceTimeGrid, problem: MFGProblem, rho: GridField, R: float = pb.DEFAULT_POLICY_BOUND
) -> GridField:
    """``q_n = grad_p H(x, rho_n, D phi_n)`` with centred ``D``, clamped to ``[-R, R]``."""
    st = _stencil(grid)
    x = grid.coords()
    q = np.empty((grid.N + 1, grid.n_space, grid.d))
    for n in range(grid.N + 1):
        q[n] = pb.optimal_policy(problem, x, rho.values[n], st.gradient(phi.values[n]), R)
    return _policy_field(grid, q)


def _policy_field(grid: SpaceTimeGrid, q: np.ndarray) -> GridField:
    if grid.d == 1:
        return GridField(grid, q[..., 0], channels=1)
    return GridField(grid, q, channels=grid.d)


def _policy_values(q: GridField) -> np.ndarray:
    v = q.values
    return v[..., None] if v.ndim == 2 else v


# --- full sweeps -------------------------------------------------------------


def _check_problem(problem: MFGProblem, grid: SpaceTimeGrid) -> None:
    if not problem.periodic or not grid.periodic:
        raise ValueError(f"{problem.name}: finite-difference solvers need a periodic problem")
    if grid.d > 2:
        raise ValueError(f"finite-difference solvers support d <= 2, got d={grid.d}")


def solve_fp(problem: MFGProblem, grid: SpaceTimeGrid, q: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Forward sweep ``n = 0..N-1``; ``q`` has shape ``(N+1, I**d, d)``."""
    rho = np.empty((grid.N + 1, grid.n_space))
    rho[0] = pb.initial_density(problem, grid.coords())
    for n in range(grid.N):
        rho[n + 1] = fp_step_implicit(rho[n], q[n + 1], grid, problem.nu, tol)
    return rho


def solve_hjb(
    problem: MFGProblem, grid: SpaceTimeGrid, q: np.ndarray, rho: np.ndarray, tol: float = 1e-10
) -> np.ndarray:
    """Backward sweep ``n = N-1..0`` of the HJB equation linearized at ``q``."""
    phi = np.empty((grid.N + 1, grid.n_space))
    phi[grid.N] = pb.terminal_cost(problem, grid.coords(), rho[grid.N])
    for n in range(grid.N - 1, -1, -1):
        phi[n] = hjb_step_implicit(
            phi[n + 1], q[n], rho[n + 1], grid, problem.nu, problem, q_next=q[n + 1], tol=tol
        )
    return phi


def _sup(a: np.ndarray) -> float:
    return float(np.max(np.abs(a)))


def run_policy_iteration(
    problem: MFGProblem,
    grid: SpaceTimeGrid,
    cfg: FDConfig,
    q0: GridField | None = None,
    reference: Solution | None = None,
    callback=None,
) -> tuple[Solution, PIHistory]:
    """``cfg.K`` sweeps of: density solve, value solve, policy update.

    ``history.d_*[k]`` is the sup-norm change between iterates ``k`` and
    ``k-1``; for the first iteration the density and value changes are
    undefined and recorded as NaN, the policy change is measured against
    ``q0``.  ``callback(k, solution)`` is invoked after every iteration.
    """
    _check_problem(problem, grid)
    if q0 is None:
        q0 = GridField.zeros(grid, channels=grid.d)
    if q0.grid != grid:
        raise ValueError("initial policy lives on a different grid")
    q = _policy_values(q0).copy()
    rho_prev = phi_prev = None
    hist = PIHistory()
    sol = None
    for k in range(cfg.K):
        try:
            rho = solve_fp(problem, grid, q, cfg.linear_tol)
            phi = solve_hjb(problem, grid, q, rho, cfg.linear_tol)
        except LinearSolveError as exc:
            raise LinearSolveError(f"policy iteration {k}: {exc}", exc.residual) from exc
        rho_f, phi_f = GridField(grid, rho), GridField(grid, phi)
        q_new = _policy_values(policy_update_fd(phi_f, grid, problem, rho_f, cfg.R))
        hist.d_rho.append(np.nan if rho_prev is None else _sup(rho - rho_prev))
        hist.d_phi.append(np.nan if phi_prev is None else _sup(phi - phi_prev))
        hist.d_q.append(_sup(q_new - q))
        rho_prev, phi_prev, q = rho, phi, q_new
        sol = Solution(rho_f, phi_f, _policy_field(grid, q))
        if reference is not None:
            from .metrics import linf_distance

            dist = linf_distance(sol, reference)
            hist.ref_rho.append(dist["rho"])
            hist.ref_phi.append(dist["phi"])
            hist.ref_q.append(dist["q"])
        if callback is not None:
            callback(k, sol)
        logger.debug("PI %d: drho=%.3e dphi=%.3e dq=%.3e", k, hist.d_rho[-1], hist.d_phi[-1], hist.d_q[-1])
    return sol, hist


def _hjb_nonlinear(
    problem: MFGProblem, grid: SpaceTimeGrid, rho: np.ndarray, cfg: FDConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Backward HJB sweep with the policy solved jointly with each step.

    At step ``n`` the transport policy is ``grad_p H(rho_n, D phi_n)`` of
    the unknown ``phi_n``; it is found by Howard iterations on that single
    step.  The running cost uses the already known ``q_{n+1}``.
    """
    st = _stencil(grid)
    x = grid.coords()
    phi = np.empty((grid.N + 1, grid.n_space))
    q = np.empty((grid.N + 1, grid.n_space, grid.d))
    phi[grid.N] = pb.terminal_cost(problem, x, rho[grid.N])
    q[grid.N] = pb.optimal_policy(problem, x, rho[grid.N], st.gradient(phi[grid.N]), cfg.R)
    for n in range(grid.N - 1, -1, -1):
        guess = phi[n + 1]
        for it in range(cfg.max_linear_iters):
            qn = pb.optimal_policy(problem, x, rho[n], st.gradient(guess), cfg.R)
            new = hjb_step_implicit(
                phi[n + 1], qn, rho[n + 1], grid, problem.nu, problem, q_next=q[n + 1], tol=cfg.linear_tol
            )
            change = _sup(new - guess)
            guess = new
            if change <= cfg.linear_tol * max(1.0, _sup(new)):
                break
        else:
            raise ConvergenceError(f"nonlinear HJB step {n} did not converge", change)
        phi[n] = guess
        q[n] = pb.optimal_policy(problem, x, rho[n], st.gradient(guess), cfg.R)
    return phi, q


def run_fixed_point(
    problem: MFGProblem, grid: SpaceTimeGrid, cfg: FDConfig | None = None, rho_init: np.ndarray | None = None
) -> Solution:
    """Damped fixed-point iteration on the fully coupled discrete system.

    Alternates a nonlinear backward HJB sweep for the current density and
    a forward Fokker-Planck sweep with the resulting optimal policy, then
    blends ``rho <- (1 - damping)*rho + damping*rho_new``.  Stops when the
    sup-norm of ``rho_new - rho`` drops below ``cfg.fp_tol``.  At
    convergence the triple satisfies the same discrete equations as a
    converged policy iteration.
    """
    cfg = cfg or FDConfig()
    _check_problem(problem, grid)
    if rho_init is None:
        rho = np.tile(pb.initial_density(problem, grid.coords()), (grid.N + 1, 1))
    else:
        rho = np.array(rho_init, dtype=float)
    changes = []
    for it in range(cfg.fp_max_iters):
        phi, q = _hjb_nonlinear(problem, grid, rho, cfg)
        rho_new = solve_fp(problem, grid, q, cfg.linear_tol)
        change = _sup(rho_new - rho)
        changes.append(change)
        rho = (1 - cfg.fp_damping) * rho + cfg.fp_damping * rho_new
        if change < cfg.fp_tol:
            break
    else:
        raise ConvergenceError(f"fixed point did not converge in {cfg.fp_max_iters} sweeps", changes[-1])
    phi, q = _hjb_nonlinear(problem, grid, rho, cfg)
    logger.info("fixed point converged after %d sweeps", len(changes))
    sol = Solution(GridField(grid, rho), GridField(grid, phi), _policy_field(grid, q))
    sol.meta["changes"] = changes
    return sol
