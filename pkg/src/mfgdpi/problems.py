"""Benchmark catalog.

All functions broadcast over leading batch axes: points ``x`` and
covectors ``p``/``q`` carry the spatial dimension on the last axis, while
densities ``rho`` have the batch shape only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import Boundary, HamiltonianKind, MFGProblem

LQ = HamiltonianKind.SEPARABLE_LQ
C1 = HamiltonianKind.CONGESTION1
C2 = HamiltonianKind.CONGESTION2
TRAFFIC = HamiltonianKind.TRAFFIC_FLOW

DEFAULT_POLICY_BOUND = 1e3


@dataclass(frozen=True)
class AnalyticParams:
    alpha: float
    c: float


def alpha(gamma: float, nu: float, beta: float) -> float:
    """Positive root of ``nu*a**2 + gamma*a - nu*beta = 0``."""
    if nu <= 0:
        raise ValueError("alpha needs nu > 0")
    disc = gamma**2 + 4 * nu**2 * beta
    if disc < 0:
        raise ValueError(f"negative discriminant {disc}")
    return (-gamma + math.sqrt(disc)) / (2 * nu)


def analytic_params(problem: MFGProblem) -> AnalyticParams:
    _require(problem, LQ)
    a = alpha(problem.gamma, problem.nu, problem.beta)
    d, nu, gamma = problem.d, problem.nu, problem.gamma
    c = nu * d * a + gamma * (d / 2) * math.log(a / (2 * math.pi * nu))
    return AnalyticParams(alpha=a, c=c)


def _require(problem: MFGProblem, kind: HamiltonianKind) -> None:
    if problem.kind is not kind:
        raise ValueError(f"{problem.name}: expected a {kind.value} problem, got {problem.kind.value}")


def _sqnorm(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.sum(v * v, axis=-1)


def analytic_phi(t, x, p: AnalyticParams, problem: MFGProblem) -> np.ndarray:
    """Closed-form value function ``alpha*|x|^2/2 - c*t``."""
    _require(problem, LQ)
    return p.alpha * _sqnorm(x) / 2 - p.c * np.asarray(t, dtype=float)


def analytic_rho(t, x, p: AnalyticParams, problem: MFGProblem) -> np.ndarray:
    """Stationary Gaussian with variance ``nu/alpha``.

    This is the density that actually solves the Fokker-Planck equation
    driven by ``grad phi = alpha*x``; at ``gamma = 0`` (alpha = 1, nu = 1)
    it is the standard Gaussian.
    """
    _require(problem, LQ)
    s = p.alpha / (2 * math.pi * problem.nu)
    r = s ** (problem.d / 2) * np.exp(-p.alpha * _sqnorm(x) / (2 * problem.nu))
    return r * np.ones_like(np.asarray(t, dtype=float))


def printed_rho(t, x, problem: MFGProblem) -> np.ndarray:
    """Standard Gaussian density, independent of ``t``."""
    r = (2 * math.pi) ** (-problem.d / 2) * np.exp(-_sqnorm(x) / 2)
    return r * np.ones_like(np.asarray(t, dtype=float))


def _check_rho(problem: MFGProblem, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    kind = problem.kind
    if kind is C2 or (kind is LQ and problem.gamma != 0):
        if np.any(rho <= 0):
            raise ValueError(f"{problem.name}: density must be positive, min={rho.min():.3g}")
    elif kind is C1 and np.any(1 + 4 * rho <= 0):
        raise ValueError(f"{problem.name}: 1 + 4*rho must be positive, min rho={rho.min():.3g}")
    return rho


def _log_rho(problem: MFGProblem, rho: np.ndarray) -> np.ndarray:
    if problem.gamma == 0:
        return np.zeros_like(rho)
    return problem.gamma * np.log(rho)


def hamiltonian(problem: MFGProblem, x, rho, p) -> np.ndarray:
    rho = _check_rho(problem, rho)
    p = np.asarray(p, dtype=float)
    pp = _sqnorm(p)
    kind = problem.kind
    if kind is LQ:
        return pp / 2 - problem.beta * _sqnorm(x) / 2 - _log_rho(problem, rho)
    if kind is C1:
        return pp / (2 * (1 + 4 * rho))
    if kind is C2:
        return pp / (2 * np.sqrt(rho))
    return pp / 2 - (1 - rho) * np.sum(p, axis=-1)


def optimal_policy(problem: MFGProblem, x, rho, p, R: float | None = None) -> np.ndarray:
    """``grad_p H``, the pointwise maximizer of ``q.p - L(q)``, clamped to ``[-R, R]``."""
    rho = _check_rho(problem, rho)
    p = np.asarray(p, dtype=float)
    kind = problem.kind
    if kind is LQ:
        q = p.copy()
    elif kind is C1:
        q = p / (1 + 4 * rho)[..., None]
    elif kind is C2:
        q = p / np.sqrt(rho)[..., None]
    else:
        q = p - (1 - rho)[..., None]
    if R is not None:
        q = np.clip(q, -R, R)
    return q


def optimal_policy_grads(problem: MFGProblem, rho, p):
    """Partial derivatives of ``grad_p H`` for the unclamped policy.

    Returns ``(d_drho, d_dp_diag)``: the derivative with respect to ``rho``
    (shape of ``p``) and the diagonal scale ``dq_k/dp_k`` (shape of ``rho``);
    every benchmark policy is isotropic in ``p``.
    """
    rho = _check_rho(problem, rho)
    p = np.asarray(p, dtype=float)
    kind = problem.kind
    if kind is LQ:
        return np.zeros_like(p), np.ones_like(rho)
    if kind is C1:
        s = 1 / (1 + 4 * rho)
        return -4 * p * (s**2)[..., None], s
    if kind is C2:
        s = 1 / np.sqrt(rho)
        return -0.5 * p * (s**3)[..., None], s
    return np.ones_like(p), np.ones_like(rho)


def lagrangian(problem: MFGProblem, x, rho, q) -> np.ndarray:
    """Legendre transform ``sup_p {p.q - H(x, rho, p)}`` in closed form."""
    rho = _check_rho(problem, rho)
    q = np.asarray(q, dtype=float)
    qq = _sqnorm(q)
    kind = problem.kind
    if kind is LQ:
        return qq / 2 + problem.beta * _sqnorm(x) / 2 + _log_rho(problem, rho)
    if kind is C1:
        return (1 + 4 * rho) * qq / 2
    if kind is C2:
        return np.sqrt(rho) * qq / 2
    d = q.shape[-1]
    return qq / 2 + d * (1 - rho) ** 2 / 2 + (1 - rho) * np.sum(q, axis=-1)


def lagrangian_grad_q(problem: MFGProblem, x, rho, q) -> np.ndarray:
    rho = _check_rho(problem, rho)
    q = np.asarray(q, dtype=float)
    kind = problem.kind
    if kind is LQ:
        return q.copy()
    if kind is C1:
        return (1 + 4 * rho)[..., None] * q
    if kind is C2:
        return np.sqrt(rho)[..., None] * q
    return q + (1 - rho)[..., None]


def lagrangian_grad_rho(problem: MFGProblem, x, rho, q) -> np.ndarray:
    rho = _check_rho(problem, rho)
    q = np.asarray(q, dtype=float)
    qq = _sqnorm(q)
    kind = problem.kind
    if kind is LQ:
        if problem.gamma == 0:
            return np.zeros_like(rho)
        return problem.gamma / rho
    if kind is C1:
        return 2 * qq
    if kind is C2:
        return qq / (4 * np.sqrt(rho))
    d = q.shape[-1]
    return -d * (1 - rho) - np.sum(q, axis=-1)


def initial_density(problem: MFGProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    kind = problem.kind
    if kind is LQ:
        if problem.printed_rho0:
            return printed_rho(0.0, x, problem)
        return analytic_rho(0.0, x, analytic_params(problem), problem)
    if kind in (C1, C2):
        return (2 * math.pi) ** (-problem.d / 2) * np.exp(-_sqnorm(x - 0.25) / 2)
    r = 0.05 - 0.9 * np.exp(-0.5 * _sqnorm((x - 0.5) / 0.1))
    if problem.clamp_rho0:
        r = np.maximum(r, 0.05)
    return r


def terminal_cost(problem: MFGProblem, x, rho_T=None) -> np.ndarray:
    """Terminal condition ``g(x, rho(T, x))``; no benchmark depends on ``rho_T``."""
    x = np.asarray(x, dtype=float)
    kind = problem.kind
    if kind is LQ:
        return analytic_phi(problem.T, x, analytic_params(problem), problem)
    if kind is C2:
        return np.sum(np.cos(2 * math.pi * x), axis=-1)
    return np.zeros(x.shape[:-1])


# --- presets -------------------------------------------------------------

PRESETS = ("lq", "example1", "example2", "traffic")


def make_problem(name: str, **overrides) -> MFGProblem:
    """Build a named benchmark; keyword overrides replace preset fields.

    ``boundary`` may be given as a :class:`Boundary` or its string value.
    """
    if name == "lq":
        base = MFGProblem(
            name="lq", d=1, nu=1.0, T=1.0, lo=-2.0, hi=2.0, kind=LQ,
            boundary=Boundary.SAMPLED_BOX, gamma=0.0, beta=1.0,
        )
    elif name == "example1":
        base = MFGProblem(
            name="example1", d=2, nu=0.3, T=1.0, lo=0.0, hi=1.0, kind=C1,
            boundary=Boundary.PERIODIC,
        )
    elif name == "example2":
        base = MFGProblem(
            name="example2", d=2, nu=0.3, T=1.0, lo=0.0, hi=1.0, kind=C2,
            boundary=Boundary.PERIODIC,
        )
    elif name == "traffic":
        base = MFGProblem(
            name="traffic", d=1, nu=0.1, T=1.0, lo=0.0, hi=1.0, kind=TRAFFIC,
            boundary=Boundary.PERIODIC,
        )
    else:
        raise KeyError(f"unknown problem {name!r}; choose from {', '.join(PRESETS)}")
    if "boundary" in overrides and isinstance(overrides["boundary"], str):
        overrides["boundary"] = Boundary(overrides["boundary"])
    return replace(base, **overrides) if overrides else base
