"""Error norms, sup-norm distances between solutions, curve smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from .core import MFGProblem, Solution


@dataclass
class ErrorReport:
    rel_err_rho: float
    rel_err_phi: float
    n_t: int
    n_x: int


def evaluation_points(problem: MFGProblem, n_t: int = 100, n_x: int = 100, seed: int = 0):
    """Flattened ``(t, x)`` evaluation nodes.

    In 1-D this is the tensor grid ``linspace(0, T, n_t) x linspace(lo, hi, n_x)``.
    In higher dimension a tensor grid is out of reach, so ``n_x`` fixed
    uniform points of the box (drawn with ``seed``) are paired with every
    time node.
    """
    ts = np.linspace(0.0, problem.T, n_t)
    if problem.d == 1:
        xs = np.linspace(problem.lo, problem.hi, n_x)[:, None]
    else:
        xs = np.random.default_rng(seed).uniform(problem.lo, problem.hi, size=(n_x, problem.d))
    t = np.repeat(ts, n_x)
    x = np.tile(xs, (n_t, 1))
    return t, x


def relative_error(pred, ref, norm: str = "l2") -> float:
    """``||pred - ref|| / ||ref||`` over all nodes; ``norm`` is ``"l2"`` or ``"max"``."""
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    if norm == "l2":
        num, den = np.linalg.norm(pred - ref), np.linalg.norm(ref)
    elif norm == "max":
        num, den = np.max(np.abs(pred - ref)), np.max(np.abs(ref))
    else:
        raise ValueError(f"unknown norm {norm!r}")
    if den == 0:
        raise ZeroDivisionError("reference has zero norm")
    return float(num / den)


def relative_error_per_slice(pred, ref, n_t: int) -> np.ndarray:
    """Relative L2 error of each time slice of row-major ``(t, x)`` data."""
    pred = np.asarray(pred, dtype=float).reshape(n_t, -1)
    ref = np.asarray(ref, dtype=float).reshape(n_t, -1)
    return np.linalg.norm(pred - ref, axis=1) / np.linalg.norm(ref, axis=1)


def error_report(pred_rho, pred_phi, ref_rho, ref_phi, n_t: int, n_x: int) -> ErrorReport:
    return ErrorReport(relative_error(pred_rho, ref_rho), relative_error(pred_phi, ref_phi), n_t, n_x)


def _fields(a) -> dict[str, np.ndarray]:
    if isinstance(a, Solution):
        return {"rho": a.rho.values, "phi": a.phi.values, "q": a.q_array()}
    out = dict(a)
    q = np.asarray(out["q"])
    out["q"] = q[..., None] if q.ndim == 2 else q
    return out


def linf_distance(a, b) -> dict[str, float]:
    """Largest nodewise absolute difference of ``rho``, ``phi`` and ``q``.

    ``a`` and ``b`` are :class:`Solution` objects or mappings of the three
    fields sampled on the same nodes; the policy is maximized over
    components too.
    """
    fa, fb = _fields(a), _fields(b)
    out = {}
    for key in ("rho", "phi", "q"):
        x, y = np.asarray(fa[key], dtype=float), np.asarray(fb[key], dtype=float)
        if x.shape != y.shape:
            raise ValueError(f"{key}: shape mismatch {x.shape} vs {y.shape}")
        out[key] = float(np.max(np.abs(x - y)))
    return out


def savgol(series, window: int = 11, polyorder: int = 3) -> np.ndarray:
    """Savitzky-Golay smoothing; edge points come from a polynomial fit of the edge window."""
    y = np.asarray(series, dtype=float)
    if window % 2 != 1 or window < 1:
        raise ValueError(f"window must be a positive odd count, got {window}")
    if polyorder < 0 or polyorder >= window:
        raise ValueError(f"polyorder must lie in [0, window), got {polyorder}")
    if y.ndim != 1 or y.size < window:
        raise ValueError(f"need a 1-D series of length >= {window}, got shape {y.shape}")
    return savgol_filter(y, window, polyorder, mode="interp")
