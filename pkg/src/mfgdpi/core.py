"""Grids, grid fields and problem descriptions shared by every solver."""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field

import numpy as np


class HamiltonianKind(enum.Enum):
    SEPARABLE_LQ = "SeparableLQ"
    CONGESTION1 = "Congestion1"
    CONGESTION2 = "Congestion2"
    TRAFFIC_FLOW = "TrafficFlow"


class Boundary(enum.Enum):
    PERIODIC = "Periodic"
    SAMPLED_BOX = "SampledBox"


@dataclass(frozen=True)
class MFGProblem:
    """One benchmark instance of the coupled HJB / Fokker-Planck system.

    Parameters
    ----------
    name : str
        Preset name (``lq``, ``example1``, ``example2``, ``traffic``).
    d : int
        Spatial dimension.
    nu : float
        Diffusion coefficient.
    gamma : float
        Congestion weight of the ``ln rho`` interaction (SeparableLQ only).
    beta : float
        Weight of the quadratic potential (SeparableLQ only).
    lo, hi : float
        The domain is the box ``[lo, hi]^d``.
    T : float
        Time horizon.
    kind : HamiltonianKind
    boundary : Boundary
        ``Periodic`` problems can be handed to the finite-difference solvers.
    clamp_rho0 : bool
        Apply ``max(rho0, 0.05)`` to the traffic initial density.
    printed_rho0 : bool
        SeparableLQ only: use the standard Gaussian as initial density
        instead of the stationary Gaussian with variance ``nu / alpha``.
    """

    name: str
    d: int
    nu: float
    T: float
    lo: float
    hi: float
    kind: HamiltonianKind
    boundary: Boundary
    gamma: float = 0.0
    beta: float = 1.0
    clamp_rho0: bool = False
    printed_rho0: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.nu < 0 or self.gamma < 0:
            raise ValueError("nu and gamma must be nonnegative")
        if not self.hi > self.lo:
            raise ValueError(f"empty domain [{self.lo}, {self.hi}]")
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid on ``[0, T] x [lo, hi]^d``.

    Space nodes are the left cell edges ``x_i = lo + i*h``, ``i = 0..I-1``;
    on periodic problems node ``I`` is identified with node ``0``.  Time
    nodes are ``t_n = n*dt``, ``n = 0..N``.
    """

    d: int
    lo: float
    hi: float
    I: int
    N: int
    T: float
    periodic: bool = True

    def __post_init__(self):
        if self.I < 2:
            raise ValueError(f"need at least 2 space nodes per axis, got I={self.I}")
        if self.N < 1:
            raise ValueError(f"need at least 1 time interval, got N={self.N}")
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.I

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        """Spatial array shape, one axis per dimension."""
        return (self.I,) * self.d

    @property
    def n_space(self) -> int:
        return self.I**self.d

    def axis(self) -> np.ndarray:
        return self.lo + self.h * np.arange(self.I)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 1)

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(I**d, d)`` in row-major order (read-only)."""
        return _coords(self.d, self.lo, self.hi, self.I)

    def index_to_coord(self, i) -> np.ndarray:
        i = np.atleast_1d(np.asarray(i))
        return self.lo + self.h * i

    def coord_to_index(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.rint((x - self.lo) / self.h).astype(int)

    def flat_index(self, i) -> int:
        """Row-major flat index of a spatial multi-index.

        Periodic grids wrap every component modulo ``I``; otherwise an
        out-of-range component raises ``IndexError``.
        """
        i = np.atleast_1d(np.asarray(i, dtype=int))
        if i.shape != (self.d,):
            raise IndexError(f"expected a {self.d}-component index, got {i.tolist()}")
        if self.periodic:
            i = np.mod(i, self.I)
        elif np.any(i < 0) or np.any(i >= self.I):
            raise IndexError(f"index {i.tolist()} outside grid of size {self.I}")
        return int(np.ravel_multi_index(tuple(i), self.shape))


@functools.lru_cache(maxsize=32)
def _coords(d: int, lo: float, hi: float, I: int) -> np.ndarray:
    axis = lo + (hi - lo) / I * np.arange(I)
    axes = np.meshgrid(*([axis] * d), indexing="ij")
    out = np.stack([a.ravel() for a in axes], axis=-1)
    out.flags.writeable = False
    return out


def uniform_grid(problem: MFGProblem, I: int, N: int) -> SpaceTimeGrid:
    """Uniform space-time grid with ``I`` nodes per axis and ``N`` time steps."""
    return SpaceTimeGrid(
        d=problem.d,
        lo=problem.lo,
        hi=problem.hi,
        I=I,
        N=N,
        T=problem.T,
        periodic=problem.periodic,
    )


@dataclass
class GridField:
    """Values on every space-time node, optionally with several channels.

    ``values`` has shape ``(N+1, I**d)`` for scalar fields and
    ``(N+1, I**d, channels)`` otherwise.
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    channels: int = 1

    def __post_init__(self):
        expected = (self.grid.N + 1, self.grid.n_space)
        if self.channels > 1:
            expected = expected + (self.channels,)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != expected:
            raise ValueError(f"field shape {self.values.shape} != {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid, channels: int = 1) -> GridField:
        shape = (grid.N + 1, grid.n_space) + ((channels,) if channels > 1 else ())
        return cls(grid, np.zeros(shape), channels)

    @classmethod
    def constant(cls, grid: SpaceTimeGrid, value: float, channels: int = 1) -> GridField:
        f = cls.zeros(grid, channels)
        f.values[...] = value
        return f

    def eval(self, n: int, i):
        if not 0 <= n <= self.grid.N:
            raise IndexError(f"time index {n} outside 0..{self.grid.N}")
        return self.values[n, self.grid.flat_index(i)]

    def set(self, n: int, i, value) -> None:
        if not 0 <= n <= self.grid.N:
            raise IndexError(f"time index {n} outside 0..{self.grid.N}")
        value = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(value)):
            raise ValueError("refusing to store a non-finite value")
        self.values[n, self.grid.flat_index(i)] = value

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def copy(self) -> GridField:
        return GridField(self.grid, self.values.copy(), self.channels)


def eval_field(f: GridField, n: int, i):
    """Value of ``f`` at time node ``n`` and spatial multi-index ``i``."""
    return f.eval(n, i)


@dataclass
class Solution:
    """Density, value function and policy on a common grid."""

    rho: GridField
    phi: GridField
    q: GridField
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        g = self.rho.grid
        if self.phi.grid != g or self.q.grid != g:
            raise ValueError("rho, phi and q must share one grid")
        if self.q.channels != g.d:
            raise ValueError(f"policy needs {g.d} channels, has {self.q.channels}")

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.rho.grid

    def q_array(self) -> np.ndarray:
        """Policy values as ``(N+1, I**d, d)`` regardless of ``d``."""
        q = self.q.values
        return q[..., None] if q.ndim == 2 else q
