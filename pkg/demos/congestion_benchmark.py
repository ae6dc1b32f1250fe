"""Deep policy iteration against the finite-difference fixed point.

Example 1 has a congestion Hamiltonian |p|^2 / (2(1 + 4 rho)) and zero
terminal cost, so the value function and policy vanish and the density
just diffuses.  The networks do not know this; the sup-norm distances to
the fixed-point solution on a 50 x 50 grid show them finding it.

    python3 demos/congestion_benchmark.py [iterations]
"""

import sys

import numpy as np

from mfgdpi import dpi, make_problem, uniform_grid
from mfgdpi import fdsolver as fd
from mfgdpi.metrics import savgol

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 4000

problem = make_problem("example1")
grid = uniform_grid(problem, 50, 50)
ref = fd.run_fixed_point(problem, grid)
print(f"fixed point: {len(ref.meta['changes'])} sweeps, max |phi| = {np.abs(ref.phi.values).max():.1e}")

cfg = dpi.preset_config("example1", d=2, K=iterations, eval_every=100)
state, hist = dpi.dpi_train(problem, cfg, dpi.Reference("solution", problem, ref))

keys = ("linf_rho", "linf_phi", "linf_q")
# smoothing needs at least one full window of evaluations
smooth = {k: np.asarray(getattr(hist, k)) for k in keys}
if len(hist.eval_iter) >= 11:
    smooth = {k: savgol(v) for k, v in smooth.items()}
for i in range(0, len(hist.eval_iter), max(1, len(hist.eval_iter) // 10)):
    row = "  ".join(f"{k[5:]} {smooth[k][i]:.3e}" for k in smooth)
    print(f"  iter {hist.eval_iter[i] + 1:6d}  {row}")
