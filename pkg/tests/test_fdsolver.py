import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgdpi import GridField, SpaceTimeGrid, make_problem, uniform_grid
from mfgdpi import fdsolver as fd
from mfgdpi import problems as pb
from mfgdpi.metrics import linf_distance


def periodic_axis(I):
    return np.arange(I) / I


# --- stencils --------------------------------------------------------------------


def test_laplacian_constant_is_zero():
    np.testing.assert_array_equal(fd.discrete_laplacian(np.full((7, 5), 3.0), 0.1), 0.0)


def test_laplacian_spike_pattern():
    I, h = 9, 0.5
    u = np.zeros(I)
    u[4] = 1.0
    out = fd.discrete_laplacian(u, h)
    expected = np.zeros(I)
    expected[3:6] = np.array([1.0, -2.0, 1.0]) / h**2
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


def test_laplacian_sine_second_order():
    errs = []
    for I in (100, 200):
        x = periodic_axis(I)
        out = fd.discrete_laplacian(np.sin(2 * np.pi * x), 1.0 / I)
        errs.append(np.max(np.abs(out + 4 * np.pi**2 * np.sin(2 * np.pi * x))))
    # (2 pi)^4 h^2 / 12 bounds the truncation error
    assert errs[1] <= (2 * np.pi) ** 4 / 200**2 / 12 * 1.01
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.01)


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 2), I=st.integers(3, 20), seed=st.integers(0, 2**31))
def test_laplacian_self_adjoint(d, I, seed):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(2,) + (I,) * d)
    h = 1.0 / I
    lhs = np.sum(fd.discrete_laplacian(u, h) * v)
    rhs = np.sum(u * fd.discrete_laplacian(v, h))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_non_periodic_rejected():
    with pytest.raises(NotImplementedError):
        fd.discrete_laplacian(np.zeros(4), 0.25, periodic=False)


def test_eo_zero_policy_and_constant_density():
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.5, 1.5, (16, 16))
    np.testing.assert_array_equal(fd.eo_divergence(rho, np.zeros((16, 16, 2)), 0.1), 0.0)
    q = np.empty((16, 16, 2))
    q[..., 0], q[..., 1] = 0.7, -1.3
    np.testing.assert_allclose(fd.eo_divergence(np.ones((16, 16)), q, 0.1), 0.0, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(I=st.integers(3, 40), seed=st.integers(0, 2**31))
def test_eo_divergence_is_conservative(I, seed):
    rng = np.random.default_rng(seed)
    out = fd.eo_divergence(rng.uniform(size=I), rng.normal(size=(I, 1)), 1.0 / I)
    assert abs(out.sum()) <= 1e-11 * I


def eo_error(I, d=1):
    x = periodic_axis(I)
    if d == 1:
        rho = 1 + 0.5 * np.sin(2 * np.pi * x)
        q = np.cos(2 * np.pi * x)[:, None]
        exact = 2 * np.pi * (0.5 * np.cos(2 * np.pi * x) ** 2 - (1 + 0.5 * np.sin(2 * np.pi * x)) * np.sin(2 * np.pi * x))
    else:
        X, Y = np.meshgrid(x, x, indexing="ij")
        rho = 1 + 0.5 * np.sin(2 * np.pi * X) * np.cos(2 * np.pi * Y)
        q = np.stack([np.cos(2 * np.pi * X), np.sin(2 * np.pi * Y)], axis=-1)
        drx = np.pi * np.cos(2 * np.pi * X) * np.cos(2 * np.pi * Y)
        dry = -np.pi * np.sin(2 * np.pi * X) * np.sin(2 * np.pi * Y)
        exact = (
            drx * q[..., 0] + rho * (-2 * np.pi * np.sin(2 * np.pi * X))
            + dry * q[..., 1] + rho * (2 * np.pi * np.cos(2 * np.pi * Y))
        )
    return np.max(np.abs(fd.eo_divergence(rho, q, 1.0 / I) - exact))


@pytest.mark.parametrize("d,sizes", [(1, (100, 200, 400)), (2, (25, 50, 100))])
def test_eo_convergence_order(d, sizes):
    errs = np.array([eo_error(I, d) for I in sizes])
    slope = -np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    assert slope >= 0.9


def test_centred_gradient_of_quadratic_is_exact_inside():
    I = 64
    x = -2 + 4 * np.arange(I) / I
    g = fd.centred_gradient(x**2 / 2, 4.0 / I)[..., 0]
    np.testing.assert_allclose(g[1:-1], x[1:-1], rtol=0, atol=1e-12)


def test_upwind_transport_direction():
    I, h = 8, 0.125
    phi = np.arange(I, dtype=float) ** 2
    qpos = np.full((I, 1), 2.0)
    qneg = -qpos
    i = 4
    assert fd.upwind_transport(phi, qpos, h)[i] == pytest.approx(2.0 * (phi[i] - phi[i - 1]) / h)
    assert fd.upwind_transport(phi, qneg, h)[i] == pytest.approx(-2.0 * (phi[i + 1] - phi[i]) / h)


@pytest.mark.parametrize("d,I", [(1, 12), (2, 6)])
def test_sparse_operators_match_array_stencils(d, I):
    rng = np.random.default_rng(d)
    grid = SpaceTimeGrid(d, 0.0, 1.0, I, 2, 1.0)
    st_ = fd._stencil(grid)
    shape = (I,) * d
    u = rng.normal(size=shape)
    q = rng.normal(size=shape + (d,))
    qf = q.reshape(-1, d)
    np.testing.assert_allclose(st_.lap @ u.ravel(), fd.discrete_laplacian(u, grid.h).ravel(), atol=1e-10)
    np.testing.assert_allclose(st_.divergence(qf) @ u.ravel(), fd.eo_divergence(u, q, grid.h).ravel(), atol=1e-10)
    np.testing.assert_allclose(st_.transport(qf) @ u.ravel(), fd.upwind_transport(u, q, grid.h).ravel(), atol=1e-10)
    np.testing.assert_allclose(st_.gradient(u.ravel()), fd.centred_gradient(u, grid.h).reshape(-1, d), atol=1e-10)


# --- implicit steps ------------------------------------------------------------


def traffic_grid(I=50, N=50):
    P = make_problem("traffic")
    return P, uniform_grid(P, I, N)


def test_fp_step_constant_fixed():
    P, g = traffic_grid()
    out = fd.fp_step_implicit(np.full(g.n_space, 0.3), np.zeros(g.n_space), g, P.nu)
    np.testing.assert_allclose(out, 0.3, rtol=0, atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_fp_step_conserves_mass(seed):
    P, g = traffic_grid()
    rng = np.random.default_rng(seed)
    rho = pb.initial_density(P, g.coords())
    q = rng.normal(scale=2.0, size=g.n_space)
    out = fd.fp_step_implicit(rho, q, g, P.nu)
    assert abs(out.sum() - rho.sum()) <= 1e-10


def test_fp_step_pure_transport_moves_against_policy():
    # agents move with velocity -q, so the profile translates left
    def err(I):
        g = SpaceTimeGrid(1, 0.0, 1.0, I, I, 0.25)
        x = g.axis()
        c = 0.8
        rho = np.exp(np.cos(2 * np.pi * x))
        for _ in range(g.N):
            rho = fd.fp_step_implicit(rho, np.full(I, c), g, 0.0)
        exact = np.exp(np.cos(2 * np.pi * (x + c * g.T)))
        return np.max(np.abs(rho - exact))

    e1, e2 = err(200), err(400)
    assert e2 < 0.6 * e1
    assert e2 < 0.2


def test_hjb_step_constant_fixed():
    P = make_problem("example1", d=1)
    g = uniform_grid(P, 40, 10)
    out = fd.hjb_step_implicit(np.full(40, 2.0), np.zeros(40), np.full(40, 0.5), g, P.nu, P)
    np.testing.assert_allclose(out, 2.0, rtol=0, atol=1e-13)


def test_hjb_step_traffic_unit_density():
    P, g = traffic_grid()
    phi = np.sin(2 * np.pi * g.axis())
    n = g.n_space
    out = fd.hjb_step_implicit(phi, np.zeros(n), np.ones(n), g, 0.0, P)
    np.testing.assert_allclose(out, phi, rtol=0, atol=1e-13)


def test_hjb_step_lq_running_cost():
    P = make_problem("lq", boundary="Periodic")
    g = uniform_grid(P, 64, 20)
    rng = np.random.default_rng(2)
    qn = rng.normal(size=64)
    phi_next = rng.normal(size=64)
    out = fd.hjb_step_implicit(phi_next, np.zeros(64), np.ones(64), g, P.nu, P, q_next=qn)
    x = g.axis()
    lhs = out - g.dt * P.nu * fd.discrete_laplacian(out, g.h)
    np.testing.assert_allclose(lhs - phi_next, g.dt * (qn**2 / 2 + x**2 / 2), atol=1e-10)


def test_policy_update_examples():
    P = make_problem("lq", boundary="Periodic")
    g = uniform_grid(P, 64, 2)
    rho = GridField.constant(g, 1.0)
    q = fd.policy_update_fd(GridField.constant(g, 3.0), g, P, rho)
    np.testing.assert_array_equal(q.values, 0.0)
    x = g.axis()
    phi = GridField(g, np.tile(x**2 / 2, (3, 1)))
    q = fd.policy_update_fd(phi, g, P, rho)
    np.testing.assert_allclose(q.values[:, 1:-1], np.tile(x[1:-1], (3, 1)), atol=1e-12)
    qc = fd.policy_update_fd(GridField(g, np.tile(5 * x, (3, 1))), g, P, rho, R=2.0)
    np.testing.assert_allclose(qc.values, 2.0 * (qc.values > 0) - 2.0 * (qc.values < 0))
    assert np.all(np.abs(qc.values) <= 2.0)


# --- sweeps ----------------------------------------------------------------------


def test_policy_iteration_single_step_is_manual_composition():
    P, g = traffic_grid(30, 20)
    cfg = fd.FDConfig(K=1)
    sol, hist = fd.run_policy_iteration(P, g, cfg)
    q0 = np.zeros((g.N + 1, g.n_space, 1))
    rho = fd.solve_fp(P, g, q0)
    phi = fd.solve_hjb(P, g, q0, rho)
    q = fd.policy_update_fd(GridField(g, phi), g, P, GridField(g, rho))
    np.testing.assert_array_equal(sol.rho.values, rho)
    np.testing.assert_array_equal(sol.phi.values, phi)
    np.testing.assert_array_equal(sol.q.values, q.values)
    assert len(hist) == 1 and np.isnan(hist.d_rho[0])
    assert hist.d_q[0] == pytest.approx(np.max(np.abs(q.values)))


def test_policy_iteration_requires_periodic():
    P = make_problem("lq")
    g = SpaceTimeGrid(1, -2.0, 2.0, 10, 4, 1.0, periodic=False)
    with pytest.raises(ValueError):
        fd.run_policy_iteration(P, g, fd.FDConfig(K=1))


def test_linear_solve_failure_reported():
    P, g = traffic_grid(20, 5)
    with pytest.raises(fd.LinearSolveError) as info:
        fd.fp_step_implicit(np.full(g.n_space, np.nan), np.zeros(g.n_space), g, P.nu)
    assert info.value.residual is not None


def test_traffic_pi_tail_and_agreement_with_fixed_point():
    P, g = traffic_grid(100, 100)
    cfg = fd.FDConfig(K=30)
    sol, hist = fd.run_policy_iteration(P, g, cfg)
    change = hist.max_change()
    assert np.all(np.isfinite(change[1:]))
    assert np.nanmin(change) < 1e-4
    # decreasing geometric tail until the round-off floor
    above = change[1:][change[1:] > 1e-12]
    assert np.all(above[1:] <= above[:-1] * 1.1)
    assert np.all(change[1 + above.size :] < 1e-12)
    ref = fd.run_fixed_point(P, g, cfg)
    dist = linf_distance(sol, ref)
    assert max(dist.values()) <= 5e-3


def test_fixed_point_is_a_fixed_point():
    P, g = traffic_grid(40, 40)
    cfg = fd.FDConfig(fp_tol=1e-9)
    sol = fd.run_fixed_point(P, g, cfg)
    assert sol.meta["changes"][-1] < cfg.fp_tol
    phi, q = fd._hjb_nonlinear(P, g, sol.rho.values, cfg)
    rho_new = fd.solve_fp(P, g, q)
    assert np.max(np.abs(rho_new - sol.rho.values)) < cfg.fp_tol
    np.testing.assert_allclose(phi, sol.phi.values, atol=1e-9)


def test_fixed_point_undamped_large_diffusion():
    P = make_problem("example1", d=1, nu=2.0)
    g = uniform_grid(P, 30, 20)
    sol = fd.run_fixed_point(P, g, fd.FDConfig(fp_damping=1.0))
    ch = np.array(sol.meta["changes"])
    assert len(ch) <= 10
    assert np.all(ch[1:] <= ch[:-1])


def test_fixed_point_non_convergence_reported():
    P, g = traffic_grid(20, 10)
    with pytest.raises(fd.ConvergenceError) as info:
        fd.run_fixed_point(P, g, fd.FDConfig(fp_max_iters=2, fp_tol=1e-14))
    assert info.value.change > 0


def test_config_validation():
    with pytest.raises(ValueError):
        fd.FDConfig(K=0)
    with pytest.raises(ValueError):
        fd.FDConfig(fp_damping=0.0)
    with pytest.raises(ValueError):
        fd.FDConfig(linear_tol=0.0)
