import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgdpi import GridField, Solution, SpaceTimeGrid, eval_field, make_problem, uniform_grid


def test_grid_steps_traffic_scale():
    g = uniform_grid(make_problem("traffic"), 200, 200)
    assert g.h == pytest.approx(0.005, abs=1e-15)
    assert g.dt == pytest.approx(0.005, abs=1e-15)


def test_grid_steps_coarse_lq():
    g = uniform_grid(make_problem("lq"), 4, 1)
    assert g.h == 1.0 and g.dt == 1.0
    np.testing.assert_array_equal(g.axis(), [-2.0, -1.0, 0.0, 1.0])


def test_grid_midpoint_node():
    g = uniform_grid(make_problem("traffic"), 100, 100)
    assert g.index_to_coord(50)[0] == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("I,N", [(0, 10), (1, 10), (10, 0)])
def test_grid_rejects_degenerate_sizes(I, N):
    with pytest.raises(ValueError):
        uniform_grid(make_problem("traffic"), I, N)


def test_coords_row_major():
    g = SpaceTimeGrid(2, 0.0, 1.0, 4, 1, 1.0)
    c = g.coords()
    assert c.shape == (16, 2)
    # last axis varies fastest
    np.testing.assert_allclose(c[1], [0.0, 0.25])
    np.testing.assert_allclose(c[4], [0.25, 0.0])
    assert not c.flags.writeable


@settings(max_examples=50, deadline=None)
@given(d=st.integers(1, 3), I=st.integers(2, 12), data=st.data())
def test_index_coordinate_round_trip(d, I, data):
    g = SpaceTimeGrid(d, -2.0, 2.0, I, 3, 1.0)
    idx = np.array(data.draw(st.lists(st.integers(0, I - 1), min_size=d, max_size=d)))
    np.testing.assert_array_equal(g.coord_to_index(g.index_to_coord(idx)), idx)


@settings(max_examples=50, deadline=None)
@given(d=st.integers(1, 2), I=st.integers(2, 8), shift=st.integers(-3, 3), data=st.data())
def test_periodic_wrap(d, I, shift, data):
    g = SpaceTimeGrid(d, 0.0, 1.0, I, 2, 1.0)
    rng = np.random.default_rng(I + d)
    f = GridField(g, rng.normal(size=(3, g.n_space)))
    idx = np.array(data.draw(st.lists(st.integers(0, I - 1), min_size=d, max_size=d)))
    k = data.draw(st.integers(0, d - 1))
    moved = idx.copy()
    moved[k] += shift * I
    assert eval_field(f, 1, moved) == eval_field(f, 1, idx)


def test_wrap_index_I_is_zero():
    g = SpaceTimeGrid(1, 0.0, 1.0, 5, 1, 1.0)
    f = GridField(g, np.arange(12.0).reshape(2, 6)[:, :5])
    assert eval_field(f, 0, 5) == eval_field(f, 0, 0)


def test_sampled_box_out_of_range():
    g = SpaceTimeGrid(1, 0.0, 1.0, 5, 1, 1.0, periodic=False)
    f = GridField.zeros(g)
    with pytest.raises(IndexError):
        eval_field(f, 0, 5)
    with pytest.raises(IndexError):
        eval_field(f, 0, -1)


def test_constant_field_and_set_round_trip():
    g = SpaceTimeGrid(2, 0.0, 1.0, 3, 2, 1.0)
    f = GridField.constant(g, 2.5)
    assert eval_field(f, 2, (1, 2)) == 2.5
    f.set(1, (2, 0), -7.0)
    assert eval_field(f, 1, (2, 0)) == -7.0
    assert f.is_finite()


def test_field_rejects_non_finite():
    g = SpaceTimeGrid(1, 0.0, 1.0, 3, 1, 1.0)
    v = np.zeros((2, 3))
    v[1, 1] = np.nan
    with pytest.raises(ValueError):
        GridField(g, v)
    f = GridField.zeros(g)
    with pytest.raises(ValueError):
        f.set(0, 0, np.inf)


def test_field_shape_checked():
    g = SpaceTimeGrid(1, 0.0, 1.0, 3, 1, 1.0)
    with pytest.raises(ValueError):
        GridField(g, np.zeros((3, 3)))


def test_solution_policy_channels():
    g = SpaceTimeGrid(2, 0.0, 1.0, 3, 1, 1.0)
    rho, phi = GridField.zeros(g), GridField.zeros(g)
    with pytest.raises(ValueError):
        Solution(rho, phi, GridField.zeros(g))
    sol = Solution(rho, phi, GridField.zeros(g, channels=2))
    assert sol.q_array().shape == (2, 9, 2)


def test_problem_validation():
    with pytest.raises(ValueError):
        make_problem("lq", nu=-1.0)
    with pytest.raises(KeyError):
        make_problem("nope")
