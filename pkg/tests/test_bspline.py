import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BSpline

from fofsparse.bspline import Grid, eval_basis, grid_from_points, make_basis, make_grid


def test_cubic_twenty_functions_knots():
    b = make_basis((0.0, 1.0), 20, 4)
    np.testing.assert_allclose(b.interior_knots, np.arange(1, 17) / 17, rtol=0, atol=1e-15)
    assert b.knots.size == 24
    assert np.all(b.knots[:4] == 0) and np.all(b.knots[-4:] == 1)


def test_order_one_two_functions():
    b = make_basis((0.0, 1.0), 2, 1)
    np.testing.assert_array_equal(b.interior_knots, [0.5])
    np.testing.assert_array_equal(eval_basis(b, [0.25]), [[1.0], [0.0]])
    np.testing.assert_array_equal(eval_basis(b, [0.75, 1.0]), [[0.0, 0.0], [1.0, 1.0]])


def test_cubic_five_functions_single_knot():
    b = make_basis((0.0, 1.0), 5, 4)
    np.testing.assert_array_equal(b.interior_knots, [0.5])


# Values from an exact rational Cox-de Boor recursion, confirmed by scipy.
@pytest.mark.parametrize(
    "x, expected",
    [
        (0.5, [0.0, 1 / 4, 1 / 2, 1 / 4, 0.0]),
        (0.25, [1 / 8, 19 / 32, 1 / 4, 1 / 32, 0.0]),
        (0.3, [8 / 125, 279 / 500, 81 / 250, 27 / 500, 0.0]),
    ],
)
def test_cubic_hand_values(x, expected):
    b = make_basis((0.0, 1.0), 5, 4)
    np.testing.assert_allclose(eval_basis(b, [x])[:, 0], expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize("order, num_basis", [(1, 3), (2, 6), (3, 7), (4, 20), (5, 9)])
def test_matches_scipy(order, num_basis):
    b = make_basis((-1.0, 2.0), num_basis, order)
    x = np.linspace(-1.0, 2.0, 157)[:-1]
    ref = BSpline.design_matrix(x, b.knots, order - 1).toarray().T
    np.testing.assert_allclose(eval_basis(b, x), ref, rtol=0, atol=1e-13)


@settings(max_examples=60, deadline=None)
@given(
    order=st.integers(1, 6),
    extra=st.integers(1, 15),
    a=st.floats(-5, 5),
    width=st.floats(0.1, 10),
    u=st.lists(st.floats(0, 1), min_size=1, max_size=20),
)
def test_partition_support_nonnegativity(order, extra, a, width, u):
    b = make_basis((a, a + width), order + extra, order)
    x = a + width * np.asarray(u)
    x = np.clip(x, a, a + width)
    B = eval_basis(b, x)
    assert B.shape == (order + extra, x.size)
    assert np.all(B >= 0)
    np.testing.assert_allclose(B.sum(axis=0), 1.0, atol=1e-12)
    for m in range(b.num_basis):
        lo, hi = b.support(m)
        outside = (x < lo) | (x > hi)
        assert np.all(B[m, outside] == 0)


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        make_basis((0, 1), 4, 4)
    with pytest.raises(ValueError):
        make_basis((1, 1), 6, 4)
    with pytest.raises(ValueError):
        make_basis((0, 1), 6, 0)
    b = make_basis((0, 1), 6, 4)
    with pytest.raises(ValueError, match="outside"):
        eval_basis(b, [0.5, 1.01])


def test_grid_weights():
    g = make_grid((0.0, 1.0), 2)
    np.testing.assert_array_equal(g.points, [0.0, 1.0])
    np.testing.assert_array_equal(g.weights, [0.5, 0.5])
    g = make_grid((0.0, 1.0), 101)
    np.testing.assert_allclose(g.weights[1:-1], 0.01, rtol=1e-12)
    np.testing.assert_allclose(g.weights[[0, -1]], 0.005, rtol=1e-12)


@given(st.integers(2, 500), st.floats(-3, 3), st.floats(0.01, 50))
def test_grid_integrates_constants(n, a, width):
    g = make_grid((a, a + width), n)
    assert abs(g.integrate(np.ones(n)) - width) <= 1e-12 * width


def test_uneven_grid_and_validation():
    g = grid_from_points([0.0, 0.1, 0.5, 1.0])
    np.testing.assert_allclose(g.weights, [0.05, 0.25, 0.45, 0.25])
    with pytest.raises(ValueError):
        grid_from_points([0.0, 0.5, 0.5])
    with pytest.raises(ValueError):
        Grid(np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        make_grid((0, 1), 1)
