import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.interpolate import BSpline

from fofsparse import make_basis, make_grid
from fofsparse.bspline import grid_from_points
from fofsparse.model import (
    FunctionalSample,
    TensorKernel,
    build_ar_pairs,
    build_design,
    center,
    logh_inverse,
    logh_transform,
    predict,
)

from conftest import random_problem


def sample(values, G=None, domain=(0.0, 1.0)):
    values = np.atleast_2d(values)
    return FunctionalSample(values, make_grid(domain, values.shape[1]))


def test_center_examples():
    f = np.sin(np.linspace(0, 3, 7))
    assert np.all(center(sample([f, f])).values == 0)
    np.testing.assert_array_equal(center(sample([f, -f])).values, [f, -f])
    X = np.random.default_rng(0).standard_normal((13, 20)) * 5 + 3
    c = center(sample(X))
    np.testing.assert_allclose(c.values.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(c.uncentered().values, X, rtol=1e-14)
    assert c.centered and c.subset([0, 1]).centered
    with pytest.raises(ValueError):
        center(sample([f]))


def test_sample_validation():
    with pytest.raises(ValueError):
        FunctionalSample(np.zeros((2, 3)), make_grid((0, 1), 4))
    with pytest.raises(ValueError):
        FunctionalSample(np.array([[0.0, np.nan]]), make_grid((0, 1), 2))


def test_design_brute_force():
    rng = np.random.default_rng(3)
    for n, G, M, L, d in [(1, 2, 2, 2, 1), (2, 5, 3, 4, 2), (3, 7, 5, 6, 3)]:
        grid_t = grid_from_points(np.concatenate([[0.0], np.sort(rng.uniform(0, 1, G - 2)), [1.0]]))
        grid_s = make_grid((0.0, 2.0), G + 1)
        bt = make_basis((0, 1), M, d)
        bs = make_basis((0, 2), L, d)
        X = rng.standard_normal((n, G))
        Y = rng.standard_normal((n, G + 1))
        prob = build_design(FunctionalSample(X, grid_t), FunctionalSample(Y, grid_s), bt, bs)
        Z = np.zeros((n * (G + 1), M * L))
        for i in range(n):
            for gs in range(G + 1):
                for m in range(M):
                    for l in range(L):
                        acc = 0.0
                        for g in range(G):
                            phi = BSpline.design_matrix([grid_t.points[g]], bt.knots, d - 1).toarray()[0, m]
                            acc += X[i, g] * grid_t.weights[g] * phi
                        theta = BSpline.design_matrix([min(grid_s.points[gs], 2 - 1e-14)], bs.knots, d - 1).toarray()[0, l]
                        Z[i + n * gs, m + l * M] = acc * theta
        np.testing.assert_allclose(prob.Z, Z, rtol=1e-12, atol=1e-14)
        np.testing.assert_array_equal(prob.y, Y.ravel(order="F"))
        np.testing.assert_allclose(prob.gram, Z.T @ Z, rtol=1e-11, atol=1e-13)
        np.testing.assert_allclose(prob.zty, Z.T @ prob.y, rtol=1e-11, atol=1e-13)
        idx = np.array([0, M * L - 1, M])
        np.testing.assert_array_equal(prob.columns(idx), prob.Z[:, idx])


def test_design_zero_covariate_and_shape():
    grid = make_grid((0, 1), 100)
    bt = make_basis((0, 1), 20, 4)
    x = FunctionalSample(np.zeros((50, 100)), grid)
    y = FunctionalSample(np.ones((50, 100)), grid)
    p = build_design(x, y, bt, bt)
    assert p.Z.shape == (5000, 400)
    assert np.all(p.Z == 0)
    with pytest.raises(ValueError, match="covariate has 50"):
        build_design(x, y.subset(range(10)), bt, bt)
    with pytest.raises(ValueError, match="response grid"):
        build_design(x, y, bt, make_basis((0, 2), 20, 4))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_kronecker_and_predict_consistency(seed):
    prob, _ = random_problem(seed, n=4, G=12, M=6, L=7)
    rng = np.random.default_rng(seed)
    Psi = rng.standard_normal((6, 7))
    psi = Psi.ravel(order="F")
    direct = (prob.scores @ Psi @ prob.response_basis).ravel(order="F")
    zp = prob.Z @ psi
    np.testing.assert_allclose(zp, direct, rtol=1e-12, atol=1e-12 * np.abs(direct).max())
    np.testing.assert_allclose(prob.matvec(psi), zp, rtol=1e-12, atol=1e-12 * np.abs(zp).max())


def test_predict_residual_matches_design():
    rng = np.random.default_rng(5)
    grid = make_grid((0, 1), 15)
    bt, bs = make_basis((0, 1), 7, 4), make_basis((0, 1), 5, 3)
    x = FunctionalSample(rng.standard_normal((6, 15)), grid)
    y = FunctionalSample(rng.standard_normal((6, 15)), grid)
    prob = build_design(x, y, bt, bs)
    psi = rng.standard_normal(35)
    r1 = np.linalg.norm(prob.y - prob.matvec(psi))
    r2 = np.linalg.norm(y.values - predict(prob.kernel(psi), x, grid).values)
    assert abs(r1 - r2) <= 1e-10 * max(1.0, r1)


def test_predict_zero_kernel_returns_mean():
    grid = make_grid((0, 1), 30)
    rng = np.random.default_rng(0)
    x = center(FunctionalSample(rng.standard_normal((5, 30)), grid))
    y = center(FunctionalSample(rng.standard_normal((5, 30)) + 2, grid))
    bt = make_basis((0, 1), 6, 4)
    p = build_design(x, y, bt, bt)
    k = p.kernel(np.zeros(36))
    out = predict(k, x.uncentered(), grid).values
    np.testing.assert_allclose(out, np.tile(y.mean_curve, (5, 1)))
    assert np.all(predict(TensorKernel(np.zeros((6, 6)), bt, bt), x, grid).values == 0)


def test_predict_basis_gram():
    G = 4001
    grid = make_grid((0, 1), G)
    bt = make_basis((0, 1), 7, 4)
    bs = make_basis((0, 1), 5, 3)
    m, mp, l = 2, 3, 1
    x = FunctionalSample(bt(grid.points)[m][None, :], grid)
    Psi = np.zeros((7, 5))
    Psi[mp, l] = 1.0
    out = predict(TensorKernel(Psi, bt, bs), x, grid).values[0]
    fm = BSpline(bt.knots, np.eye(7)[m], 3)
    fmp = BSpline(bt.knots, np.eye(7)[mp], 3)
    gram = quad(lambda t: fm(t) * fmp(t), 0, 1, points=bt.interior_knots, epsabs=1e-14)[0]
    np.testing.assert_allclose(out, gram * bs(grid.points)[l], atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_predict_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    grid = make_grid((0, 1), 20)
    bt = make_basis((0, 1), 6, 4)
    k = TensorKernel(rng.standard_normal((6, 6)), bt, bt)
    x1, x2 = rng.standard_normal((2, 3, 20))
    lhs = predict(k, FunctionalSample(a * x1 + b * x2, grid), grid).values
    rhs = a * predict(k, FunctionalSample(x1, grid), grid).values + b * predict(k, FunctionalSample(x2, grid), grid).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))


def test_predict_domain_mismatch():
    bt = make_basis((0, 1), 6, 4)
    k = TensorKernel(np.zeros((6, 6)), bt, bt)
    with pytest.raises(ValueError):
        predict(k, sample(np.zeros((1, 5)), domain=(0, 2)), make_grid((0, 1), 5))


def test_ar_pairs():
    s = sample(np.arange(12.0).reshape(3, 4))
    x, y = build_ar_pairs(s)
    np.testing.assert_array_equal(x.values, s.values[:2])
    np.testing.assert_array_equal(y.values, s.values[1:])
    assert x.grid is s.grid and y.grid is s.grid
    assert build_ar_pairs(sample(np.zeros((375, 3))))[0].n == 374
    x, y = build_ar_pairs(sample(np.ones((5, 3))))
    np.testing.assert_array_equal(x.values, y.values)
    assert build_ar_pairs(sample(np.zeros((2, 3))))[0].n == 1
    with pytest.raises(ValueError):
        build_ar_pairs(sample(np.zeros((1, 3))))


def test_logh_closed_form_and_round_trip():
    grid = make_grid((0, 1), 100)
    y = logh_transform(FunctionalSample(np.zeros((1, 100)), grid))
    np.testing.assert_allclose(y.values[0], 1 - np.exp(-grid.points), rtol=0, atol=1e-15)
    z = np.sin(4 * grid.points)[None, :] + np.array([[0.0], [0.5], [-1.0]])
    back = logh_inverse(logh_transform(FunctionalSample(z, grid)))
    assert np.max(np.abs(back.values - z)) <= 1e-6


@settings(max_examples=30, deadline=None)
# exp(3) keeps the cumulative hazard far below the ~37 where 1 - exp(-F) rounds to 1.
@given(st.lists(st.floats(-5, 3), min_size=3, max_size=40))
def test_logh_monotone(vals):
    grid = make_grid((0, 1), len(vals))
    y = logh_transform(FunctionalSample(np.array([vals]), grid)).values[0]
    assert np.all(np.diff(y) > 0)
    assert y[0] == 0 and np.all(y < 1)


def test_logh_errors():
    grid = make_grid((0, 1), 5)
    with pytest.raises(OverflowError):
        logh_transform(FunctionalSample(np.full((1, 5), 800.0), grid))
    with pytest.raises(ValueError, match="increasing"):
        logh_inverse(FunctionalSample(np.array([[0.1, 0.2, 0.15, 0.3, 0.4]]), grid))
    with pytest.raises(ValueError, match=r"\[0, 1\)"):
        logh_inverse(FunctionalSample(np.array([[0.1, 0.2, 0.3, 0.4, 1.0]]), grid))
