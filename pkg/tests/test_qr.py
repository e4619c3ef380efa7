import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from esreg.core import Dataset, DegenerateDesign, NotConverged, SolverControl
from esreg.qr import (
    check_loss,
    default_bandwidth,
    small_bandwidth,
    smoothed_check_loss,
    smoothed_qr_fit,
    smoothed_qr_gradient,
    smoothed_qr_objective,
)
from oracles import normal_quantile


def test_check_loss_examples():
    assert check_loss(2.0, 0.5) == pytest.approx(1.0)
    assert check_loss(-1.0, 0.1) == pytest.approx(0.9)
    assert check_loss(0.0, 0.3) == 0.0


@given(st.floats(-1e3, 1e3), st.floats(0.01, 0.99))
def test_check_loss_nonnegative(u, alpha):
    v = float(check_loss(u, alpha))
    assert v >= 0
    assert (v == 0) == (u == 0)


@given(st.floats(-50, 50), st.floats(0.01, 0.99), st.floats(0.01, 2))
def test_smoothed_loss_dominates_check_loss(u, alpha, h):
    # convolving a convex function with a centred kernel can only raise it
    assert smoothed_check_loss(u, alpha, h) >= check_loss(u, alpha) - 1e-12
    assert smoothed_check_loss(u, alpha, h) <= check_loss(u, alpha) + h / np.sqrt(2 * np.pi) + 1e-12


def test_default_bandwidth():
    assert default_bandwidth(10**9, 1) == 0.05
    n, p = 500, 10
    assert default_bandwidth(n, p) == pytest.approx(((p + np.log(n)) / n) ** 0.4)


def test_gradient_matches_finite_differences(rng):
    n, p = 300, 4
    x = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    y = x @ rng.standard_normal(p) + rng.standard_t(3, n)
    h = 0.3
    for _ in range(20):
        b = rng.standard_normal(p)
        g = smoothed_qr_gradient(b, x, y, 0.3, h)
        fd = np.empty(p)
        for j in range(p):
            e = np.zeros(p)
            e[j] = 1e-5
            fd[j] = (smoothed_qr_objective(b + e, x, y, 0.3, h) - smoothed_qr_objective(b - e, x, y, 0.3, h)) / 2e-5
        assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g) + 1e-10


def test_median_of_small_sample():
    y = np.array([1.0, 2, 3, 4, 5])
    data = Dataset(np.ones((5, 1)), y)
    fit = smoothed_qr_fit(data, 0.5, bandwidth=0.01)
    assert abs(fit.beta[0] - 3.0) <= 2 * 0.01
    assert fit.diagnostics.converged


def test_constant_response():
    rng = np.random.default_rng(1)
    data = Dataset.with_intercept(rng.uniform(size=(50, 2)), np.full(50, 4.0))
    fit = smoothed_qr_fit(data, 0.5)
    assert np.allclose(fit.beta, [4.0, 0.0, 0.0], atol=1e-6)
    # away from the median the smoothed minimiser sits at c + h z_alpha
    for alpha in (0.1, 0.9):
        fit = smoothed_qr_fit(data, alpha)
        expect = 4.0 + fit.bandwidth * normal_quantile(alpha)
        assert np.allclose(fit.beta, [expect, 0.0, 0.0], atol=1e-6)
    fit = smoothed_qr_fit(data, 0.1, bandwidth=1e-4)
    assert np.allclose(fit.beta, [4.0, 0.0, 0.0], atol=2e-4)


def test_large_sample_consistency():
    rng = np.random.default_rng(11)
    n = 50_000
    z = rng.uniform(0, 1, n)
    y = 1 + 2 * z + rng.standard_normal(n)
    fit = smoothed_qr_fit(Dataset.with_intercept(z, y), 0.1)
    z10 = normal_quantile(0.1)
    assert z10 == pytest.approx(-1.2815516, abs=1e-6)
    assert np.allclose(fit.beta, [1 + z10, 2.0], atol=0.03)


def test_converged_means_small_gradient(rng):
    n = 400
    z = rng.uniform(size=(n, 3))
    y = z @ [1.0, -1.0, 0.5] + rng.standard_normal(n)
    data = Dataset.with_intercept(z, y)
    control = SolverControl(tol=1e-9)
    fit = smoothed_qr_fit(data, 0.25, control=control)
    g = smoothed_qr_gradient(fit.beta, data.x, data.y, 0.25, fit.bandwidth)
    assert fit.diagnostics.converged
    assert np.linalg.norm(g) <= 1e-9
    assert fit.diagnostics.final_gradient_norm == pytest.approx(np.linalg.norm(g), rel=1e-6, abs=1e-15)


def test_quantile_level_monotone_intercept_only(rng):
    y = rng.standard_t(4, 500)
    data = Dataset(np.ones((500, 1)), y)
    h = 0.05
    fits = [smoothed_qr_fit(data, a, bandwidth=h).beta[0] for a in (0.05, 0.1, 0.3, 0.5, 0.8, 0.95)]
    assert all(a <= b + 2 * h for a, b in zip(fits, fits[1:]))


@given(st.floats(-5, 5), st.floats(0.2, 20), st.integers(0, 1000))
def test_location_scale_equivariance(a, c, seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(size=(150, 2))
    y = z @ [1.0, 2.0] + rng.standard_normal(150)
    base = smoothed_qr_fit(Dataset.with_intercept(z, y), 0.3, bandwidth=0.2, control=SolverControl(tol=1e-10))
    moved = smoothed_qr_fit(
        Dataset.with_intercept(z, a + c * y), 0.3, bandwidth=0.2 * c, control=SolverControl(tol=1e-10 * c)
    )
    expect = c * base.beta
    expect[0] += a
    assert np.allclose(moved.beta, expect, atol=1e-6 * (1 + c + abs(a)))


def test_not_converged_warns():
    rng = np.random.default_rng(3)
    data = Dataset.with_intercept(rng.uniform(size=(100, 2)), rng.standard_normal(100))
    with pytest.warns(NotConverged):
        fit = smoothed_qr_fit(data, 0.5, control=SolverControl(tol=1e-14, max_iter=2))
    assert not fit.diagnostics.converged


def test_rank_deficient_and_bad_arguments():
    x = np.column_stack([np.ones(6), np.arange(6.0), np.arange(6.0)])
    with pytest.raises(DegenerateDesign):
        smoothed_qr_fit(Dataset(x, np.arange(6.0)), 0.5)
    data = Dataset(np.ones((3, 1)), np.arange(3.0))
    with pytest.raises(ValueError):
        smoothed_qr_fit(data, 1.0)
    with pytest.raises(ValueError):
        smoothed_qr_fit(data, 0.5, bandwidth=0.0)


def test_small_bandwidth():
    assert small_bandwidth(np.array([0.0, 2.0])) == pytest.approx(0.01)
    assert small_bandwidth(np.ones(4)) == 0.01
