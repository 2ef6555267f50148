import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gauduchon.eigen import (check_inequalities, euler_sums, f_values, in_gamma, p_inverse, p_map,
                             relative_eigenvalues, sample_gamma)
from gauduchon.forms import p_alpha_inverse
from gauduchon.grid import TorusGrid
from gauduchon.scenarios import manufactured_problem
from gauduchon.solver import assemble_tilde_omega, continuation_solve

mu_vectors = st.integers(2, 3).flatmap(
    lambda n: arrays(float, n, elements=st.floats(1e-3, 10.0, allow_nan=False)))


def lam_from_mu(mu):
    return np.sort(p_inverse(mu))[::-1]


def test_p_map_examples():
    assert np.allclose(p_map([1.0, 1.0, 1.0]), [1, 1, 1])
    assert np.allclose(p_map([3.0, 1.0]), [1, 3])
    with pytest.raises(ValueError):
        p_map([1.0])


@given(mu=mu_vectors)
def test_round_trip_and_ordering(mu):
    lam = lam_from_mu(mu)
    back = p_map(lam)
    assert np.abs(p_map(p_inverse(mu)) - mu).max() <= 1e-14 * max(1.0, np.abs(mu).max())
    assert np.all(np.diff(back) >= -1e-14 * np.abs(back).max())
    assert in_gamma(lam)


def test_f_values_examples():
    fv = f_values([1.0, 1.0, 1.0])
    assert np.allclose(fv.grad_f_tilde, 1) and np.allclose(fv.grad_f, 1)
    assert np.dot([1, 1, 1], fv.grad_f) == pytest.approx(3)
    fv = f_values([3.0, 1.0])
    assert np.allclose(fv.mu, [1, 3])
    assert np.allclose(fv.grad_f, [1 / 3, 1])
    assert np.dot([3, 1], fv.grad_f) == pytest.approx(2)
    assert fv.f == pytest.approx(np.log(3))
    with pytest.raises(ValueError):
        f_values([5.0, -1.0, -1.0])


@given(mu=mu_vectors)
def test_gradient_finite_differences(mu):
    lam = lam_from_mu(mu)
    fv = f_values(lam)
    # the step follows the distance to the boundary of Gamma
    h = 1e-5 * fv.mu.min()
    for k in range(lam.size):
        e = np.zeros_like(lam)
        e[k] = h
        fd = (f_values(lam + e).f - f_values(lam - e).f) / (2 * h)
        assert fd == pytest.approx(fv.grad_f[k], rel=1e-6, abs=1e-9)
    assert np.all(fv.grad_f > 0)


@pytest.mark.parametrize("n", [2, 3])
def test_euler_identity_and_inequalities_sweep(n):
    lam = sample_gamma(np.random.default_rng(n), n, 100_000)
    s1, s2 = euler_sums(lam)
    assert np.abs(s1 - n).max() <= 1e-12
    assert np.abs(s2 - n).max() <= 1e-12
    report = check_inequalities(lam)
    assert report["all_ok"], report
    for name in ("fk_lower", "fk_upper", "ftilde_k_upper"):
        assert report[name]["violations"] == 0


def test_inequality_examples():
    sym = check_inequalities(np.array([1.0, 1.0, 1.0]))
    assert sym["all_ok"]
    # at the symmetric point f_k = f~_1 = 1 is tight, f~_1/(n-1) = 1/2 is not
    assert sym["fk_upper"]["min_slack"] == pytest.approx(0.0)
    assert sym["fk_lower"]["min_slack"] == pytest.approx(0.5)
    assert sym["ftilde_k_upper"]["min_slack"] == pytest.approx(1.0)
    assert sym["mu_ascending"]["min_slack"] == pytest.approx(0.0)
    strict = check_inequalities(np.array([10.0, 1.0, 1.0]))
    assert strict["all_ok"]
    for name in ("positive_lower", "fk_lower", "fk_upper", "ftilde_k_upper"):
        assert strict[name]["min_slack"] > 0
    with pytest.raises(ValueError):
        check_inequalities(np.array([1.0, 2.0, 3.0]))


@given(mu1=mu_vectors, data=st.data())
def test_concavity(mu1, data):
    n = mu1.size
    mu2 = data.draw(arrays(float, n, elements=st.floats(1e-3, 10.0)))
    t = data.draw(st.floats(0.0, 1.0))
    x, y = p_inverse(mu1), p_inverse(mu2)
    mid = f_values(t * x + (1 - t) * y).f
    assert mid >= t * f_values(x).f + (1 - t) * f_values(y).f - 1e-12


def test_sampling_is_in_gamma(rng):
    lam = sample_gamma(rng, 3, 1000)
    assert np.all(in_gamma(lam))
    assert np.all(np.diff(lam, axis=-1) <= 0)


def test_relative_eigenvalues(rng):
    a = rng.standard_normal((4, 3, 3)) + 1j * rng.standard_normal((4, 3, 3))
    alpha = a @ np.conj(np.swapaxes(a, -1, -2)) + np.eye(3)
    g = 2.0 * alpha
    assert np.allclose(relative_eigenvalues(g, alpha), 2.0)


def test_consistent_with_solver():
    grid = TorusGrid(3, 4)
    prob, _ = manufactured_problem(grid)
    phi = continuation_solve(prob).phi
    tw = assemble_tilde_omega(phi, prob)
    xi = p_alpha_inverse(tw, prob.alpha)
    rng = np.random.default_rng(0)
    flat_xi = xi.mat.reshape(-1, 3, 3)
    flat_alpha = prob.alpha.mat.reshape(-1, 3, 3)
    # log det part of the residual equation: lam phi + G at t = 1
    target = (prob.lam * phi + prob.G).ravel()
    for idx in rng.integers(0, flat_xi.shape[0], size=10):
        lam = relative_eigenvalues(flat_xi[idx], flat_alpha[idx])
        assert f_values(lam).f == pytest.approx(target[idx], abs=1e-9)
