"""Acceptance criteria 1-12, one test each, at the stated tolerances."""
import math
import time

import numpy as np
import pytest

from gauduchon.chern import gauduchon_defect
from gauduchon.cli import execute, parse_config
from gauduchon.driver import (ContinuityInstance, TEstimateConfig, bootstrap_certificate, estimate_T,
                              solve_at_s)
from gauduchon.eigen import check_inequalities, euler_sums, sample_gamma
from gauduchon.forms import (Form11, PQForm, det11, detN1N1, hodge_star, p_alpha, p_alpha_star,
                             power_n_minus_1, star11)
from gauduchon.grid import TorusGrid
from gauduchon.reference import solve_n2_continuity
from gauduchon.scenarios import (conformal_metric, conformal_threshold, gauduchon_metric, identity_metric,
                                 kahler_metric, manufactured_problem, twisted_alpha)
from gauduchon.solver import MAProblem, SolverConfig, continuation_solve, fd_linearization_error

pytestmark = pytest.mark.acceptance

AMP = 0.1
SAMPLES = 100


def positive(rng, n, size=SAMPLES):
    a = rng.standard_normal((size, n, n)) + 1j * rng.standard_normal((size, n, n))
    return Form11(0.5 * a @ np.conj(np.swapaxes(a, -1, -2)) + np.eye(n))


def hermitian(rng, n, size=SAMPLES):
    a = rng.standard_normal((size, n, n)) + 1j * rng.standard_normal((size, n, n))
    return Form11(a + np.conj(np.swapaxes(a, -1, -2)))


def test_01_star_involution():
    rng = np.random.default_rng(1)
    worst = 0.0
    for n in (2, 3):
        alpha = positive(rng, n)
        for p in range(n + 1):
            for q in range(n + 1):
                shape = (SAMPLES, math.comb(n, p), math.comb(n, q))
                phi = PQForm(p, q, n, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
                twice = hodge_star(hodge_star(phi, alpha), alpha)
                worst = max(worst, np.abs(twice.coeffs - (-1) ** (p + q) * phi.coeffs).max())
    assert worst <= 1e-12, worst


def test_02_determinant_identities():
    rng = np.random.default_rng(2)
    for n in (2, 3):
        alpha, phi, xi = positive(rng, n), positive(rng, n), positive(rng, n)
        power = detN1N1(power_n_minus_1(phi)) / det11(phi) ** (n - 1)
        assert np.abs(power - 1).max() <= 1e-10
        ratio = (detN1N1(star11(phi, alpha)) / detN1N1(star11(xi, alpha))) / (det11(phi) / det11(xi))
        assert np.abs(ratio - 1).max() <= 1e-10


def test_03_p_alpha_routes():
    rng = np.random.default_rng(3)
    for n in (2, 3):
        alpha, xi = positive(rng, n), hermitian(rng, n)
        algebraic = p_alpha(xi, alpha).mat
        via_star = p_alpha_star(xi, alpha).mat
        assert np.abs(algebraic - via_star).max() <= 1e-10 * max(1.0, np.abs(algebraic).max())


@pytest.mark.parametrize("n,res", [(2, 16), (3, 8)])
def test_04_flat_fixed_point(n, res):
    grid = TorusGrid(n, res)
    eye = identity_metric(grid)
    for s in (0.1, 1.0, 10.0):
        sol = solve_at_s(ContinuityInstance(grid, eye, eye, s, s))
        assert np.abs(sol.omega.mat - eye.mat).max() <= 1e-12
        assert sol.defect <= 1e-9


@pytest.mark.parametrize("n,res,steps,budget", [(2, 32, 40, None), (3, 8, None, 15 * 60)])
def test_05_manufactured_recovery(n, res, steps, budget):
    started = time.perf_counter()
    prob, phi_star = manufactured_problem(TorusGrid(n, res))
    result = continuation_solve(prob)
    elapsed = time.perf_counter() - started
    assert np.abs(result.phi - phi_star).max() <= 1e-8
    assert result.t_path[-1] == 1.0
    if steps is not None:
        assert result.newton_steps <= steps
    if budget is not None:
        assert elapsed <= budget


def _twisted_problem():
    grid = TorusGrid(3, 4)
    alpha = twisted_alpha(grid)
    rng = np.random.default_rng(7)
    varpi = Form11(alpha.mat + 0.1 * np.diag([1.0, 2.0, 0.5]))
    return MAProblem(grid, alpha, varpi, grid.random_smooth(rng, modes=1, amplitude=0.05), 0.7)


@pytest.mark.parametrize("case", ["manufactured-n2", "twisted-n3"])
def test_06_linearization_first_order(case):
    prob = manufactured_problem(TorusGrid(2, 16))[0] if case == "manufactured-n2" else _twisted_problem()
    rng = np.random.default_rng(6)
    phi0 = prob.grid.random_smooth(rng, modes=1, amplitude=0.02)
    for _ in range(20):
        u = prob.grid.random_smooth(rng, modes=1)
        errs = [fd_linearization_error(phi0, u, 1.0, prob, eps) for eps in (1e-3, 1e-4, 1e-5)]
        orders = [math.log10(errs[0] / errs[1]), math.log10(errs[1] / errs[2])]
        assert all(0.8 <= p <= 1.2 for p in orders), errs


def test_07_uniqueness():
    prob, _ = manufactured_problem(TorusGrid(2, 16))
    a = continuation_solve(prob)
    b = continuation_solve(prob, SolverConfig(damping=0.3, dt0=0.5, predictor="none"))
    assert np.abs(a.phi - b.phi).max() <= 1e-7

    grid = TorusGrid(2, 16)
    w0, eye = conformal_metric(grid, AMP), identity_metric(grid)
    s_star = conformal_threshold(AMP)
    s = s_star / 2
    first = solve_at_s(ContinuityInstance(grid, w0, eye, s, s))
    # different certificate (so a different t-path and starting point) and damping
    other = ContinuityInstance(grid, w0, eye, s, *bootstrap_certificate(first, w0, s))
    second = solve_at_s(other, SolverConfig(damping=0.3, dt0=0.5, predictor="none"))
    third = solve_at_s(ContinuityInstance(grid, w0, eye, s, 0.9 * s_star))
    assert np.abs(second.omega.mat - first.omega.mat).max() <= 1e-7
    assert np.abs(third.omega.mat - first.omega.mat).max() <= 1e-7


def test_08_kahler_n2_crosscheck():
    grid = TorusGrid(2, 16)
    w0 = kahler_metric(grid, np.random.default_rng(3), amplitude=0.02)
    for s in (0.05, 0.1):
        sol = solve_at_s(ContinuityInstance(grid, w0, identity_metric(grid), s, s))
        ref = solve_n2_continuity(grid, w0.mat, s)
        assert np.abs(sol.omega.mat - ref.omega).max() <= 1e-7


@pytest.mark.parametrize("n,res", [(2, 16), (3, 8)])
def test_09_gauduchon_preservation(n, res):
    grid = TorusGrid(n, res)
    w0 = gauduchon_metric(grid)
    assert gauduchon_defect(grid, w0) <= 1e-10
    for s in (0.05, 0.2):
        sol = solve_at_s(ContinuityInstance(grid, w0, identity_metric(grid), s, s))
        assert gauduchon_defect(grid, sol.omega) <= 1e-7


@pytest.mark.parametrize("n", [2, 3])
def test_10_eigenvalue_identities(n):
    lam = sample_gamma(np.random.default_rng(10 + n), n, 100_000)
    s1, s2 = euler_sums(lam)
    assert np.abs(s1 - n).max() <= 1e-12 and np.abs(s2 - n).max() <= 1e-12
    report = check_inequalities(lam)
    assert all(entry["violations"] == 0 for key, entry in report.items() if key != "all_ok"), report


def test_11_T_estimate():
    grid = TorusGrid(2, 8)
    eye = identity_metric(grid)
    flat = estimate_T(grid, eye, eye, TEstimateConfig(s_start=0.5, s_max=4.0))
    assert flat.reached_s_max and flat.lower_bound == 4.0

    cfg = TEstimateConfig(s_start=0.25, s_max=2.0, s_resolution=0.05)
    bounds = []
    for res in (16, 32):
        g = TorusGrid(2, res)
        est = estimate_T(g, conformal_metric(g, AMP), identity_metric(g), cfg)
        assert est.lower_bound >= conformal_threshold(AMP) - cfg.s_resolution
        bounds.append(est.lower_bound)
    assert abs(bounds[0] - bounds[1]) <= 2 * cfg.s_resolution, bounds


@pytest.mark.parametrize("scenario,extra", [("manufactured", {}), ("conformal", {"s_schedule": [0.1, 0.28]})])
def test_12_determinism(tmp_path, scenario, extra):
    dumps = []
    for k in range(2):
        cfg = parse_config({"scenario": scenario, "res": 16, "seed": 11, "output": f"run{k}", **extra}, tmp_path)
        code, _ = execute(cfg)
        assert code == 0
        dumps.append({p.name: p.read_bytes() for p in sorted((tmp_path / f"run{k}" / "fields").glob("*.bin"))})
    assert dumps[0] and dumps[0].keys() == dumps[1].keys()
    assert all(dumps[0][name] == dumps[1][name] for name in dumps[0])
