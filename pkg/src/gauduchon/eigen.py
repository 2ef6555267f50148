"""Eigenvalue functions behind the (n-1)-type Monge-Ampere operator.

Pure vector math on the last axis of an array, independent of grids.  With
lam the eigenvalues of g relative to alpha, mu = P(lam) are those of
P_alpha(g) relative to alpha, and

    f~(mu) = sum_i log mu_i,     f(lam) = f~(P(lam)),

defined on Gamma = P^{-1}(positive orthant).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# relative slack allowed when an inequality is tight (e.g. at the symmetric point)
INEQ_RTOL = 1e-12


def _check_dim(x: np.ndarray) -> int:
    n = x.shape[-1]
    if n < 2:
        raise ValueError(f"need n >= 2 eigenvalues, got {n}")
    return n


def _sum_others(x: np.ndarray) -> np.ndarray:
    """out_k = sum_{i != k} x_i, summed directly (no total-minus-own cancellation)."""
    n = x.shape[-1]
    out = np.zeros_like(x)
    for k in range(n):
        for i in range(n):
            if i != k:
                out[..., k] += x[..., i]
    return out


def p_map(lam, dtype=float) -> np.ndarray:
    """mu_k = sum_{i != k} lam_i / (n - 1)."""
    lam = np.asarray(lam, dtype=dtype)
    n = _check_dim(lam)
    return _sum_others(lam) / (n - 1)


def p_inverse(mu) -> np.ndarray:
    """lam_j = sum_k mu_k - (n - 1) mu_j."""
    mu = np.asarray(mu, dtype=float)
    n = _check_dim(mu)
    return mu.sum(axis=-1, keepdims=True) - (n - 1) * mu


def in_gamma(lam) -> np.ndarray:
    return np.all(p_map(lam) > 0, axis=-1)


@dataclass
class FValues:
    mu: np.ndarray
    f_tilde: np.ndarray       # f~(mu)
    f: np.ndarray             # f(lam), equal to f~(mu)
    grad_f_tilde: np.ndarray  # f~_i = 1 / mu_i
    grad_f: np.ndarray        # f_i = sum_{k != i} (1 / mu_k) / (n - 1)


def f_values(lam, dtype=float) -> FValues:
    """Values and gradients; ``dtype`` selects the working precision."""
    lam = np.asarray(lam, dtype=dtype)
    n = _check_dim(lam)
    mu = p_map(lam, dtype)
    if not np.all(mu > 0):
        raise ValueError("eigenvalues outside Gamma (some mu_k <= 0)")
    ft = np.log(mu).sum(axis=-1)
    gt = 1.0 / mu
    gf = _sum_others(gt) / (n - 1)
    return FValues(mu, ft, ft.copy(), gt, gf)


def euler_sums(lam) -> tuple[np.ndarray, np.ndarray]:
    """(sum lam_k f_k, sum mu_k f~_k); both equal n on Gamma.

    Near the boundary of Gamma the terms grow like 1/mu and cancel, so the
    sums are accumulated in extended precision.
    """
    fv = f_values(lam, np.longdouble)
    lam = np.asarray(lam, dtype=np.longdouble)
    s1 = (lam * fv.grad_f).sum(axis=-1)
    s2 = (fv.mu * fv.grad_f_tilde).sum(axis=-1)
    return s1.astype(float), s2.astype(float)


def _slack_ok(lhs, rhs) -> dict:
    """lhs <= rhs up to INEQ_RTOL: whether it holds, the smallest slack rhs - lhs
    and the number of violating samples."""
    lhs, rhs = np.asarray(lhs), np.asarray(rhs)
    slack = rhs - lhs
    tol = INEQ_RTOL * np.maximum(np.abs(lhs), np.abs(rhs))
    bad = slack < -tol
    if bad.ndim > 1:
        bad = bad.any(axis=-1)
    count = int(np.count_nonzero(bad))
    return {"ok": count == 0, "min_slack": float(slack.min()), "violations": count}


def check_inequalities(lam) -> dict:
    """Ordered-eigenvalue inequalities for lam sorted descending inside Gamma.

    Checked: 0 < f~_1/(n-1) <= f_k <= f~_1 and f~_k <= (n-1) f_1 for k >= 2,
    plus the chains mu ascending, f~ descending and f ascending.  Each entry
    holds ok, min_slack (rhs - lhs minimised over the batch) and the number
    of violating samples.
    """
    lam = np.asarray(lam, dtype=float)
    n = _check_dim(lam)
    if np.any(np.diff(lam, axis=-1) > 0):
        raise ValueError("eigenvalues must be sorted in descending order")
    fv = f_values(lam)
    ft1 = fv.grad_f_tilde[..., :1]
    f1 = fv.grad_f[..., :1]
    fk = fv.grad_f[..., 1:]
    ftk = fv.grad_f_tilde[..., 1:]
    report = {
        "positive_lower": _slack_ok(np.zeros_like(ft1), ft1 / (n - 1)),
        "fk_lower": _slack_ok(np.broadcast_to(ft1 / (n - 1), fk.shape), fk),
        "fk_upper": _slack_ok(fk, np.broadcast_to(ft1, fk.shape)),
        "ftilde_k_upper": _slack_ok(ftk, np.broadcast_to((n - 1) * f1, ftk.shape)),
        "mu_ascending": _slack_ok(fv.mu[..., :-1], fv.mu[..., 1:]),
        "ftilde_descending": _slack_ok(fv.grad_f_tilde[..., 1:], fv.grad_f_tilde[..., :-1]),
        "f_ascending": _slack_ok(fv.grad_f[..., :-1], fv.grad_f[..., 1:]),
    }
    report["all_ok"] = all(entry["ok"] for entry in report.values())
    return report


def sample_gamma(rng: np.random.Generator, n: int, size: int, mu_max: float = 10.0) -> np.ndarray:
    """Points of Gamma, sorted descending, from mu uniform on (0, mu_max]^n."""
    mu = mu_max - rng.uniform(0.0, mu_max, size=(size, n))
    lam = p_inverse(mu)
    return -np.sort(-lam, axis=-1)


def relative_eigenvalues(g: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Eigenvalues of the endomorphism g_{i lbar} alpha^{lbar j}, sorted descending.

    Both inputs are Hermitian matrix stacks; alpha must be positive.
    """
    chol = np.linalg.cholesky(alpha)
    linv = np.linalg.inv(chol)
    sym = linv @ g @ np.conj(np.swapaxes(linv, -1, -2))
    ev = np.linalg.eigvalsh(0.5 * (sym + np.conj(np.swapaxes(sym, -1, -2))))
    return ev[..., ::-1]
