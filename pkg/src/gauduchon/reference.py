"""Stand-alone solver for the n = 2 continuity equation omega = omega0 - s Ric(omega).

Kept independent of the form algebra and of :mod:`gauduchon.solver` so it can
serve as an oracle.  Writing log det omega = log det omega0 + v turns the
equation into the scalar problem

    log det(omega0 - s Ric(omega0) + s i ddbar v) - log det omega0 = v,

solved here by Newton's method with explicit 2x2 formulas.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .grid import TorusGrid, i_ddbar


def _det2(m):
    return (m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]).real


def _adj2(m):
    return np.stack([np.stack([m[..., 1, 1], -m[..., 0, 1]], -1),
                     np.stack([-m[..., 1, 0], m[..., 0, 0]], -1)], -2)


def _log_det2(m):
    a = m[..., 0, 0].real
    det = _det2(m)
    if not (np.all(a > 0) and np.all(det > 0)):
        raise ValueError("matrix field left the positive cone")
    return np.log(det)


@dataclass
class ReferenceResult:
    omega: np.ndarray
    v: np.ndarray
    residual: float
    iterations: int


def solve_n2_continuity(grid: TorusGrid, omega0: np.ndarray, s: float, tol: float = 1e-12,
                        max_iter: int = 50) -> ReferenceResult:
    """omega(s) for a 2x2 Hermitian matrix field omega0 (flat background)."""
    if grid.n != 2:
        raise ValueError("reference solver is two-dimensional only")
    omega0 = np.broadcast_to(np.asarray(omega0, dtype=complex), grid.shape + (2, 2))
    ld0 = _log_det2(omega0)
    base = omega0 + s * i_ddbar(grid, ld0)  # omega0 - s Ric(omega0)
    shape, size = grid.shape, grid.size

    def evaluate(v):
        m = base + s * i_ddbar(grid, v)
        return m, _log_det2(m) - ld0 - v

    v = np.zeros(shape)
    m, r = evaluate(v)
    rn = np.abs(r).max()
    it = 0
    while rn > tol:
        if it >= max_iter:
            raise RuntimeError(f"reference Newton did not converge (|r| = {rn:.3e})")
        it += 1
        minv = _adj2(m) / _det2(m)[..., None, None]

        def apply(x, minv=minv):
            h = i_ddbar(grid, x.reshape(shape))
            return (s * np.einsum("...ji,...ij->...", minv, h).real - x.reshape(shape)).ravel()

        # constant-coefficient preconditioner from the mean of s * minv
        cm = s * grid.mean(minv)
        kx = [grid.wavenumber(a) for a in range(4)]
        sym = -1.0 + 0 * kx[0] * kx[1] * kx[2] * kx[3]
        for i in range(2):
            for j in range(2):
                si = 0.5 * (1j * kx[i] + kx[2 + i])
                sj = 0.5 * (1j * kx[j] - kx[2 + j])
                sym = sym + cm[j, i] * si * sj
        sym = sym.real

        def prec(y):
            return np.fft.ifftn(np.fft.fftn(y.reshape(shape)) / sym).real.ravel()

        op = LinearOperator((size, size), matvec=lambda y: apply(prec(y)), dtype=float)
        y, _ = gmres(op, -r.ravel(), rtol=1e-12, atol=0.0, restart=80, maxiter=50)
        delta = prec(y).reshape(shape)
        step = 1.0
        while True:
            try:
                m_new, r_new = evaluate(v + step * delta)
                rn_new = np.abs(r_new).max()
            except ValueError:
                rn_new = np.inf
            if rn_new < rn or step < 1e-4:
                break
            step *= 0.5
        if not np.isfinite(rn_new):
            raise RuntimeError("reference Newton lost positivity")
        v, m, r, rn = v + step * delta, m_new, r_new, rn_new
    return ReferenceResult(m, v, float(rn), it)
