"""Chern connection data of Hermitian metrics on a flat torus.

Index layout: ``christoffel(...)[..., i, j, k]`` is Gamma^k_{ij}, and the same
for torsion.  Metrics are :class:`~gauduchon.forms.Form11` matrix fields.
"""
from __future__ import annotations

import math

import numpy as np

from .forms import (Form11, d_form, dbar_form, detN1N1, mat_inv, min_eigenvalue, n1n1_to_pq,
                    power_n_minus_1)
from .grid import TorusGrid, gradient_holo, i_ddbar


class NotPositiveError(ValueError):
    """A Hermitian matrix field failed to be positive definite somewhere."""

    def __init__(self, message: str, eigenvalue: float | None = None, location=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.location = location


def log_det(g: Form11) -> np.ndarray:
    """log det g via batched Cholesky; raises NotPositiveError when g is not positive."""
    m = g.mat
    if m.shape[-1] == 2:
        # Sylvester: a 2x2 Hermitian matrix is positive iff a > 0 and det > 0
        a = m[..., 0, 0].real
        det = (a * m[..., 1, 1].real - np.abs(m[..., 0, 1]) ** 2)
        if np.all(a > 0) and np.all(det > 0):
            return np.log(det)
        chol = None
    else:
        try:
            chol = np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            chol = None
    if chol is None:
        lam, loc = min_eigenvalue(m)
        raise NotPositiveError(f"metric not positive definite: eigenvalue {lam:.3e} at {loc}",
                               lam, loc)
    diag = np.diagonal(chol, axis1=-2, axis2=-1).real
    return 2.0 * np.log(diag).sum(axis=-1)


def christoffel(grid: TorusGrid, g: Form11) -> np.ndarray:
    """Gamma^k_{ij} = g^{k lbar} d_i g_{j lbar}."""
    ginv = mat_inv(g.mat)
    dg = gradient_holo(grid, np.broadcast_to(g.mat, grid.shape + g.mat.shape[-2:]))
    # dg[..., j, l, i] = d_i g_{j lbar};  g^{k lbar} = ginv[l, k]
    return np.einsum("...lk,...jli->...ijk", ginv, dg)


def torsion(grid: TorusGrid, g: Form11) -> np.ndarray:
    gam = christoffel(grid, g)
    return gam - np.swapaxes(gam, -3, -2)


def chern_ricci(grid: TorusGrid, g: Form11) -> Form11:
    """Ric = -sqrt(-1) d dbar log det g."""
    return Form11(-i_ddbar(grid, log_det(g)))


def log_volume_ratio(omega: Form11, alpha: Form11) -> np.ndarray:
    """log(omega^n / alpha^n) = log det omega - log det alpha."""
    return log_det(omega) - log_det(alpha)


def log_volume_ratio_n1(omega: Form11, alpha: Form11) -> np.ndarray:
    """Same ratio computed from the (n-1,n-1) powers, divided by n-1."""
    n = omega.n
    num = np.log(detN1N1(power_n_minus_1(omega)).real)
    den = np.log(detN1N1(power_n_minus_1(alpha)).real)
    return (num - den) / (n - 1)


def ddbar_power_defect(grid: TorusGrid, omega: Form11) -> np.ndarray:
    """Coefficients of d dbar (omega^{n-1}) as a (n,n)-form coefficient field."""
    n = omega.n
    mat = np.broadcast_to(omega.mat, grid.shape + (n, n))
    top = n1n1_to_pq(power_n_minus_1(Form11(mat))).scale(float(math.factorial(n - 1)))
    return d_form(grid, dbar_form(grid, top)).coeffs


def gauduchon_defect(grid: TorusGrid, omega: Form11) -> float:
    """sup-norm of d dbar (omega^{n-1}); zero exactly for Gauduchon metrics."""
    return float(np.abs(ddbar_power_defect(grid, omega)).max())
