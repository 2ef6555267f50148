"""Scalar Monge-Ampere type equation for the Gauduchon continuity problem.

For a Gauduchon background alpha, a positive (1,1)-form varpi, data G and a
constant lam > 0 we solve

    log( tilde_omega(phi)^n / alpha^n ) = lam * phi + (1 - t) G0 + t G,
    tilde_omega(phi) = varpi + ((Lap phi) alpha - i ddbar phi) / (n - 1) + Z(d phi),

by damped Newton iterations while t marches from 0 (where phi = 0 solves the
equation because G0 = log(varpi^n / alpha^n)) to 1.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .chern import NotPositiveError, gauduchon_defect, log_det
from .forms import (EPS_POS, Form11, PQForm, dbar_form, form11_to_pq, hodge_star, mat_inv,
                    min_eigenvalue, power_n_minus_1, pq_to_form11, re_part, starN1N1, wedge, wedge_power)
from .grid import TorusGrid, gradient_holo, gradient_holo_hat, i_ddbar_hat, is_real_field

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    """Knobs of :func:`continuation_solve`.

    ``dt0``/``dt_grow``/``dt_shrink``/``fast_newton`` form the t-step schedule:
    steps double after a solve needing at most ``fast_newton`` Newton steps and
    halve after a failed solve, never dropping below ``min_dt``.  ``damping``
    is the line-search reduction factor and ``min_damping`` its floor.  Linear
    solves stop at relative residual ``clip(forcing * |r|, lin_tol, max_forcing)``.
    """

    tol: float = 1e-9
    path_tol: float = 1e-6
    lin_tol: float = 1e-10
    forcing: float = 0.1
    max_forcing: float = 1e-2
    min_dt: float = 1e-4
    max_newton: int = 30
    eps_pos: float = EPS_POS
    dt0: float = 0.25
    dt_grow: float = 2.0
    dt_shrink: float = 0.5
    fast_newton: int = 3
    damping: float = 0.5
    min_damping: float = 2.0 ** -12
    divergence_window: int = 5
    predictor: str = "tangent"
    gmres_restart: int = 60
    gmres_maxiter: int = 40
    debug: bool = False

    def __post_init__(self):
        for name in ("tol", "path_tol", "lin_tol", "forcing", "max_forcing", "min_dt", "eps_pos", "dt0",
                     "min_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.damping < 1 or not 0 < self.dt_shrink < 1 or self.dt_grow < 1:
            raise ValueError("damping/dt_shrink must lie in (0,1) and dt_grow >= 1")
        if self.predictor not in ("tangent", "none"):
            raise ValueError("predictor must be 'tangent' or 'none'")


class SolverError(RuntimeError):
    """Base class for continuation failures; carries the failing state."""

    def __init__(self, message: str, t: float | None = None, phi: np.ndarray | None = None,
                 residual_norm: float | None = None, diagnostics: dict | None = None):
        super().__init__(message)
        self.t = t
        self.phi_norm = None if phi is None else float(np.abs(phi).max())
        self.residual_norm = residual_norm
        self.diagnostics = diagnostics or {}

    def as_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self), "t": self.t,
                "phi_norm": self.phi_norm, "residual_norm": self.residual_norm,
                "diagnostics": self.diagnostics}


class StepUnderflow(SolverError):
    pass


class NewtonDivergence(SolverError):
    pass


class PositivityBreakdown(SolverError):
    pass


class LinearSolveError(SolverError):
    pass


def varpi_from(omega_h: Form11, alpha: Form11) -> Form11:
    """varpi = *(omega_h^{n-1}) / (n-1)!, the star taken with respect to alpha."""
    for name, form in (("omega_h", omega_h), ("alpha", alpha)):
        lam, loc = min_eigenvalue(form.mat)
        if lam <= 0:
            raise NotPositiveError(f"{name} not positive definite: eigenvalue {lam:.3e} at {loc}", lam, loc)
    varpi = starN1N1(power_n_minus_1(omega_h), alpha)
    lam, loc = min_eigenvalue(varpi.mat)
    if lam <= 0:
        raise NotPositiveError(f"varpi lost positivity: eigenvalue {lam:.3e} at {loc}", lam, loc)
    return varpi


class ZOperator:
    """phi -> Z(d phi) = *Re(sqrt(-1) del phi ^ delbar(alpha^{n-2})) / (n-1)!, w.r.t. alpha.

    Z is real-linear in d phi, so it is stored as matrix fields M_i with
    Z = (sum_i d_i phi M_i + conj(d_i phi) M_i^H) / 2.
    """

    def __init__(self, grid: TorusGrid, alpha: Form11):
        self.grid = grid
        self.alpha = alpha
        n = grid.n
        self.n = n
        self.dbar_apow = None
        self.mats = None
        if n == 2:
            return
        amat = np.broadcast_to(alpha.mat, grid.shape + (n, n))
        apow = wedge_power(form11_to_pq(Form11(amat)), n - 2)
        dbar_apow = dbar_form(grid, apow)
        if dbar_apow.sup_norm() == 0.0:
            return
        self.dbar_apow = dbar_apow
        scale = 1.0 / math.factorial(n - 1)
        mats = []
        for i in range(n):
            prod = wedge(PQForm.basis(n, (i,), ()).scale(1j), dbar_apow)
            mats.append(pq_to_form11(hodge_star(prod, alpha)).mat * scale)
        self.mats = np.stack(mats, axis=-3)  # [..., i, row, col]

    @property
    def is_zero(self) -> bool:
        return self.mats is None

    def from_gradient(self, dphi: np.ndarray) -> Form11:
        """Z given the holomorphic gradient field d_i phi (trailing axis i)."""
        n = self.n
        if self.mats is None:
            return Form11(np.zeros(self.grid.shape + (n, n), dtype=complex))
        half = np.einsum("...i,...irc->...rc", dphi, self.mats)
        return Form11(0.5 * (half + np.conj(np.swapaxes(half, -1, -2))))

    def __call__(self, phi: np.ndarray) -> Form11:
        if self.mats is None:
            return self.from_gradient(None)
        return self.from_gradient(gradient_holo(self.grid, np.real(phi)))

    def literal(self, phi: np.ndarray) -> Form11:
        """Direct evaluation through wedge and star (reference for tests)."""
        n = self.n
        if self.dbar_apow is None:
            return Form11(np.zeros(self.grid.shape + (n, n), dtype=complex))
        dphi = PQForm(1, 0, n, gradient_holo(self.grid, np.real(phi))[..., :, None])
        prod = re_part(wedge(dphi.scale(1j), self.dbar_apow))
        star = hodge_star(prod, self.alpha)
        return pq_to_form11(star.scale(1.0 / math.factorial(n - 1)))


def z_of_dphi(grid: TorusGrid, phi: np.ndarray, alpha: Form11) -> Form11:
    return ZOperator(grid, alpha)(phi)


@dataclass
class MAProblem:
    """Data (alpha, varpi, G, lam) of the scalar equation on ``grid``."""

    grid: TorusGrid
    alpha: Form11
    varpi: Form11
    G: np.ndarray
    lam: float
    tol_gauduchon: float = 1e-8
    check_gauduchon: bool = True

    def __post_init__(self):
        grid, n = self.grid, self.grid.n
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        self.alpha = Form11(np.broadcast_to(self.alpha.mat, grid.shape + (n, n)).astype(complex))
        self.varpi = Form11(np.broadcast_to(self.varpi.mat, grid.shape + (n, n)).astype(complex))
        self.G = np.broadcast_to(np.asarray(self.G, dtype=float), grid.shape).copy()
        for name in ("alpha", "varpi"):
            lam, loc = min_eigenvalue(getattr(self, name).mat)
            if lam <= EPS_POS:
                raise ValueError(f"{name} not positive definite (eigenvalue {lam:.3e} at {loc})")
        if self.check_gauduchon:
            defect = gauduchon_defect(grid, self.alpha)
            if defect > self.tol_gauduchon:
                raise ValueError(f"alpha is not Gauduchon on this grid (defect {defect:.3e})")
        self.zop = ZOperator(grid, self.alpha)
        self.alpha_inv = mat_inv(self.alpha.mat)
        self.G0 = log_det(self.varpi) - log_det(self.alpha)
        self.logdet_alpha = log_det(self.alpha)

    @property
    def n(self) -> int:
        return self.grid.n

    def linear_part(self, phi: np.ndarray) -> Form11:
        """The phi-dependent part of tilde_omega (real-linear in phi)."""
        n = self.n
        fh = self.grid.rfft(np.real(phi))
        hess = i_ddbar_hat(self.grid, fh)
        tr = np.einsum("...ji,...ij->...", self.alpha_inv, hess)
        out = (tr[..., None, None] * self.alpha.mat - hess) / (n - 1)
        if not self.zop.is_zero:
            out = out + self.zop.from_gradient(gradient_holo_hat(self.grid, fh)).mat
        return Form11(out)

    def rhs(self, t: float) -> np.ndarray:
        return (1.0 - t) * self.G0 + t * self.G


def assemble_tilde_omega(phi: np.ndarray, prob: MAProblem) -> Form11:
    if not is_real_field(phi):
        raise ValueError("phi must be real")
    phi = np.real(phi)
    return prob.varpi + prob.linear_part(phi)


def residual(phi: np.ndarray, t: float, prob: MAProblem) -> np.ndarray:
    """log(tilde_omega^n/alpha^n) - lam*phi - (1-t) G0 - t G.

    Raises :class:`~gauduchon.chern.NotPositiveError` (with the worst point)
    when tilde_omega(phi) is not positive definite.
    """
    tw = assemble_tilde_omega(phi, prob)
    return log_det(tw) - prob.logdet_alpha - prob.lam * np.real(phi) - prob.rhs(t)


class LinearizedOperator:
    """u -> B(u) = h^{jbar i} (d tilde_omega)(u)_{i jbar} - lam u at a base point phi0.

    h is tilde_omega(phi0).  The second-order part equals
    Theta^{jbar i} d_i d_jbar u with
    Theta = ((tr_h alpha) alpha^{-1} - h^{-1}) / (n - 1).
    """

    def __init__(self, phi0: np.ndarray, prob: MAProblem, eps_pos: float = EPS_POS):
        self.prob = prob
        n = prob.n
        h = assemble_tilde_omega(phi0, prob)
        margin, loc = min_eigenvalue(h.mat)
        if margin <= eps_pos:
            raise PositivityBreakdown(f"tilde_omega not positive at base point ({margin:.3e} at {loc})",
                                      phi=phi0, diagnostics={"min_eig": margin, "location": loc})
        self.margin = margin
        self.h = h
        self.hinv = mat_inv(h.mat)
        tr_h_alpha = np.einsum("...ji,...ij->...", self.hinv, prob.alpha.mat).real
        self.theta = (tr_h_alpha[..., None, None] * prob.alpha_inv - self.hinv) / (n - 1)
        # real coefficient fields of u -> Re sum theta^{jbar i} u_{i jbar} + Re sum a_i u_i
        th = self.theta
        self._diag = [th[..., i, i].real.copy() for i in range(n)]
        self._off = {(i, j): (2 * th[..., j, i].real, -2 * th[..., j, i].imag)
                     for i in range(n) for j in range(i + 1, n)}
        self._grad = None
        if not prob.zop.is_zero:
            a = np.einsum("...ji,...kij->...k", self.hinv, prob.zop.mats)
            self._grad = [(a[..., k].real.copy(), -a[..., k].imag) for k in range(n)]
        self._precond_symbol = self._mean_symbol()
        self.n_apply = 0

    def _mean_symbol(self) -> np.ndarray:
        grid, n = self.prob.grid, self.prob.n
        syms = grid._real_symbols
        sym = -self.prob.lam + np.zeros(grid.half_shape, dtype=complex)
        for i in range(n):
            sym = sym + self._diag[i].mean() * syms["h", i, i][0]
        for (i, j), (cr, ci) in self._off.items():
            sym = sym + cr.mean() * syms["h", i, j][0] + ci.mean() * syms["h", i, j][1]
        if self._grad is not None:
            for k, (cr, ci) in enumerate(self._grad):
                sym = sym + cr.mean() * syms["g", k][0] + ci.mean() * syms["g", k][1]
        return sym

    def theta_min_eigenvalue(self) -> float:
        return min_eigenvalue(self.theta)[0]

    def __call__(self, u: np.ndarray) -> np.ndarray:
        self.n_apply += 1
        grid, n = self.prob.grid, self.prob.n
        u = np.real(u)
        fh = grid.rfft(u)
        syms = grid._real_symbols
        out = -self.prob.lam * u
        for i in range(n):
            out += self._diag[i] * grid.irfft(syms["h", i, i][0] * fh)
        for (i, j), (cr, ci) in self._off.items():
            re_sym, im_sym = syms["h", i, j]
            out += cr * grid.irfft(re_sym * fh) + ci * grid.irfft(im_sym * fh)
        if self._grad is not None:
            for k, (cr, ci) in enumerate(self._grad):
                re_sym, im_sym = syms["g", k]
                out += cr * grid.irfft(re_sym * fh) + ci * grid.irfft(im_sym * fh)
        return out

    def apply_literal(self, u: np.ndarray) -> np.ndarray:
        """Re tr(h^{-1} L(u)) - lam u through the full linear part (reference for tests)."""
        du = self.prob.linear_part(np.real(u))
        return np.einsum("...ji,...ij->...", self.hinv, du.mat).real - self.prob.lam * np.real(u)

    def precondition(self, r: np.ndarray) -> np.ndarray:
        grid = self.prob.grid
        return grid.irfft(grid.rfft(r) / self._precond_symbol)

    def solve(self, rhs: np.ndarray, lin_tol: float, restart: int = 60, maxiter: int = 40) -> tuple[np.ndarray, int]:
        """Right-preconditioned GMRES; returns (solution, operator applications)."""
        grid = self.prob.grid
        shape, size = grid.shape, grid.size
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0:
            return np.zeros(shape), 0
        start = self.n_apply

        def matvec(y):
            return self(self.precondition(y.reshape(shape))).ravel()

        op = LinearOperator((size, size), matvec=matvec, dtype=float)
        y, info = gmres(op, rhs.ravel(), rtol=lin_tol, atol=0.0, restart=restart, maxiter=maxiter)
        x = self.precondition(y.reshape(shape))
        rel = np.linalg.norm(self(x) - rhs) / bnorm
        log.debug("gmres: %d applications, info=%d, relative residual %.2e, margin %.2e",
                  self.n_apply - start, info, rel, self.margin)
        if rel > lin_tol * 10:
            raise LinearSolveError(f"GMRES reached relative residual {rel:.2e} (info={info})",
                                   diagnostics={"relative_residual": rel})
        return x, self.n_apply - start


@dataclass
class ContinuationState:
    t: float
    phi: np.ndarray
    residual_norm: float
    min_eig_margin: float

    def __post_init__(self):
        if not self.min_eig_margin > 0:
            raise ValueError("an accepted state needs a positive tilde_omega")


@dataclass
class ContinuationResult:
    phi: np.ndarray
    state: ContinuationState
    newton_steps: int
    t_path: list = field(default_factory=list)
    history: list = field(default_factory=list)
    elapsed: float = 0.0


def _sup(a: np.ndarray) -> float:
    return float(np.abs(a).max())


def _try_point(phi, t, prob, eps_pos):
    """(residual, margin) at phi, or None when tilde_omega is not safely positive."""
    tw = assemble_tilde_omega(phi, prob)
    margin, _ = min_eigenvalue(tw.mat)
    if margin <= eps_pos:
        return None
    r = log_det(tw) - prob.logdet_alpha - prob.lam * phi - prob.rhs(t)
    return r, margin


def fd_linearization_error(phi0: np.ndarray, u: np.ndarray, t: float, prob: MAProblem,
                           eps: float) -> float:
    """sup | (R(phi0 + eps u) - R(phi0)) / eps - B(u) |."""
    op = LinearizedOperator(phi0, prob)
    fd = (residual(phi0 + eps * u, t, prob) - residual(phi0, t, prob)) / eps
    return _sup(fd - op(u))


def newton_solve(phi: np.ndarray, t: float, prob: MAProblem, cfg: SolverConfig, tol: float,
                 history: list | None = None, step_offset: int = 0) -> tuple[np.ndarray, int, float, float]:
    """Damped Newton at fixed t.  Returns (phi, steps, residual sup-norm, margin)."""
    point = _try_point(phi, t, prob, cfg.eps_pos)
    if point is None:
        raise PositivityBreakdown("initial iterate violates positivity", t=t, phi=phi)
    r, margin = point
    rn = _sup(r)
    growth = 0
    for step in range(cfg.max_newton + 1):
        if rn <= tol:
            return phi, step, rn, margin
        if step == cfg.max_newton:
            break
        op = LinearizedOperator(phi, prob, cfg.eps_pos)
        if cfg.debug and (step_offset + step) % 10 == 0:
            _debug_linearization(phi, t, prob)
        # inexact Newton: a forcing term proportional to |r| keeps quadratic convergence
        eta = min(cfg.max_forcing, max(cfg.lin_tol, cfg.forcing * rn))
        delta, napply = op.solve(-r, eta, cfg.gmres_restart, cfg.gmres_maxiter)
        a = 1.0
        full_step_grew = None
        while True:
            cand = phi + a * delta
            point = _try_point(cand, t, prob, cfg.eps_pos)
            cand_rn = None if point is None else _sup(point[0])
            if full_step_grew is None:
                full_step_grew = cand_rn is None or cand_rn > rn
            if cand_rn is not None and cand_rn < rn:
                break
            a *= cfg.damping
            if a < cfg.min_damping:
                lam, loc = min_eigenvalue(assemble_tilde_omega(phi + delta, prob).mat)
                raise PositivityBreakdown(
                    "line search could not reduce the residual while keeping tilde_omega positive",
                    t=t, phi=phi, residual_norm=rn,
                    diagnostics={"full_step_min_eig": lam, "location": loc, "margin": margin})
        phi, (r, margin), rn_old, rn = cand, point, rn, cand_rn
        growth = growth + 1 if full_step_grew else 0
        if history is not None:
            history.append({"t": t, "step": step_offset + step + 1, "residual": rn,
                            "previous_residual": rn_old, "damping": a, "min_eig": margin,
                            "gmres_applications": napply, "theta_min_eig": op.theta_min_eigenvalue()})
        log.debug("t=%.4f newton %d: |r|=%.3e damping=%.3g margin=%.3e", t, step + 1, rn, a, margin)
        if growth >= cfg.divergence_window:
            raise NewtonDivergence(f"full Newton steps increased the residual {growth} times in a row",
                                   t=t, phi=phi, residual_norm=rn)
    raise NewtonDivergence(f"no convergence in {cfg.max_newton} Newton steps", t=t, phi=phi,
                           residual_norm=rn)


def _debug_linearization(phi, t, prob):
    rng = np.random.default_rng(0)
    u = prob.grid.random_smooth(rng, modes=1)
    e1 = fd_linearization_error(phi, u, t, prob, 1e-4)
    e2 = fd_linearization_error(phi, u, t, prob, 1e-5)
    assert e2 < 0.5 * e1 or e2 < 1e-9, f"linearization inconsistent: {e1:.3e} -> {e2:.3e}"


def continuation_solve(prob: MAProblem, cfg: SolverConfig | None = None,
                       phi_init: np.ndarray | None = None) -> ContinuationResult:
    """March t from 0 to 1, returning phi with sup|residual(phi, 1)| <= cfg.tol.

    ``phi_init`` (optional) must solve the t = 0 equation; by default phi = 0.
    """
    cfg = cfg or SolverConfig()
    started = time.perf_counter()
    grid = prob.grid
    history: list = []
    phi = np.zeros(grid.shape) if phi_init is None else np.array(phi_init, dtype=float)
    t = 0.0
    point = _try_point(phi, 0.0, prob, cfg.eps_pos)
    if point is None:
        raise PositivityBreakdown("tilde_omega(phi_init) is not positive", t=0.0, phi=phi)
    r0, margin = point
    t_path = [0.0]
    # the t = 1 equation may already be satisfied (G = G0)
    r1 = r0 + prob.rhs(0.0) - prob.rhs(1.0)
    if _sup(r1) <= cfg.tol:
        state = ContinuationState(1.0, phi, _sup(r1), margin)
        return ContinuationResult(phi, state, 0, [0.0, 1.0], history, time.perf_counter() - started)
    if _sup(r0) > cfg.path_tol:
        phi, _, _, margin = newton_solve(phi, 0.0, prob, cfg, max(cfg.tol, cfg.path_tol), history)
    dt = cfg.dt0
    while t < 1.0:
        t_try = min(1.0, t + dt)
        tol_t = cfg.tol if t_try == 1.0 else max(cfg.tol, cfg.path_tol)
        guess = _predict(phi, t, t_try, prob, cfg)
        try:
            new_phi, steps, rn, new_margin = newton_solve(guess, t_try, prob, cfg, tol_t, history,
                                                          len(history))
        except (SolverError, NotPositiveError) as exc:
            err = exc if isinstance(exc, SolverError) else PositivityBreakdown(str(exc), t=t_try)
            dt *= cfg.dt_shrink
            log.info("continuation step to t=%.5f failed (%s); dt -> %.3g", t_try, exc, dt)
            if dt < cfg.min_dt:
                raise StepUnderflow(f"t-step fell below min_dt={cfg.min_dt} at t={t:.6f}", t=t, phi=phi,
                                    diagnostics={"last_error": err.as_dict()}) from exc
            continue
        phi, t, margin = new_phi, t_try, new_margin
        t_path.append(t)
        if steps <= cfg.fast_newton:
            dt *= cfg.dt_grow
    state = ContinuationState(1.0, phi, rn, margin)
    return ContinuationResult(phi, state, len(history), t_path, history, time.perf_counter() - started)


def _predict(phi, t, t_new, prob, cfg):
    if cfg.predictor == "none" or t_new == t:
        return phi
    op = LinearizedOperator(phi, prob, cfg.eps_pos)
    # d/dt R(phi(t), t) = 0  =>  B phi' = G - G0
    dphi, _ = op.solve(prob.G - prob.G0, cfg.lin_tol, cfg.gmres_restart, cfg.gmres_maxiter)
    guess = phi + (t_new - t) * dphi
    if _try_point(guess, t_new, prob, cfg.eps_pos) is None:
        return phi
    return guess


def manufactured_G(phi_star: np.ndarray, prob_like: MAProblem) -> np.ndarray:
    """G making phi_star the exact t = 1 solution for the data of ``prob_like``."""
    tw = assemble_tilde_omega(phi_star, prob_like)
    return log_det(tw) - prob_like.logdet_alpha - prob_like.lam * phi_star
