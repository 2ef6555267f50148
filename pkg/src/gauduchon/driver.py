"""Continuity equation for Hermitian metrics against a Gauduchon background.

All (n-1,n-1)-forms handled here are normalised as powers divided by (n-1)!,
so ``power_n_minus_1(omega)`` is the object compared against.  Writing
A = alpha^{n-2}/(n-2)! the equation for omega = omega(s) reads

    omega^{n-1}/(n-1)! = omega0^{n-1}/(n-1)!
                         - s (Ric(omega) ^ A - Re(i del L ^ delbar A)),
    L = log(omega^n / alpha^n).

For a certificate (T_hat, phi_cert) the equation is reduced to the scalar
problem of :mod:`gauduchon.solver` in the unknown psi = s u with

    u = (n-1) log(det omega / det omega0) - phi_cert / T_hat.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .chern import NotPositiveError, chern_ricci, gauduchon_defect, log_det
from .forms import (EPS_POS, Form11, FormN1N1, PQForm, dbar_form, form11_to_pq, min_eigenvalue,
                    n1n1_to_pq, power_n_minus_1, pq_to_n1n1, re_part, root_n_minus_1, star11,
                    starN1N1, wedge, wedge_power)
from .grid import TorusGrid, gradient_holo, i_ddbar
from .solver import (ContinuationResult, MAProblem, SolverConfig, SolverError, assemble_tilde_omega,
                     continuation_solve, newton_solve)

log = logging.getLogger(__name__)

GAUDUCHON_TOL = 1e-8


class CertificateError(ValueError):
    """The reference form built from a certificate is not positive."""

    def __init__(self, message: str, min_eig: float, location=None):
        super().__init__(message)
        self.min_eig = min_eig
        self.location = location


class ReconstructionError(RuntimeError):
    pass


def _on_grid(grid: TorusGrid, form: Form11) -> Form11:
    n = grid.n
    return Form11(np.broadcast_to(np.asarray(form.mat, dtype=complex), grid.shape + (n, n)).copy())


class _Background:
    """alpha-dependent pieces shared by every evaluation: A and delbar A."""

    def __init__(self, grid: TorusGrid, alpha: Form11):
        n = grid.n
        self.grid = grid
        self.alpha = alpha
        self.A = wedge_power(form11_to_pq(alpha), n - 2).scale(1.0 / math.factorial(n - 2))
        if n == 2:
            self.dbar_A = None
        else:
            self.dbar_A = dbar_form(grid, self.A)
        self.logdet_alpha = log_det(alpha)

    def correction(self, f: np.ndarray) -> PQForm:
        """i ddbar f ^ A + Re(i del f ^ delbar A) for a real scalar field f."""
        grid, n = self.grid, self.grid.n
        out = wedge(form11_to_pq(Form11(i_ddbar(grid, np.real(f)))), self.A)
        if self.dbar_A is not None:
            idf = PQForm(1, 0, n, 1j * gradient_holo(grid, np.real(f))[..., :, None])
            out = out + re_part(wedge(idf, self.dbar_A))
        return out

    def rhs(self, omega0: Form11, s: float, log_vol: np.ndarray) -> PQForm:
        """omega0^{n-1}/(n-1)! - s (Ric ^ A - Re(i del L ^ delbar A)) for Ric = -i ddbar log_vol."""
        base = n1n1_to_pq(power_n_minus_1(omega0))
        if s == 0:
            return base
        out = base + self.correction(log_vol).scale(s)
        if self.dbar_A is not None:
            # the log det alpha part of L only enters the first-order term
            n = self.grid.n
            ida = PQForm(1, 0, n, 1j * gradient_holo(self.grid, self.logdet_alpha)[..., :, None])
            out = out - re_part(wedge(ida, self.dbar_A)).scale(s)
        return out


def compute_phi_s(grid: TorusGrid, omega0: Form11, alpha: Form11, s: float) -> tuple[FormN1N1, float]:
    """Phi_s = omega0^{n-1} - s(n-1)(Ric(omega0) ^ alpha^{n-2} - Re(i del log(omega0^n/alpha^n) ^ delbar alpha^{n-2})).

    Returned without normalisation (so s = 0 gives omega0^{n-1}), together
    with its smallest eigenvalue.  Non-positivity is reported, not raised.
    """
    omega0, alpha = _on_grid(grid, omega0), _on_grid(grid, alpha)
    bg = _Background(grid, alpha)
    form = bg.rhs(omega0, s, log_det(omega0)).scale(float(math.factorial(grid.n - 1)))
    phi = pq_to_n1n1(form)
    return phi, min_eigenvalue(phi.mat)[0]


@dataclass
class ContinuityInstance:
    grid: TorusGrid
    omega0: Form11
    alpha: Form11
    s: float
    T_hat: float
    phi_cert: np.ndarray | None = None
    check_gauduchon: bool = True

    def __post_init__(self):
        grid = self.grid
        self.omega0 = _on_grid(grid, self.omega0)
        self.alpha = _on_grid(grid, self.alpha)
        if self.phi_cert is None:
            self.phi_cert = np.zeros(grid.shape)
        self.phi_cert = np.broadcast_to(np.asarray(self.phi_cert, dtype=float), grid.shape).copy()
        if self.s < 0:
            raise ValueError(f"s must be non-negative, got {self.s}")
        if not self.T_hat > 0 or self.s > self.T_hat:
            raise ValueError(f"need 0 < s <= T_hat, got s={self.s}, T_hat={self.T_hat}")
        for name in ("omega0", "alpha"):
            lam, loc = min_eigenvalue(getattr(self, name).mat)
            if lam <= EPS_POS:
                raise ValueError(f"{name} not positive definite (eigenvalue {lam:.3e} at {loc})")
        if self.check_gauduchon:
            defect = gauduchon_defect(grid, self.alpha)
            if defect > GAUDUCHON_TOL:
                raise ValueError(f"alpha is not Gauduchon (defect {defect:.3e})")
        self._bg = _Background(grid, self.alpha)
        lam, loc = min_eigenvalue(self.reference_form(self.T_hat).mat)
        if lam <= EPS_POS:
            raise CertificateError(f"certificate does not give a positive form at T_hat={self.T_hat} "
                                   f"(eigenvalue {lam:.3e} at {loc})", lam, loc)

    @property
    def n(self) -> int:
        return self.grid.n

    def log_volume(self) -> np.ndarray:
        """log(Omega / dx) for Omega = omega0^n exp(phi_cert / ((n-1) T_hat))."""
        return log_det(self.omega0) + self.phi_cert / ((self.n - 1) * self.T_hat)

    def reference_form(self, s: float | None = None) -> FormN1N1:
        """hat omega_s^{n-1}/(n-1)!: the right-hand side with Ric(Omega) in place of Ric(omega)."""
        s = self.s if s is None else s
        return pq_to_n1n1(self._bg.rhs(self.omega0, s, self.log_volume()))


@dataclass
class ContinuitySolution:
    s: float
    omega_n1: FormN1N1
    omega: Form11
    u: np.ndarray
    defect: float
    solve: ContinuationResult | None = None
    diagnostics: dict = field(default_factory=dict)


def reduce(instance: ContinuityInstance, tol_gauduchon: float = GAUDUCHON_TOL) -> MAProblem:
    """Scalar problem whose solution psi gives u = psi / s."""
    inst = instance
    if inst.s <= 0:
        raise ValueError("reduce needs s > 0")
    n = inst.n
    ref = inst.reference_form()
    lam, loc = min_eigenvalue(ref.mat)
    if lam <= EPS_POS:
        raise CertificateError(f"reference form not positive at s={inst.s} (eigenvalue {lam:.3e} at {loc})",
                               lam, loc)
    varpi = starN1N1(ref, inst.alpha)
    G = inst.phi_cert / inst.T_hat + (n - 1) * (log_det(inst.omega0) - log_det(inst.alpha))
    return MAProblem(inst.grid, inst.alpha, varpi, G, 1.0 / inst.s, tol_gauduchon=tol_gauduchon,
                     check_gauduchon=False)


def continuity_defect(grid: TorusGrid, omega: Form11, omega0: Form11, alpha: Form11, s: float) -> float:
    """sup-norm of omega^{n-1} - Phi-type right-hand side built from Ric(omega), unnormalised."""
    omega, omega0, alpha = _on_grid(grid, omega), _on_grid(grid, omega0), _on_grid(grid, alpha)
    bg = _Background(grid, alpha)
    lhs = n1n1_to_pq(power_n_minus_1(omega))
    # -i ddbar log det omega is chern_ricci(omega); rhs() takes the potential form
    ric = chern_ricci(grid, omega)
    rhs = n1n1_to_pq(power_n_minus_1(omega0)) - wedge(form11_to_pq(ric), bg.A).scale(s)
    if bg.dbar_A is not None:
        L = log_det(omega) - bg.logdet_alpha
        idl = PQForm(1, 0, grid.n, 1j * gradient_holo(grid, L)[..., :, None])
        rhs = rhs + re_part(wedge(idl, bg.dbar_A)).scale(s)
    return (lhs - rhs).sup_norm() * math.factorial(grid.n - 1)


def solve_at_s(instance: ContinuityInstance, cfg: SolverConfig | None = None,
               defect_factor: float = 100.0, polish_tol: float = 1e-11) -> ContinuitySolution:
    """omega(s) for the instance's s, through the scalar reduction.

    The defect check differentiates the solver residual twice, so the scalar
    solution is first polished to ``polish_tol`` when that is tighter than
    ``cfg.tol`` (skipped silently if round-off prevents it).
    """
    inst = instance
    cfg = cfg or SolverConfig()
    grid, n = inst.grid, inst.n
    if inst.s == 0:
        return ContinuitySolution(0.0, power_n_minus_1(inst.omega0), inst.omega0,
                                  np.zeros(grid.shape), 0.0)
    prob = reduce(inst)
    result = continuation_solve(prob, cfg)
    psi = result.phi
    if polish_tol < cfg.tol:
        try:
            psi, steps, rn, _ = newton_solve(psi, 1.0, prob, cfg, polish_tol, result.history,
                                             len(result.history))
            result.newton_steps += steps
        except SolverError as exc:
            log.info("polishing stopped early: %s", exc)
    u = psi / inst.s
    ref = pq_to_n1n1(inst._bg.rhs(inst.omega0, inst.s, inst.log_volume()))
    corr = pq_to_n1n1(inst._bg.correction(u).scale(inst.s / (n - 1)))
    omega_n1 = ref + corr
    try:
        omega = root_n_minus_1(omega_n1, margin=0.0)
    except ValueError as exc:
        raise ReconstructionError(f"reconstructed omega^(n-1) is not positive: {exc}") from exc
    defect = continuity_defect(grid, omega, inst.omega0, inst.alpha, inst.s)
    # the star route is an independent check of the reconstruction
    star_gap = (star11(assemble_tilde_omega(psi, prob), inst.alpha) - omega_n1).mat
    diagnostics = {"star_route_gap": float(np.abs(star_gap).max()),
                   "min_eig_omega": min_eigenvalue(omega.mat)[0],
                   "newton_steps": result.newton_steps, "t_path": list(result.t_path)}
    limit = defect_factor * cfg.tol
    if defect > limit:
        raise ReconstructionError(f"continuity defect {defect:.3e} exceeds {limit:.1e}")
    return ContinuitySolution(inst.s, omega_n1, omega, u, defect, result, diagnostics)


def recover_u(omega: Form11, instance: ContinuityInstance) -> np.ndarray:
    """u = log(det omega^{n-1} / (e^{phi/T_hat} det omega0^{n-1}))."""
    n = instance.n
    return (n - 1) * (log_det(omega) - log_det(instance.omega0)) - instance.phi_cert / instance.T_hat


def bootstrap_certificate(sol: ContinuitySolution, omega0: Form11, s_new: float) -> tuple[float, np.ndarray]:
    """Certificate (T_hat, phi) for s_new built from a solution at a smaller s.

    With phi = s_new (n-1) log(det omega(s) / det omega0) and T_hat = s_new the
    reference form at s_new is the continuity right-hand side evaluated on
    omega(s); it equals omega(s)^{n-1} when s_new = s, hence stays positive
    for nearby s_new.
    """
    n = sol.omega.n
    phi = s_new * (n - 1) * (log_det(sol.omega) - log_det(omega0))
    return s_new, phi


@dataclass
class TEstimateConfig:
    s_start: float = 0.05
    growth: float = 2.0
    s_max: float = 4.0
    s_resolution: float = 0.05
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not (self.s_start > 0 and self.s_max >= self.s_start and self.s_resolution > 0):
            raise ValueError("need 0 < s_start <= s_max and s_resolution > 0")
        if not self.growth > 1:
            raise ValueError("growth must exceed 1")


@dataclass
class TEstimate:
    lower_bound: float
    reached_s_max: bool
    message: str
    attempts: list = field(default_factory=list)
    kind: str = "numerical lower bound for T"


def estimate_T(grid: TorusGrid, omega0: Form11, alpha: Form11,
               cfg: TEstimateConfig | None = None) -> TEstimate:
    """Largest s (up to cfg.s_max) for which a solution was found and verified.

    Every value is a lower bound for the maximal time: the search cannot
    certify that no certificate exists beyond it.
    """
    cfg = cfg or TEstimateConfig()
    omega0, alpha = _on_grid(grid, omega0), _on_grid(grid, alpha)
    attempts: list = []
    best: ContinuitySolution | None = None

    def attempt(s: float) -> ContinuitySolution | None:
        tries = []
        if best is not None:
            tries.append(("bootstrap",) + bootstrap_certificate(best, omega0, s))
        tries.append(("naive", s, None))
        for kind, T_hat, phi in tries:
            try:
                inst = ContinuityInstance(grid, omega0, alpha, s, T_hat, phi)
                sol = solve_at_s(inst, cfg.solver)
            except (CertificateError, SolverError, ReconstructionError, NotPositiveError) as exc:
                attempts.append({"s": s, "certificate": kind, "ok": False, "reason": str(exc)})
                log.info("s=%.5f (%s certificate) failed: %s", s, kind, exc)
                continue
            attempts.append({"s": s, "certificate": kind, "ok": True, "defect": sol.defect,
                             "newton_steps": sol.diagnostics.get("newton_steps")})
            return sol
        return None

    s_ok, s_bad = 0.0, None
    s = cfg.s_start
    while True:
        sol = attempt(s)
        if sol is None:
            s_bad = s
            break
        best, s_ok = sol, s
        if s >= cfg.s_max:
            break
        s = min(cfg.s_max, s * cfg.growth)
    if s_bad is not None:
        while s_bad - s_ok > cfg.s_resolution:
            mid = 0.5 * (s_ok + s_bad)
            sol = attempt(mid)
            if sol is None:
                s_bad = mid
            else:
                best, s_ok = sol, mid
    reached = s_bad is None
    if reached:
        message = f"no obstruction found up to s_max={cfg.s_max}"
    else:
        message = f"solutions verified up to s={s_ok:.6g}; first failure at s={s_bad:.6g}"
    return TEstimate(s_ok, reached, message, attempts)
