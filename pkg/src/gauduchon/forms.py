"""Pointwise exterior algebra of (p,q)-forms on C^n, n <= 3.

A :class:`PQForm` stores its strict components: ``coeffs[..., I, J]`` is the
coefficient of ``dz^I ^ dzbar^J`` for strictly increasing multi-indices I, J
(enumerated in ``itertools.combinations`` order).  This agrees with the
convention phi = 1/(p! q!) phi_{i1..ip j1bar..jqbar} dz^{i1}^...^dzbar^{jq}
for the fully antisymmetric tensor, which :func:`to_full` / :func:`from_full`
convert to and from.

Real (1,1)-forms sqrt(-1) g_{i jbar} dz^i ^ dzbar^j are held as :class:`Form11`
(the Hermitian matrix g).  Real (n-1,n-1)-forms are held as :class:`FormN1N1`
whose matrix ``mat[l, k]`` is psi^{lbar k} in the sign convention

    psi = (sqrt(-1))^{n-1} sum_{k,l} (-1)^{n(n+1)/2+k+l+1} psi^{lbar k}
          dz^1^..^(dz^k omitted)^..^dz^n ^ dzbar^1^..^(dzbar^l omitted)^..^dzbar^n.

That sign lives only in :func:`n1n1_to_pq` and :func:`pq_to_n1n1`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

EPS_POS = 1e-8


@lru_cache(maxsize=None)
def subsets(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    return tuple(itertools.combinations(range(n), k))


@lru_cache(maxsize=None)
def subset_index(n: int, k: int) -> dict[tuple[int, ...], int]:
    return {s: a for a, s in enumerate(subsets(n, k))}


def perm_sign(seq) -> int:
    """Sign of the permutation sorting ``seq`` (0 if an entry repeats)."""
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0
    sign = 1
    for a in range(len(seq)):
        for b in range(a + 1, len(seq)):
            if seq[a] > seq[b]:
                sign = -sign
    return sign


def complement(n: int, s: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(i for i in range(n) if i not in s)


@dataclass(frozen=True)
class PQForm:
    p: int
    q: int
    n: int
    coeffs: np.ndarray

    def __post_init__(self):
        if not (0 <= self.p <= self.n and 0 <= self.q <= self.n):
            raise ValueError(f"bidegree ({self.p},{self.q}) invalid for n={self.n}")
        want = (math.comb(self.n, self.p), math.comb(self.n, self.q))
        if self.coeffs.shape[-2:] != want:
            raise ValueError(f"coefficient block {self.coeffs.shape[-2:]} != {want}")

    @property
    def field_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-2]

    @property
    def degree(self) -> int:
        return self.p + self.q

    def _like(self, other: PQForm) -> None:
        if (self.p, self.q, self.n) != (other.p, other.q, other.n):
            raise ValueError("bidegree mismatch")

    def __add__(self, other: PQForm) -> PQForm:
        self._like(other)
        return PQForm(self.p, self.q, self.n, self.coeffs + other.coeffs)

    def __sub__(self, other: PQForm) -> PQForm:
        self._like(other)
        return PQForm(self.p, self.q, self.n, self.coeffs - other.coeffs)

    def __neg__(self) -> PQForm:
        return PQForm(self.p, self.q, self.n, -self.coeffs)

    def scale(self, c) -> PQForm:
        """Multiply by a scalar or a scalar field."""
        c = np.asarray(c)
        return PQForm(self.p, self.q, self.n, c[..., None, None] * self.coeffs)

    def __mul__(self, c) -> PQForm:
        return self.scale(c)

    __rmul__ = __mul__

    def conj(self) -> PQForm:
        """Complex conjugate form, of bidegree (q, p)."""
        sign = -1 if (self.p * self.q) % 2 else 1
        return PQForm(self.q, self.p, self.n, sign * np.conj(np.swapaxes(self.coeffs, -1, -2)))

    def sup_norm(self) -> float:
        return float(np.abs(self.coeffs).max(initial=0.0))

    @classmethod
    def zeros(cls, p: int, q: int, n: int, field_shape: tuple[int, ...] = ()) -> PQForm:
        return cls(p, q, n, np.zeros(field_shape + (math.comb(n, p), math.comb(n, q)), dtype=complex))

    @classmethod
    def constant(cls, n: int, value=1.0) -> PQForm:
        """The (0,0)-form (function) ``value``."""
        value = np.asarray(value, dtype=complex)
        return cls(0, 0, n, value[..., None, None])

    @classmethod
    def basis(cls, n: int, holo: tuple[int, ...], anti: tuple[int, ...]) -> PQForm:
        """dz^{holo} ^ dzbar^{anti} (indices in any order; sign absorbed)."""
        form = cls.zeros(len(holo), len(anti), n)
        s = perm_sign(holo) * perm_sign(anti)
        if s:
            a = subset_index(n, len(holo))[tuple(sorted(holo))]
            b = subset_index(n, len(anti))[tuple(sorted(anti))]
            form.coeffs[a, b] = s
        return form


@lru_cache(maxsize=None)
def _wedge_table(n, p1, q1, p2, q2):
    out_h = subset_index(n, p1 + p2)
    out_a = subset_index(n, q1 + q2)
    base = -1 if (q1 * p2) % 2 else 1
    rows = []
    for ia, I in enumerate(subsets(n, p1)):
        for ib, K in enumerate(subsets(n, p2)):
            sh = perm_sign(I + K)
            if not sh:
                continue
            for ja, J in enumerate(subsets(n, q1)):
                for jb, L in enumerate(subsets(n, q2)):
                    sa = perm_sign(J + L)
                    if not sa:
                        continue
                    rows.append((ia, ja, ib, jb, out_h[tuple(sorted(I + K))],
                                 out_a[tuple(sorted(J + L))], base * sh * sa))
    return tuple(rows)


def wedge(a: PQForm, b: PQForm) -> PQForm:
    """Exterior product a ^ b (coefficient fields broadcast against each other)."""
    if a.n != b.n:
        raise ValueError("forms live on different dimensions")
    n = a.n
    p, q = a.p + b.p, a.q + b.q
    if p > n or q > n:
        raise ValueError(f"wedge overflows bidegree: ({p},{q}) with n={n}")
    shape = np.broadcast_shapes(a.field_shape, b.field_shape)
    out = np.zeros(shape + (math.comb(n, p), math.comb(n, q)), dtype=complex)
    for ia, ja, ib, jb, ic, jc, s in _wedge_table(n, a.p, a.q, b.p, b.q):
        term = a.coeffs[..., ia, ja] * b.coeffs[..., ib, jb]
        if s > 0:
            out[..., ic, jc] += term
        else:
            out[..., ic, jc] -= term
    return PQForm(p, q, n, out)


def wedge_power(a: PQForm, k: int) -> PQForm:
    """a^k (k-fold wedge); a^0 is the constant function 1."""
    out = PQForm.constant(a.n, 1.0)
    for _ in range(k):
        out = wedge(out, a)
    return out


def re_part(phi: PQForm) -> PQForm:
    if phi.p != phi.q:
        raise ValueError("real part is only defined for (p,p)-forms")
    return PQForm(phi.p, phi.q, phi.n, 0.5 * (phi.coeffs + phi.conj().coeffs))


def to_full(phi: PQForm) -> np.ndarray:
    """Fully antisymmetric coefficient tensor, shape field + (n,)*(p+q)."""
    n, p, q = phi.n, phi.p, phi.q
    full = np.zeros(phi.field_shape + (n,) * (p + q), dtype=complex)
    hidx = subset_index(n, p)
    aidx = subset_index(n, q)
    for I in itertools.permutations(range(n), p):
        sI = perm_sign(I)
        a = hidx[tuple(sorted(I))]
        for J in itertools.permutations(range(n), q):
            b = aidx[tuple(sorted(J))]
            full[(...,) + I + J] = sI * perm_sign(J) * phi.coeffs[..., a, b]
    return full


def from_full(full: np.ndarray, p: int, q: int, n: int) -> PQForm:
    out = PQForm.zeros(p, q, n, full.shape[: full.ndim - p - q])
    for a, I in enumerate(subsets(n, p)):
        for b, J in enumerate(subsets(n, q)):
            out.coeffs[..., a, b] = full[(...,) + I + J]
    return out


# ----------------------------------------------------------------------------
# (1,1) and (n-1,n-1) forms as Hermitian matrix fields


@dataclass(frozen=True)
class Form11:
    """Real (1,1)-form sqrt(-1) g_{i jbar} dz^i ^ dzbar^j; ``mat[..., i, j] = g_{i jbar}``."""

    mat: np.ndarray

    @property
    def n(self) -> int:
        return self.mat.shape[-1]

    @property
    def field_shape(self) -> tuple[int, ...]:
        return self.mat.shape[:-2]

    def __add__(self, other: Form11) -> Form11:
        return Form11(self.mat + other.mat)

    def __sub__(self, other: Form11) -> Form11:
        return Form11(self.mat - other.mat)

    def scale(self, c) -> Form11:
        return Form11(np.asarray(c)[..., None, None] * self.mat)

    @classmethod
    def identity(cls, n: int, field_shape: tuple[int, ...] = ()) -> Form11:
        return cls(np.broadcast_to(np.eye(n, dtype=complex), field_shape + (n, n)).copy())

    @classmethod
    def diag(cls, *entries) -> Form11:
        """Diagonal form from scalars or equally shaped scalar fields."""
        arrs = np.broadcast_arrays(*[np.asarray(e, dtype=complex) for e in entries])
        n = len(arrs)
        mat = np.zeros(arrs[0].shape + (n, n), dtype=complex)
        for i, e in enumerate(arrs):
            mat[..., i, i] = e
        return cls(mat)


@dataclass(frozen=True)
class FormN1N1:
    """Real (n-1,n-1)-form stored as the Hermitian matrix ``mat[..., l, k] = psi^{lbar k}``."""

    mat: np.ndarray

    @property
    def n(self) -> int:
        return self.mat.shape[-1]

    @property
    def field_shape(self) -> tuple[int, ...]:
        return self.mat.shape[:-2]

    def __add__(self, other: FormN1N1) -> FormN1N1:
        return FormN1N1(self.mat + other.mat)

    def __sub__(self, other: FormN1N1) -> FormN1N1:
        return FormN1N1(self.mat - other.mat)

    def scale(self, c) -> FormN1N1:
        return FormN1N1(np.asarray(c)[..., None, None] * self.mat)


def hermitian_part(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + np.conj(np.swapaxes(mat, -1, -2)))


def hermitian_defect(mat: np.ndarray) -> float:
    return float(np.abs(mat - np.conj(np.swapaxes(mat, -1, -2))).max(initial=0.0))


def form11_to_pq(phi: Form11) -> PQForm:
    return PQForm(1, 1, phi.n, 1j * phi.mat)


def pq_to_form11(phi: PQForm) -> Form11:
    if (phi.p, phi.q) != (1, 1):
        raise ValueError("expected a (1,1)-form")
    return Form11(-1j * phi.coeffs)


def _n1n1_sign(n: int, k: int, l: int) -> complex:
    # 0-based k, l: the parity of k + l matches the 1-based convention
    return (1j) ** (n - 1) * (-1) ** ((n * (n + 1) // 2 + k + l + 1) % 2)


def n1n1_to_pq(psi: FormN1N1) -> PQForm:
    n = psi.n
    idx = subset_index(n, n - 1)
    out = PQForm.zeros(n - 1, n - 1, n, psi.field_shape)
    for k in range(n):
        a = idx[complement(n, (k,))]
        for l in range(n):
            b = idx[complement(n, (l,))]
            out.coeffs[..., a, b] = _n1n1_sign(n, k, l) * psi.mat[..., l, k]
    return out


def pq_to_n1n1(phi: PQForm) -> FormN1N1:
    n = phi.n
    if (phi.p, phi.q) != (n - 1, n - 1):
        raise ValueError("expected an (n-1,n-1)-form")
    idx = subset_index(n, n - 1)
    mat = np.empty(phi.field_shape + (n, n), dtype=complex)
    for k in range(n):
        a = idx[complement(n, (k,))]
        for l in range(n):
            b = idx[complement(n, (l,))]
            mat[..., l, k] = phi.coeffs[..., a, b] / _n1n1_sign(n, k, l)
    return FormN1N1(mat)


# ----------------------------------------------------------------------------
# Hodge star


def compound(mat: np.ndarray, k: int) -> np.ndarray:
    """k-th compound matrix: minors det(mat[L, I]) over k-subsets L, I."""
    n = mat.shape[-1]
    if k == 0:
        return np.ones(mat.shape[:-2] + (1, 1), dtype=mat.dtype)
    if k == 1:
        return mat
    if k == n:
        return mat_det(mat)[..., None, None]
    S = subsets(n, k)
    out = np.empty(mat.shape[:-2] + (len(S), len(S)), dtype=mat.dtype)
    for a, L in enumerate(S):
        rows = mat[..., list(L), :]
        for b, I in enumerate(S):
            out[..., a, b] = mat_det(rows[..., list(I)])
    return out


def _metric_data(alpha: Form11):
    g = alpha.mat
    try:
        ginv = mat_inv(g)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("star metric is singular") from exc
    return ginv, mat_det(g)


def hodge_star(phi: PQForm, alpha: Form11) -> PQForm:
    """Hodge star with respect to alpha^n / n!, sending (p,q) to (n-q, n-p).

    The generalized Kronecker deltas of the coordinate formula collapse, on
    strict components, to complement signs; the contractions with the inverse
    metric become products with its compound matrices.
    """
    n, p, q = phi.n, phi.p, phi.q
    if alpha.n != n:
        raise ValueError("metric and form dimensions differ")
    ginv, detg = _metric_data(alpha)
    cp = compound(ginv, p)
    cq = compound(ginv, q)
    raised = np.einsum("...li,...ij,...jk->...lk", cp, phi.coeffs, cq)
    pref = (1j) ** n * (-1) ** ((n * p + n * (n - 1) // 2) % 2) * detg
    out = np.zeros(raised.shape[:-2] + (math.comb(n, n - q), math.comb(n, n - p)), dtype=complex)
    hidx = subset_index(n, n - q)
    aidx = subset_index(n, n - p)
    for a, L in enumerate(subsets(n, p)):
        Lc = complement(n, L)
        sL = perm_sign(L + Lc)
        for b, K in enumerate(subsets(n, q)):
            Kc = complement(n, K)
            s = sL * perm_sign(K + Kc)
            out[..., hidx[Kc], aidx[Lc]] = s * pref * raised[..., a, b]
    return PQForm(n - q, n - p, n, out)


@lru_cache(maxsize=None)
def levi_civita(n: int) -> np.ndarray:
    eps = np.zeros((n,) * n)
    for perm in itertools.permutations(range(n)):
        eps[perm] = perm_sign(perm)
    return eps


_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def hodge_star_literal(full: np.ndarray, p: int, q: int, g: np.ndarray) -> np.ndarray:
    """Coordinate Hodge star at a single point, on full antisymmetric tensors.

    Evaluates the coefficient formula term by term: raise every index with
    g^{lbar i}, contract with two generalized Kronecker deltas (Levi-Civita
    symbols), divide by (n-p)!(n-q)!p!q!.  Returns the full tensor of the
    (n-q, n-p) result.  Intended as an independent check of :func:`hodge_star`.
    """
    n = g.shape[0]
    ginv = np.linalg.inv(g)
    # g^{lbar i} = ginv[l, i] since sum_l ginv[l, j] g[k, l] = delta_kj
    ii = _LETTERS[:p]
    jj = _LETTERS[p : p + q]
    ll = _LETTERS[p + q : 2 * p + q]
    kk = _LETTERS[2 * p + q : 2 * p + 2 * q]
    terms = [ii + jj]
    terms += [ll[m] + ii[m] for m in range(p)]
    terms += [jj[m] + kk[m] for m in range(q)]
    raised = np.einsum(",".join(terms) + "->" + ll + kk, full, *([ginv] * (p + q)))
    off = 2 * p + 2 * q
    bb = _LETTERS[off : off + n - p]
    aa = _LETTERS[off + n - p : off + 2 * n - p - q]
    eps = levi_civita(n)
    x = np.einsum(f"{ll}{kk},{ll}{bb},{kk}{aa}->{aa}{bb}", raised, eps, eps)
    pref = (1j) ** n * (-1) ** ((n * p + n * (n - 1) // 2) % 2) * np.linalg.det(g)
    pref /= math.factorial(n - p) * math.factorial(n - q) * math.factorial(p) * math.factorial(q)
    # sum over all ordered (a, b) equals (n-q)!(n-p)! times the strict sum
    return pref * x * math.factorial(n - p) * math.factorial(n - q)


# ----------------------------------------------------------------------------
# determinants, powers, roots, P_alpha


def mat_det(m: np.ndarray) -> np.ndarray:
    """Batched determinant; explicit formulas for 2x2 and 3x3 (much faster than LAPACK loops)."""
    k = m.shape[-1]
    if k == 1:
        return m[..., 0, 0].copy()
    if k == 2:
        return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    if k == 3:
        return (m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
                - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
                + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]))
    return np.linalg.det(m)


def mat_adj(m: np.ndarray) -> np.ndarray:
    """Batched adjugate, det(m) * inv(m), without dividing."""
    k = m.shape[-1]
    if k == 2:
        out = np.empty_like(m)
        out[..., 0, 0] = m[..., 1, 1]
        out[..., 1, 1] = m[..., 0, 0]
        out[..., 0, 1] = -m[..., 0, 1]
        out[..., 1, 0] = -m[..., 1, 0]
        return out
    if k == 3:
        out = np.empty_like(m)
        for i in range(3):
            i1, i2 = (i + 1) % 3, (i + 2) % 3
            for j in range(3):
                j1, j2 = (j + 1) % 3, (j + 2) % 3
                # cyclic minors carry the cofactor sign already
                out[..., j, i] = m[..., i1, j1] * m[..., i2, j2] - m[..., i1, j2] * m[..., i2, j1]
        return out
    return np.linalg.det(m)[..., None, None] * np.linalg.inv(m)


def mat_inv(m: np.ndarray) -> np.ndarray:
    det = mat_det(m)
    if np.any(det == 0) or not np.all(np.isfinite(det)):
        raise np.linalg.LinAlgError("singular matrix field")
    return mat_adj(m) / det[..., None, None]


def det11(phi: Form11) -> np.ndarray:
    return mat_det(phi.mat)


def detN1N1(psi: FormN1N1) -> np.ndarray:
    return mat_det(psi.mat)


def power_n_minus_1(phi: Form11) -> FormN1N1:
    """phi^{n-1}/(n-1)! as an (n-1,n-1)-form: psi^{lbar k} = det(phi) * inverse[l, k]."""
    return FormN1N1(mat_adj(phi.mat))


def power_n_minus_1_wedge(phi: Form11) -> FormN1N1:
    """Same as :func:`power_n_minus_1`, through literal wedge products."""
    n = phi.n
    top = wedge_power(form11_to_pq(phi), n - 1)
    return pq_to_n1n1(top.scale(1.0 / math.factorial(n - 1)))


def min_eigenvalue(mat: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Smallest eigenvalue of a Hermitian matrix field and where it occurs."""
    h = hermitian_part(mat)
    if h.shape[-1] == 2:
        a, d = h[..., 0, 0].real, h[..., 1, 1].real
        ev = 0.5 * (a + d) - np.hypot(0.5 * (a - d), np.abs(h[..., 0, 1]))
    else:
        ev = np.linalg.eigvalsh(h)[..., 0]
    if ev.ndim == 0:
        return float(ev), ()
    loc = np.unravel_index(int(np.argmin(ev)), ev.shape)
    return float(ev[loc]), tuple(int(i) for i in loc)


def is_positive(mat: np.ndarray, margin: float = EPS_POS) -> bool:
    return min_eigenvalue(mat)[0] > margin


def root_n_minus_1(psi: FormN1N1, margin: float = 0.0) -> Form11:
    """The positive (1,1)-form whose (n-1)-th power over (n-1)! is psi."""
    n = psi.n
    lam, loc = min_eigenvalue(psi.mat)
    if lam <= margin:
        raise ValueError(f"(n-1,n-1)-form not positive definite: eigenvalue {lam:.3e} at {loc}")
    det = mat_det(psi.mat).real
    inv = mat_inv(psi.mat)
    return Form11(hermitian_part((det ** (1.0 / (n - 1)))[..., None, None] * inv))


def trace_alpha(xi: Form11, alpha: Form11) -> np.ndarray:
    """tr_alpha xi = alpha^{jbar i} xi_{i jbar}."""
    ainv = mat_inv(alpha.mat)
    return np.einsum("...ji,...ij->...", ainv, xi.mat)


def p_alpha(xi: Form11, alpha: Form11) -> Form11:
    """(tr_alpha(xi) alpha - xi) / (n - 1)."""
    n = alpha.n
    tr = trace_alpha(xi, alpha)
    return Form11((tr[..., None, None] * alpha.mat - xi.mat) / (n - 1))


def p_alpha_star(xi: Form11, alpha: Form11) -> Form11:
    """*(xi ^ alpha^{n-2}) / (n-1)!, the star route to :func:`p_alpha`."""
    n = alpha.n
    apow = wedge_power(form11_to_pq(alpha), n - 2)
    prod = wedge(form11_to_pq(xi), apow)
    return pq_to_form11(hodge_star(prod, alpha).scale(1.0 / math.factorial(n - 1)))


def p_alpha_inverse(eta: Form11, alpha: Form11) -> Form11:
    """xi with p_alpha(xi) = eta: (tr_alpha eta) alpha - (n-1) eta."""
    n = alpha.n
    tr = trace_alpha(eta, alpha)
    return Form11(tr[..., None, None] * alpha.mat - (n - 1) * eta.mat)


def star11(phi: Form11, alpha: Form11) -> FormN1N1:
    """Hodge star of a real (1,1)-form, as an (n-1,n-1)-form."""
    return pq_to_n1n1(hodge_star(form11_to_pq(phi), alpha))


def starN1N1(psi: FormN1N1, alpha: Form11) -> Form11:
    """Hodge star of a real (n-1,n-1)-form, as a (1,1)-form."""
    return pq_to_form11(hodge_star(n1n1_to_pq(psi), alpha))


# ----------------------------------------------------------------------------
# exterior derivatives of form fields on a torus grid


def _form_derivative(grid, phi: PQForm, holomorphic: bool) -> PQForm:
    from .grid import d_antiholo, d_holo

    grid.check_field(phi.coeffs)
    n = phi.n
    out = None
    for k in range(n):
        if holomorphic:
            dk = d_holo(grid, phi.coeffs, k)
            one = PQForm.basis(n, (k,), ())
        else:
            dk = d_antiholo(grid, phi.coeffs, k)
            one = PQForm.basis(n, (), (k,))
        term = wedge(one, PQForm(phi.p, phi.q, n, dk))
        out = term if out is None else out + term
    return out


def d_form(grid, phi: PQForm) -> PQForm:
    """del phi = sum_k dz^k ^ d_k(phi)."""
    return _form_derivative(grid, phi, True)


def dbar_form(grid, phi: PQForm) -> PQForm:
    """delbar phi = sum_k dzbar^k ^ d_kbar(phi)."""
    return _form_derivative(grid, phi, False)


def scalar_to_pq(f: np.ndarray, n: int) -> PQForm:
    return PQForm.constant(n, f)
