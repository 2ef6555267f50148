"""Periodic grids on flat complex tori and spectral complex derivatives.

The torus C^n / (period * Z^{2n}) is sampled on a uniform grid with ``res``
points per real axis.  Real coordinates are ordered x^1..x^{2n} and the
complex coordinates are z^i = x^i + sqrt(-1) x^{n+i}.  Scalar fields are
numpy arrays of shape ``(res,) * 2n`` in C (row-major) order over that axis
sequence; matrix and form fields append their component axes at the end.

Axis indices ``i`` in this module are 0-based (``0 <= i < n``).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

SUPPORTED_DIMS = (2, 3)
MAX_RES_N3 = 16


@dataclass(frozen=True)
class TorusGrid:
    n: int
    res: int
    period: float = 1.0

    def __post_init__(self):
        if self.n not in SUPPORTED_DIMS:
            raise ValueError(f"complex dimension must be one of {SUPPORTED_DIMS}, got {self.n}")
        if self.res < 4 or self.res % 2:
            raise ValueError(f"res must be even and >= 4, got {self.res}")
        if self.res & (self.res - 1):
            raise ValueError(f"res must be a power of two, got {self.res}")
        if self.n == 3 and self.res > MAX_RES_N3:
            raise ValueError(f"n=3 grids are limited to res <= {MAX_RES_N3}")
        if not self.period > 0:
            raise ValueError("period must be positive")

    @property
    def ndim(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.res,) * self.ndim

    @property
    def size(self) -> int:
        return self.res ** self.ndim

    @property
    def spacing(self) -> float:
        return self.period / self.res

    def axis(self) -> np.ndarray:
        return np.arange(self.res) * self.spacing

    def coords(self) -> list[np.ndarray]:
        """Real coordinate arrays x^1..x^{2n}, each of full grid shape."""
        return np.meshgrid(*([self.axis()] * self.ndim), indexing="ij", sparse=False)

    def coord(self, a: int) -> np.ndarray:
        """Real coordinate x^{a+1} as a broadcastable (sparse) array."""
        shape = [1] * self.ndim
        shape[a] = self.res
        return self.axis().reshape(shape)

    @cached_property
    def _wavenumbers(self) -> np.ndarray:
        k = 2 * np.pi * np.fft.fftfreq(self.res, d=self.spacing)
        # Nyquist mode has no odd derivative on an even grid; zeroing it keeps real fields real.
        k[self.res // 2] = 0.0
        return k

    @cached_property
    def _half_wavenumbers(self) -> np.ndarray:
        k = 2 * np.pi * np.fft.rfftfreq(self.res, d=self.spacing)
        k[-1] = 0.0
        return k

    @property
    def half_shape(self) -> tuple[int, ...]:
        """Shape of :meth:`rfft` output (last grid axis halved)."""
        return self.shape[:-1] + (self.res // 2 + 1,)

    def wavenumber(self, a: int, half: bool = False) -> np.ndarray:
        """Angular wavenumbers along axis ``a``; ``half`` selects the rfft layout."""
        shape = [1] * self.ndim
        if half and a == self.ndim - 1:
            shape[a] = self.res // 2 + 1
            return self._half_wavenumbers.reshape(shape)
        shape[a] = self.res
        return self._wavenumbers.reshape(shape)

    def symbol_holo(self, i: int) -> np.ndarray:
        """Fourier multiplier of d/dz^i = (d_{x^i} - sqrt(-1) d_{x^{n+i}}) / 2."""
        self._check_axis(i)
        return 0.5 * (1j * self.wavenumber(i) + self.wavenumber(self.n + i))

    def symbol_antiholo(self, j: int) -> np.ndarray:
        """Fourier multiplier of d/dzbar^j = (d_{x^j} + sqrt(-1) d_{x^{n+j}}) / 2."""
        self._check_axis(j)
        return 0.5 * (1j * self.wavenumber(j) - self.wavenumber(self.n + j))

    def _check_axis(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise IndexError(f"complex axis {i} out of range for n={self.n}")

    def fft(self, f: np.ndarray) -> np.ndarray:
        return sfft.fftn(f, axes=tuple(range(self.ndim)))

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return sfft.ifftn(fh, axes=tuple(range(self.ndim)))

    def rfft(self, f: np.ndarray) -> np.ndarray:
        """Real-input transform over the grid axes (trailing axes untouched)."""
        return sfft.rfftn(f, axes=tuple(range(self.ndim)))

    def irfft(self, fh: np.ndarray) -> np.ndarray:
        return sfft.irfftn(fh, s=self.shape, axes=tuple(range(self.ndim)))

    @cached_property
    def _real_symbols(self) -> dict:
        # real-output pieces of d_i and d_i d_jbar on the rfft layout:
        #   d_i f          = irfft(g_re f^) + i irfft(g_im f^)
        #   d_i d_jbar f   = irfft(h_re f^) + i irfft(h_im f^)
        n = self.n
        kx = [self.wavenumber(i, half=True) for i in range(n)]
        ky = [self.wavenumber(n + i, half=True) for i in range(n)]
        out = {}
        for i in range(n):
            out["g", i] = (0.5j * kx[i], -0.5j * ky[i])
            for j in range(i, n):
                out["h", i, j] = (-0.25 * (kx[i] * kx[j] + ky[i] * ky[j]),
                                  0.25 * (ky[i] * kx[j] - kx[i] * ky[j]))
        return out

    def _expand(self, sym: np.ndarray, f: np.ndarray) -> np.ndarray:
        extra = f.ndim - self.ndim
        return sym.reshape(sym.shape + (1,) * extra)

    def check_field(self, f: np.ndarray) -> None:
        if f.shape[: self.ndim] != self.shape:
            raise ValueError(f"field shape {f.shape} does not start with grid shape {self.shape}")

    def mean(self, f: np.ndarray) -> np.ndarray:
        return f.mean(axis=tuple(range(self.ndim)))

    def random_smooth(self, rng: np.random.Generator, modes: int = 2, amplitude: float = 1.0,
                      extra_shape: tuple[int, ...] = ()) -> np.ndarray:
        """Random real trigonometric polynomial with wavenumbers |k_a| <= modes on every axis."""
        if 2 * modes >= self.res:
            raise ValueError("modes must be below the Nyquist limit")
        coeffs = np.zeros(self.shape + extra_shape, dtype=complex)
        idx = np.r_[0 : modes + 1, self.res - modes : self.res]
        sub = np.ix_(*([idx] * self.ndim))
        block = rng.standard_normal((len(idx),) * self.ndim + extra_shape) \
            + 1j * rng.standard_normal((len(idx),) * self.ndim + extra_shape)
        coeffs[sub] = block
        f = self.ifft(coeffs).real
        scale = np.abs(f).max(axis=tuple(range(self.ndim)))
        return amplitude * f / np.where(scale > 0, scale, 1.0)


def is_real_field(f: np.ndarray, rtol: float = 1e-12) -> bool:
    if not np.iscomplexobj(f):
        return True
    scale = np.abs(f).max(initial=0.0)
    return bool(np.abs(f.imag).max(initial=0.0) <= rtol * max(scale, np.finfo(float).tiny))


def _apply_real(grid: TorusGrid, fh: np.ndarray, pair) -> np.ndarray:
    re_sym, im_sym = pair
    re = grid.irfft(grid._expand(re_sym, fh) * fh)
    return re + 1j * grid.irfft(grid._expand(im_sym, fh) * fh)


def d_holo(grid: TorusGrid, f: np.ndarray, i: int) -> np.ndarray:
    """Spectral d/dz^i of a periodic field (trailing component axes allowed)."""
    grid.check_field(f)
    grid._check_axis(i)
    if not np.iscomplexobj(f):
        return _apply_real(grid, grid.rfft(f), grid._real_symbols["g", i])
    sym = grid.symbol_holo(i)
    return grid.ifft(grid._expand(sym, f) * grid.fft(f))


def d_antiholo(grid: TorusGrid, f: np.ndarray, j: int) -> np.ndarray:
    """Spectral d/dzbar^j of a periodic field (trailing component axes allowed)."""
    grid.check_field(f)
    grid._check_axis(j)
    if not np.iscomplexobj(f):
        return np.conj(d_holo(grid, f, j))
    sym = grid.symbol_antiholo(j)
    return grid.ifft(grid._expand(sym, f) * grid.fft(f))


def gradient_holo(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    """All d_i f stacked on a trailing axis of length n."""
    grid.check_field(f)
    out = np.empty(f.shape + (grid.n,), dtype=complex)
    if not np.iscomplexobj(f):
        return gradient_holo_hat(grid, grid.rfft(f), out)
    fh = grid.fft(f)
    for i in range(grid.n):
        out[..., i] = grid.ifft(grid._expand(grid.symbol_holo(i), f) * fh)
    return out


def gradient_holo_hat(grid: TorusGrid, fh: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """gradient_holo of a real field given its :meth:`TorusGrid.rfft`."""
    if out is None:
        out = np.empty(grid.shape + fh.shape[grid.ndim:] + (grid.n,), dtype=complex)
    for i in range(grid.n):
        out[..., i] = _apply_real(grid, fh, grid._real_symbols["g", i])
    return out


def i_ddbar(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    """Matrix field (d_i d_{jbar} f) of a real scalar field.

    The result is the coefficient matrix of the real (1,1)-form sqrt(-1) d dbar f
    and is Hermitian at every point.
    """
    grid.check_field(f)
    if f.shape != grid.shape:
        raise ValueError("i_ddbar expects a scalar field")
    if not is_real_field(f):
        raise ValueError("i_ddbar requires a real-valued field")
    return i_ddbar_hat(grid, grid.rfft(np.real(f)))


def i_ddbar_hat(grid: TorusGrid, fh: np.ndarray) -> np.ndarray:
    """i_ddbar of a real scalar field given its :meth:`TorusGrid.rfft`."""
    n = grid.n
    out = np.empty(grid.shape + (n, n), dtype=complex)
    for i in range(n):
        for j in range(i, n):
            re_sym, im_sym = grid._real_symbols["h", i, j]
            re = grid.irfft(re_sym * fh)
            if i == j:
                out[..., i, i] = re
                continue
            im = grid.irfft(im_sym * fh)
            out[..., i, j] = re + 1j * im
            out[..., j, i] = re - 1j * im
    return out


def laplacian_alpha(grid: TorusGrid, f: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """alpha^{jbar i} d_i d_{jbar} f for a positive Hermitian matrix field ``alpha``."""
    hess = i_ddbar(grid, f)
    ainv = _inverse_checked(alpha)
    return np.einsum("...ji,...ij->...", ainv, hess).real


def _inverse_checked(mat: np.ndarray) -> np.ndarray:
    try:
        inv = np.linalg.inv(mat)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("metric is singular at some grid point") from exc
    if not np.all(np.isfinite(inv)):
        raise np.linalg.LinAlgError("metric is singular at some grid point")
    return inv
