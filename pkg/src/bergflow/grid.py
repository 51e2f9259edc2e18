"""Periodic 2-D grids and the 1-D line grid, with derivatives, quadrature and
Fourier solves.

Fields are plain ``numpy`` arrays. On a :class:`PeriodicGrid2` a field has shape
``(ny, nx)`` (rows are ``y``), sampled at ``x_i = i/nx``, ``y_j = j/ny`` on the
unit torus. On a :class:`LineGrid` a field has shape ``(n,)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy import signal

from .errors import InputError

DERIVATIVES = ("x", "y", "xx", "yy", "xy")


@dataclass(frozen=True)
class PeriodicGrid2:
    """Uniform grid on the unit torus R^2/Z^2."""

    nx: int = 64
    ny: int = 64

    def __post_init__(self):
        for n in (self.nx, self.ny):
            if int(n) != n or n < 8 or n % 2:
                raise InputError(f"grid sizes must be even integers >= 8, got {self.nx}x{self.ny}")

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) / self.nx

    @cached_property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) / self.ny

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``(X, Y)`` node coordinates, each of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Angular wavenumbers ``2*pi*m`` broadcastable to the field shape."""
        kx = 2 * np.pi * sfft.fftfreq(self.nx, d=1.0 / self.nx)
        ky = 2 * np.pi * sfft.fftfreq(self.ny, d=1.0 / self.ny)
        return kx[None, :], ky[:, None]

    def refined(self, factor: int) -> "PeriodicGrid2":
        return PeriodicGrid2(self.nx * factor, self.ny * factor)


def check_field(values: np.ndarray, grid: PeriodicGrid2) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise InputError(f"field shape {values.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(values)):
        raise InputError("field contains non-finite samples")
    return values


def _spectral_symbol(grid: PeriodicGrid2, which: str) -> np.ndarray:
    kx, ky = grid.wavenumbers
    # odd derivatives drop the Nyquist mode so real fields stay real
    kx_odd = np.where(np.abs(kx) == np.pi * grid.nx, 0.0, kx)
    ky_odd = np.where(np.abs(ky) == np.pi * grid.ny, 0.0, ky)
    if which == "x":
        return 1j * kx_odd + 0 * ky
    if which == "y":
        return 1j * ky_odd + 0 * kx
    if which == "xx":
        return -(kx**2) + 0 * ky
    if which == "yy":
        return -(ky**2) + 0 * kx
    if which == "xy":
        return -(kx_odd * ky_odd)
    raise InputError(f"unknown derivative {which!r}; expected one of {DERIVATIVES}")


def _fd(values: np.ndarray, grid: PeriodicGrid2, which: str) -> np.ndarray:
    def d1(f, axis, h):
        return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2 * h)

    if which == "x":
        return d1(values, 1, grid.hx)
    if which == "y":
        return d1(values, 0, grid.hy)
    if which == "xx":
        return (np.roll(values, -1, 1) - 2 * values + np.roll(values, 1, 1)) / grid.hx**2
    if which == "yy":
        return (np.roll(values, -1, 0) - 2 * values + np.roll(values, 1, 0)) / grid.hy**2
    if which == "xy":
        return d1(d1(values, 1, grid.hx), 0, grid.hy)
    raise InputError(f"unknown derivative {which!r}; expected one of {DERIVATIVES}")


def diff2(values: np.ndarray, grid: PeriodicGrid2, which: str, mode: str = "spectral") -> np.ndarray:
    """Partial derivative ``which`` of a periodic field.

    ``mode="spectral"`` differentiates in Fourier space; ``mode="fd"`` uses
    second-order centered differences and exists as an independent check.
    """
    values = check_field(values, grid)
    if mode == "fd":
        return _fd(values, grid, which)
    if mode != "spectral":
        raise InputError(f"unknown differentiation mode {mode!r}")
    return apply_symbol(values, _spectral_symbol(grid, which))


def apply_symbol(values: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    """Apply a Fourier multiplier to a real periodic field."""
    return sfft.ifft2(sfft.fft2(values) * symbol).real


def gradient_all(values: np.ndarray, grid: PeriodicGrid2) -> dict[str, np.ndarray]:
    """All first and second derivatives from a single forward transform."""
    values = check_field(values, grid)
    coeffs = sfft.fft2(values)
    return {w: sfft.ifft2(coeffs * _spectral_symbol(grid, w)).real for w in DERIVATIVES}


def integrate(values: np.ndarray, density: np.ndarray | float, grid: PeriodicGrid2) -> float:
    """Periodic trapezoidal rule for ``int f * rho dx dy`` over the unit cell."""
    values = np.asarray(values, dtype=float)
    density = np.broadcast_to(np.asarray(density, dtype=float), grid.shape)
    if values.shape != grid.shape:
        raise InputError(f"field shape {values.shape} does not match grid {grid.shape}")
    return float(np.sum(values * density) * grid.hx * grid.hy)


def solve_symbol(rhs: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    """Invert a Fourier multiplier that vanishes only on the constant mode.

    The returned field has zero mean.
    """
    coeffs = sfft.fft2(rhs)
    sym = symbol.copy()
    sym[0, 0] = 1.0
    out = coeffs / sym
    out[0, 0] = 0.0
    return sfft.ifft2(out).real


def poisson_solve(rhs: np.ndarray, grid: PeriodicGrid2, tol: float = 1e-10) -> np.ndarray:
    """Mean-zero solution of ``u_xx + u_yy = rhs`` on the flat unit torus."""
    rhs = check_field(rhs, grid)
    mean = rhs.mean()
    if abs(mean) > tol * max(1.0, np.abs(rhs).max()):
        raise InputError(f"poisson_solve needs a mean-zero right-hand side (mean {mean:.3e})")
    return solve_symbol(rhs - mean, _spectral_symbol(grid, "xx") + _spectral_symbol(grid, "yy"))


def resample(values: np.ndarray, grid: PeriodicGrid2, target: PeriodicGrid2) -> np.ndarray:
    """Band-limited (Fourier) interpolation onto another periodic grid."""
    values = check_field(values, grid)
    if target == grid:
        return values.copy()
    out = signal.resample(values, target.ny, axis=0)
    return signal.resample(out, target.nx, axis=1)


# ---------------------------------------------------------------------------
# line grid for the circle-symmetric reduction


_D2_STENCIL = np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90])


@dataclass(frozen=True)
class LineGrid:
    """Uniform samples of ``t = log|z|^2`` on ``[-T, T]`` (endpoints included)."""

    n: int = 512
    T: float = 16.0
    decay_tol: float = 1e-6

    def __post_init__(self):
        if self.T < 8:
            raise InputError(f"LineGrid needs T >= 8, got {self.T}")
        if self.n < 16:
            raise InputError(f"LineGrid needs at least 16 samples, got {self.n}")

    @property
    def h(self) -> float:
        return 2 * self.T / (self.n - 1)

    @property
    def shape(self) -> tuple[int]:
        return (self.n,)

    @cached_property
    def t(self) -> np.ndarray:
        return np.linspace(-self.T, self.T, self.n)

    def check_decay(self, u: np.ndarray) -> float:
        """Largest endpoint increment of a bounded correction."""
        return float(max(abs(u[0] - u[1]), abs(u[-1] - u[-2])))

    @cached_property
    def d2_banded(self) -> np.ndarray:
        """Sixth-order second-difference matrix in ``solve_banded`` (3, 3) layout.

        Uses the same ghost-node continuation as :func:`line_d2`.
        """
        n = self.n
        ab = np.zeros((7, n))
        ghosts = _ghost_weights(self.h)
        for i in range(n):
            row = {}
            for off, c in zip(range(-3, 4), _D2_STENCIL):
                j = i + off
                if 0 <= j < n:
                    row[j] = row.get(j, 0.0) + c
                    continue
                # ghost = u_edge + S * (u_edge - u_inner)
                s = ghosts[abs(j - (0 if j < 0 else n - 1)) - 1]
                edge, inner = (0, 1) if j < 0 else (n - 1, n - 2)
                row[edge] = row.get(edge, 0.0) + c * (1 + s)
                row[inner] = row.get(inner, 0.0) - c * s
            for j, c in row.items():
                ab[3 + i - j, j] = c
        return ab / self.h**2


def _ghost_weights(h: float) -> np.ndarray:
    """Partial sums ``r + ... + r^m`` (m = 1..3) with ``r = exp(-h)``.

    Smooth invariant weights approach their limit at the poles like
    ``C + A*exp(-|t|)``; ghost nodes continue that profile exactly.
    """
    r = np.exp(-h)
    return np.cumsum(r ** np.arange(1, 4))


def _extend(u: np.ndarray, grid: LineGrid) -> np.ndarray:
    s = _ghost_weights(grid.h)
    left = u[0] + s[::-1] * (u[0] - u[1])
    right = u[-1] + s * (u[-1] - u[-2])
    return np.concatenate([left, u, right])


def line_d2(u: np.ndarray, grid: LineGrid) -> np.ndarray:
    """Sixth-order second derivative, continuing ``u`` geometrically past the ends."""
    u = np.asarray(u, dtype=float)
    # subtracting the edge value keeps the flat tails free of roundoff
    v = _extend(u - u[0], grid)
    out = np.zeros_like(u)
    for off, c in zip(range(7), _D2_STENCIL):
        out += c * v[off:off + u.size]
    return out / grid.h**2


def line_d1(u: np.ndarray, grid: LineGrid) -> np.ndarray:
    """Sixth-order first derivative, continuing ``u`` geometrically past the ends."""
    u = np.asarray(u, dtype=float)
    v = _extend(u - u[0], grid)
    c = np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60])
    out = np.zeros_like(u)
    for off, w in zip(range(7), c):
        out += w * v[off:off + u.size]
    return out / grid.h


def _tail(f_edge: float, f_next: float) -> float:
    """Sum of the geometric continuation ``f_edge * (r + r^2 + ...)``."""
    if f_edge == 0.0 or f_next == 0.0 or np.sign(f_edge) != np.sign(f_next):
        return 0.0
    r = f_edge / f_next
    if not 0.0 < r < 1.0:
        return 0.0
    return f_edge * r / (1.0 - r)


def line_integrate(f: np.ndarray, grid: LineGrid) -> float:
    """Trapezoid sum over the whole line for exponentially decaying integrands.

    The samples past ``+-T`` are continued geometrically from the last two
    nodes, which is exact for ``A*exp(-lambda*|t|)`` tails.
    """
    f = np.asarray(f, dtype=float)
    total = f.sum() + _tail(f[0], f[1]) + _tail(f[-1], f[-2])
    return float(total * grid.h)
