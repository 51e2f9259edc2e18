"""Bases of holomorphic sections of ``kL`` and their quadrature.

Sections are never stored raw. Each basis works with "reduced" sections
``g = f * exp(-k*phi_0/2)``, whose squared moduli are honest functions on the
fiber, so Gram matrices and Bergman sums only need the correction ``u``.

On the elliptic curve the basis is the theta functions with characteristics
``j/N`` (``N = k*d``); on the symmetric projective line it is the monomials
``z^j``, ``j = 0..k*d``, whose Gram matrix is diagonal for rotation-invariant
weights.
"""
from __future__ import annotations

import hashlib
import math
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import InputError, NumericalError
from .geometry import EllipticCurve, P1Symmetric, softplus
from .grid import PeriodicGrid2

QUADRATURE_CAP = 512
_CACHE_BYTES = 128 * 2**20
_CHUNK_BYTES = 32 * 2**20


def quadrature_size(base: int, k: int, degree: int) -> int:
    """Smallest ``base * 2^j`` with at least ``8*k*degree`` samples, capped."""
    n = base
    while n < 8 * k * degree and 2 * n <= QUADRATURE_CAP:
        n *= 2
    return n


class ThetaBasis:
    """Theta functions with characteristics on ``C/(Z + tau Z)`` at level ``k``.

    In grid coordinates the reduced section ``j`` is
    ``sum_n exp(-pi N b (c+y)^2 + i pi N a c^2 + 2 pi i N c (x + a y))`` with
    ``c = n + j/N`` and ``tau = a + ib``.
    """

    def __init__(self, curve: EllipticCurve, k: int, quad_grid: PeriodicGrid2 | None = None):
        if int(k) != k or k < 1:
            raise InputError(f"level k must be a positive integer, got {k}")
        self.k = int(k)
        self.curve = curve
        self.n_sections = self.k * curve.degree
        if quad_grid is None:
            nx = quadrature_size(curve.grid.nx, self.k, curve.degree)
            ny = quadrature_size(curve.grid.ny, self.k, curve.degree)
            quad_grid = PeriodicGrid2(nx, ny)
        self.quad = curve.with_grid(quad_grid)
        b = curve.tau.imag
        self.truncation = 8 + math.ceil(6 / math.sqrt(math.pi * self.k * b))
        self._cache = None

    @property
    def geometry(self) -> EllipticCurve:
        return self.quad

    @cached_property
    def basis_hash(self) -> str:
        tag = f"theta|{self.curve.tau.real!r}|{self.curve.tau.imag!r}|{self.curve.degree}|{self.k}"
        return hashlib.sha256(tag.encode()).hexdigest()

    def _eval(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Reduced sections on the tensor grid ``y x x``, shape ``(N, len(y), len(x))``."""
        N = self.n_sections
        a, b = self.curve.tau.real, self.curve.tau.imag
        n = np.arange(-self.truncation, self.truncation + 1)
        c = n[None, :] + np.arange(N)[:, None] / N  # (N, T)
        yy = y[None, :, None]
        cc = c[:, None, :]
        rows = np.exp(-np.pi * N * b * (cc + yy) ** 2 + 1j * (np.pi * N * a * cc**2 + 2 * np.pi * N * a * cc * yy))
        freq = (N * n[None, :] + np.arange(N)[:, None])  # (N, T)
        waves = np.exp(2j * np.pi * freq[:, :, None] * x[None, None, :])
        return np.matmul(rows, waves)

    def evaluate(self, x, y) -> np.ndarray:
        """Reduced sections at scattered points, shape ``(N, P)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if x.shape != y.shape:
            raise InputError("x and y must have the same shape")
        out = np.empty((self.n_sections, x.size), dtype=complex)
        for p, (xp, yp) in enumerate(zip(x.ravel(), y.ravel())):
            out[:, p] = self._eval(np.array([xp]), np.array([yp]))[:, 0, 0]
        return out

    def _row_blocks(self):
        grid = self.quad.grid
        per_row = self.n_sections * grid.nx * 16
        step = max(1, _CHUNK_BYTES // per_row)
        for start in range(0, grid.ny, step):
            yield slice(start, min(start + step, grid.ny))

    def _blocks(self):
        """Yield ``(row_slice, sections)`` with sections flattened to ``(N, P_block)``."""
        grid = self.quad.grid
        total = self.n_sections * grid.nx * grid.ny * 16
        if self._cache is not None:
            yield from self._cache
            return
        blocks = []
        for rows in self._row_blocks():
            vals = self._eval(grid.x, grid.y[rows]).reshape(self.n_sections, -1)
            if total <= _CACHE_BYTES:
                blocks.append((rows, vals))
            yield rows, vals
        if total <= _CACHE_BYTES:
            self._cache = blocks

    def gram(self, density: np.ndarray) -> np.ndarray:
        """``G_ij = int g_i conj(g_j) density dx dy`` on the quadrature grid."""
        grid = self.quad.grid
        G = np.zeros((self.n_sections, self.n_sections), dtype=complex)
        for rows, vals in self._blocks():
            w = density[rows].ravel()
            G += (vals * w) @ vals.conj().T
        G *= grid.hx * grid.hy
        return 0.5 * (G + G.conj().T)

    def log_sum_sq(self, H: np.ndarray) -> np.ndarray:
        """``log sum_a |s_a|^2`` for an ``H``-orthonormal basis ``s_a``."""
        L = cholesky(H)
        grid = self.quad.grid
        out = np.empty(grid.shape)
        for rows, vals in self._blocks():
            s = solve_triangular(L, vals, lower=True)
            out[rows] = np.log(np.sum(s.real**2 + s.imag**2, axis=0)).reshape(-1, grid.nx)
        return out


class MonomialBasis:
    """Monomials ``z^j``, ``j = 0..k*d``, on the rotation-invariant projective line.

    With ``t = log|z|^2`` the reduced squared modulus is
    ``exp(j*t - k*psi_FS(t))``; the angular integral is done analytically, so
    Gram matrices of invariant weights are diagonal.
    """

    def __init__(self, line: P1Symmetric, k: int):
        if int(k) != k or k < 1:
            raise InputError(f"level k must be a positive integer, got {k}")
        self.k = int(k)
        self.line = line
        self.quad = line
        self.n_sections = self.k * line.degree + 1

    @property
    def geometry(self) -> P1Symmetric:
        return self.quad

    @cached_property
    def basis_hash(self) -> str:
        tag = f"monomial|{self.line.degree}|{self.k}"
        return hashlib.sha256(tag.encode()).hexdigest()

    @cached_property
    def log_sq(self) -> np.ndarray:
        """``log |g_j|^2`` at the line nodes, shape ``(N, n)``."""
        t = self.line.t
        j = np.arange(self.n_sections)[:, None]
        return j * t[None, :] - self.k * self.line.degree * softplus(t)[None, :]

    def evaluate_t(self, t) -> np.ndarray:
        """Reduced magnitudes ``|g_j|`` at arbitrary ``t``, shape ``(N, P)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        j = np.arange(self.n_sections)[:, None]
        return np.exp(0.5 * (j * t[None, :] - self.k * self.line.degree * softplus(t)[None, :]))

    def gram(self, density: np.ndarray) -> np.ndarray:
        diag = np.array([self.line.integrate(np.exp(row) * density) for row in self.log_sq])
        return np.diag(diag).astype(complex)

    def log_sum_sq(self, H: np.ndarray) -> np.ndarray:
        H = np.asarray(H)
        d = np.real(np.diag(H))
        off = H - np.diag(np.diag(H))
        if np.max(np.abs(off)) > 1e-12 * np.max(d):
            raise InputError("rotation-invariant reduction needs a diagonal Hermitian form")
        if np.any(d <= 0):
            raise NumericalError("Hermitian form is not positive definite", margin=float(d.min()))
        return logsumexp(self.log_sq - np.log(d)[:, None], axis=0)


def make_basis(geom, k: int):
    if isinstance(geom, EllipticCurve):
        return ThetaBasis(geom, k)
    if isinstance(geom, P1Symmetric):
        return MonomialBasis(geom, k)
    raise InputError(f"no section basis for geometry {type(geom).__name__}")


def basis_eval(basis, node) -> np.ndarray:
    """Reduced basis values at one node: ``(x, y)`` on the torus, ``t`` on the line."""
    if isinstance(basis, ThetaBasis):
        x, y = node
        return basis.evaluate([x], [y])[:, 0]
    return basis.evaluate_t([node])[:, 0]


def cholesky(H: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        lam = float(np.linalg.eigvalsh(H).min())
        raise NumericalError(f"Hermitian form is not positive definite (min eigenvalue {lam:.3e})", margin=lam) from exc
