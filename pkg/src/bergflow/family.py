"""Weights over one-parameter families of elliptic curves and their positivity
calculus.

A family weight is sampled on a square lattice of base points
``s = s0 + hs*(i + 1j*j)`` (``|i|, |j| <= radius``) times the fiber grid. On
the total space the holomorphic coordinates are ``(s, z)`` with
``z = x + tau(s)*y``; moving ``s`` at fixed grid point ``(x, y)`` moves ``z``
by ``tau'(s)*y*ds``, so

    d/ds at fixed z  =  d/ds at fixed (x, y)  -  tau'(s)*y * d/dz.

All mixed Hessian entries below come from this identity. Base derivatives are
centered lattice differences (second or fourth order); fiber derivatives are
spectral.

Conventions: ``c = Phi_ss - |Phi_sz|^2 / Phi_zz`` with plain complex
derivatives, so a product weight ``psi(z) + |s|^2`` has ``c = 1``; the
Weil-Petersson density of ``tau(s)`` is ``|tau'|^2 / (4 (Im tau)^2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import InputError, NumericalError
from .flow import FlowState, flow_step
from .functionals import MeasureFamily
from .geometry import EllipticCurve, EllipticFamily, Weight
from .quantization import HermitianForm, Quantizer

ORDERS = (2, 4)
SETTINGS = ("cy", "twisted")


# ---------------------------------------------------------------------------
# fiber calculus


def _odd_symbols(grid):
    kx, ky = grid.wavenumbers
    kx = np.where(np.abs(kx) == np.pi * grid.nx, 0.0, kx)
    ky = np.where(np.abs(ky) == np.pi * grid.ny, 0.0, ky)
    return kx, ky


def d_z(f: np.ndarray, curve: EllipticCurve) -> np.ndarray:
    """``df/dz = -i (f_y - conj(tau) f_x) / (2 Im tau)`` for periodic ``f``."""
    kx, ky = _odd_symbols(curve.grid)
    tau = curve.tau
    return sfft.ifft2(sfft.fft2(f) * (-1j) * (1j * ky - np.conj(tau) * 1j * kx) / (2 * tau.imag))


def d_zbar(f: np.ndarray, curve: EllipticCurve) -> np.ndarray:
    """``df/dzbar = i (f_y - tau f_x) / (2 Im tau)`` for periodic ``f``."""
    kx, ky = _odd_symbols(curve.grid)
    tau = curve.tau
    return sfft.ifft2(sfft.fft2(f) * 1j * (1j * ky - tau * 1j * kx) / (2 * tau.imag))


def d_zzbar(f: np.ndarray, curve: EllipticCurve) -> np.ndarray:
    """``d^2 f / dz dzbar`` of a real periodic field."""
    return curve.laplacian(f) / (4 * curve.tau.imag)


def wp_density(family: EllipticFamily, s) -> np.ndarray:
    """Closed form ``|tau'|^2 / (4 (Im tau)^2)``."""
    return np.abs(family.dtau(s)) ** 2 / (4 * np.imag(family.tau(s)) ** 2)


# ---------------------------------------------------------------------------
# lattice differences

_D1 = {2: {1: 0.5}, 4: {1: 2 / 3, 2: -1 / 12}}
_D2 = {2: (-2.0, {1: 1.0}), 4: (-2.5, {1: 4 / 3, 2: -1 / 12})}


def _d1(get, axis: int, h: float, order: int):
    out = 0
    for off, w in _D1[order].items():
        out = out + w * (get(axis, off) - get(axis, -off))
    return out / h


def _d2(get, axis: int, h: float, order: int):
    centre, wings = _D2[order]
    out = centre * get(axis, 0)
    for off, w in wings.items():
        out = out + w * (get(axis, off) + get(axis, -off))
    return out / h**2


@dataclass(eq=False)
class FamilyWeight:
    """Samples ``u(s, x, y)`` of ``Phi = phi_0(s) + u`` on a base lattice.

    ``u`` has shape ``(n, n, ny, nx)``; axis 0 steps ``Re s`` and axis 1 steps
    ``Im s``.
    """

    family: EllipticFamily
    hs: float
    u: np.ndarray
    s0: complex = 0j

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        n = self.u.shape[0]
        if self.u.ndim != 4 or self.u.shape[1] != n or n % 2 == 0 or n < 3:
            raise InputError("family samples must have shape (n, n, ny, nx) with odd n >= 3")
        if self.u.shape[2:] != self.family.grid.shape:
            raise InputError("fiber samples do not match the family grid")
        if not (self.hs > 0):
            raise InputError("lattice spacing must be positive")
        if not np.all(np.isfinite(self.u)):
            raise InputError("family samples contain non-finite values")

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def radius(self) -> int:
        return (self.n - 1) // 2

    def s_at(self, i: int, j: int) -> complex:
        return self.s0 + self.hs * complex(i - self.radius, j - self.radius)

    def fiber(self, i: int, j: int) -> EllipticCurve:
        return self.family.fiber(self.s_at(i, j))

    def weight(self, i: int, j: int) -> Weight:
        return Weight(self.fiber(i, j), self.u[i, j])

    def with_u(self, u: np.ndarray) -> "FamilyWeight":
        return FamilyWeight(self.family, self.hs, u, self.s0)

    @classmethod
    def from_function(cls, family: EllipticFamily, hs: float, radius: int, func, s0: complex = 0j) -> "FamilyWeight":
        """Sample ``func(s, x, y)`` (grid coordinates of the fiber over ``s``)."""
        n = 2 * radius + 1
        x, y = family.grid.mesh
        u = np.empty((n, n) + family.grid.shape)
        for i in range(n):
            for j in range(n):
                s = s0 + hs * complex(i - radius, j - radius)
                u[i, j] = np.broadcast_to(func(s, x, y), family.grid.shape)
        return cls(family, hs, u, s0)

    def centers(self, order: int) -> list[tuple[int, int]]:
        r = order // 2
        idx = range(r, self.n - r)
        return [(i, j) for i in idx for j in idx]

    def is_fiber_positive(self) -> tuple[bool, float]:
        margin = min(float(self.fiber(i, j).ma_density(self.u[i, j]).min()) for i in range(self.n) for j in range(self.n))
        return margin > 0, margin


def flat_normalized(family: EllipticFamily, hs: float, radius: int = 2, s0: complex = 0j) -> FamilyWeight:
    """Fiberwise flat weights ``phi_0 - log(2 Im tau(s))``."""
    return FamilyWeight.from_function(family, hs, radius, lambda s, x, y: -math.log(2 * family.tau(s).imag), s0)


@dataclass
class TotalHessian:
    """Complex Hessian of ``Phi`` in ``(s, z)`` at the fiber over one lattice point."""

    s: complex
    curve: EllipticCurve
    zz: np.ndarray  # Phi_{z zbar}, real
    sz: np.ndarray  # Phi_{s zbar}, complex
    ss: np.ndarray  # Phi_{s sbar}, real
    ss_imag: float = 0.0


def total_hessian(fw: FamilyWeight, center: tuple[int, int] | None = None, order: int = 4) -> TotalHessian:
    if order not in ORDERS:
        raise InputError(f"stencil order must be one of {ORDERS}")
    r = order // 2
    ic, jc = center if center is not None else (fw.radius, fw.radius)
    if not (r <= ic < fw.n - r and r <= jc < fw.n - r):
        raise InputError(f"lattice point {(ic, jc)} is too close to the edge for order {order}")
    fam = fw.family
    s = fw.s_at(ic, jc)
    curve = fam.fiber(s)
    tau, tp = curve.tau, complex(fam.dtau(s))
    b, d = tau.imag, curve.degree
    _, y = curve.grid.mesh
    h = fw.hs

    cache: dict = {}

    def at(axis, off):
        key = (ic + off, jc) if axis == 0 else (ic, jc + off)
        if key not in cache:
            c = fw.fiber(*key)
            u = fw.u[key]
            cache[key] = (u, d_z(u, c), d_zbar(u, c))
        return cache[key]

    def field(k):
        return lambda axis, off: at(axis, off)[k]

    u_c, uz_c, _ = at(0, 0)
    u_zzb = d_zzbar(u_c, curve)

    def ds(get):
        return 0.5 * (_d1(get, 0, h, order) - 1j * _d1(get, 1, h, order))

    def dsb(get):
        return 0.5 * (_d1(get, 0, h, order) + 1j * _d1(get, 1, h, order))

    lap_s = 0.25 * (_d2(field(0), 0, h, order) + _d2(field(0), 1, h, order))
    ds_u = ds(field(0))
    ds_uzb = ds(field(2))
    dsb_uz = dsb(field(1))

    zz = np.pi * d / b + u_zzb
    sz = -np.pi * d * y * tp / b + ds_uzb - tp * y * u_zzb
    ss = (
        np.pi * d * y**2 * abs(tp) ** 2 / b
        + lap_s
        - tp * y * dsb_uz
        - np.conj(tp) * y * d_zbar(ds_u, curve)
        + abs(tp) ** 2 * y * (0.5j / b * uz_c + y * u_zzb)
    )
    return TotalHessian(s, curve, zz, sz, ss.real, float(np.abs(ss.imag).max()))


def c_function(fw: FamilyWeight, center=None, order: int = 4) -> np.ndarray:
    """``c = Phi_ss - |Phi_sz|^2 / Phi_zz`` on the fiber over ``center``."""
    H = total_hessian(fw, center, order)
    if H.zz.min() <= 0:
        raise NumericalError("fiber degeneracy: Phi_zz is not positive", margin=float(H.zz.min()))
    return H.ss - np.abs(H.sz) ** 2 / H.zz


def hessian_is_positive(H: TotalHessian) -> np.ndarray:
    """Pointwise positive-definiteness of the 2x2 Hermitian Hessian."""
    det = H.ss * H.zz - np.abs(H.sz) ** 2
    return (H.zz > 0) & (det > 0)


@dataclass
class KodairaSpencer:
    V: np.ndarray  # horizontal-lift coefficient Phi_sz / Phi_zz
    A: np.ndarray  # coefficient of dzbar (x) d/dz
    norm_sq: np.ndarray  # |A|^2, metric independent in one dimension
    wp_integral: float  # (1/V) int |A|^2 MA


def kodaira_spencer(fw: FamilyWeight, center=None, order: int = 4) -> KodairaSpencer:
    """``A = -dbar V`` with ``V = Phi_sz / Phi_zz``.

    ``V + tau' y`` is periodic, so ``A = i tau'/(2 Im tau) - dbar(V + tau' y)``.
    """
    H = total_hessian(fw, center, order)
    fam = fw.family
    tp = complex(fam.dtau(H.s))
    _, y = H.curve.grid.mesh
    V = H.sz / H.zz
    A = 0.5j * tp / H.curve.tau.imag - d_zbar(V + tp * y, H.curve)
    norm_sq = np.abs(A) ** 2
    ma = H.curve.tau.imag * H.zz / np.pi
    wp = H.curve.integrate(norm_sq * ma) / H.curve.volume
    return KodairaSpencer(V, A, norm_sq, wp)


def wp_hodge(family: EllipticFamily, s, h: float = 1e-2) -> np.ndarray:
    """``-dd_s log(2 Im tau)`` by fourth-order five-point differences."""
    s = np.asarray(s, dtype=complex)

    def f(z):
        return np.log(2 * np.imag(family.tau(z)))

    lap = (
        -60 * f(s)
        + 16 * (f(s + h) + f(s - h) + f(s + 1j * h) + f(s - 1j * h))
        - (f(s + 2 * h) + f(s - 2 * h) + f(s + 2j * h) + f(s - 2j * h))
    ) / (12 * h**2)
    return -0.25 * lap


@dataclass
class WPComparison:
    hodge: float
    harmonic: float
    closed_form: float
    discrepancy: float
    hodge_grid: np.ndarray = field(default_factory=lambda: np.zeros(0))


def wp_form(family: EllipticFamily, hs: float = 1e-2, s_grid=None) -> WPComparison:
    """Weil-Petersson density at ``s = 0`` by the Hodge-norm curvature and by the
    harmonic Kodaira-Spencer norm of the flat normalized family, plus the Hodge
    route on ``s_grid``."""
    fw = flat_normalized(family, hs)
    hodge = float(wp_hodge(family, 0j, hs))
    harmonic = kodaira_spencer(fw).wp_integral
    grid_vals = wp_hodge(family, s_grid, hs) if s_grid is not None else np.zeros(0)
    return WPComparison(hodge, harmonic, float(wp_density(family, 0j)), abs(hodge - harmonic), grid_vals)


def deligne_curvature(fw: FamilyWeight, center=None, order: int = 4) -> float:
    """``Theta = int c MA`` over the fiber."""
    H = total_hessian(fw, center, order)
    c = H.ss - np.abs(H.sz) ** 2 / H.zz
    ma = H.curve.tau.imag * H.zz / np.pi
    return H.curve.integrate(c * ma)


# ---------------------------------------------------------------------------
# evolution over the lattice


def fiber_family(setting: str) -> MeasureFamily:
    if setting == "cy":
        return MeasureFamily("fixed")
    if setting == "twisted":
        return MeasureFamily("twisted", normalized=False)
    raise InputError(f"unknown family setting {setting!r}; expected one of {SETTINGS}")


def family_flow(fw: FamilyWeight, setting: str, dt: float, steps: list[int]) -> dict[int, FamilyWeight]:
    """Run the fiberwise flow on every lattice fiber and return snapshots at the
    requested step counts."""
    fam = fiber_family(setting)
    states = [[FlowState(fw.weight(i, j), fam, dt=dt) for j in range(fw.n)] for i in range(fw.n)]
    wanted = sorted(set(steps))
    out = {}
    if wanted and wanted[0] == 0:
        out[0] = fw
    for step in range(1, wanted[-1] + 1 if wanted else 1):
        states = [[flow_step(st) for st in row] for row in states]
        if step in wanted:
            out[step] = fw.with_u(np.array([[st.weight.u for st in row] for row in states]))
    return out


def heat_residual(snapshots, dt: float, setting: str, order: int = 4, ablate: bool = False, center=None):
    """Residual of the evolution equation for ``c`` on the middle snapshot.

    ``cy``: ``dc/dt - Lap c - |A|^2 + WP``.
    ``twisted``: ``dc/dt - Lap c + c - |A|^2 - Phi0_zz |V|^2`` (trivial families);
    ``ablate=True`` drops the ``+c`` term.
    Returns ``(field, sup)``.
    """
    if len(snapshots) != 3:
        raise InputError("heat residual needs three consecutive snapshots")
    if any(s.u.shape != snapshots[0].u.shape or s.hs != snapshots[0].hs for s in snapshots):
        raise InputError("snapshots are not aligned")
    before, mid, after = snapshots
    c_prev = c_function(before, center, order)
    c_next = c_function(after, center, order)
    H = total_hessian(mid, center, order)
    c = H.ss - np.abs(H.sz) ** 2 / H.zz
    ks = kodaira_spencer(mid, center, order)
    lap_c = d_zzbar(c, H.curve) / H.zz
    dcdt = (c_next - c_prev) / (2 * dt)
    if setting == "cy":
        res = dcdt - lap_c - ks.norm_sq + float(wp_density(mid.family, H.s))
    elif setting == "twisted":
        if not mid.family.is_trivial:
            raise InputError("the twisted evolution equation is implemented for trivial families")
        phi0_zz = np.pi * H.curve.degree / H.curve.tau.imag
        res = dcdt - lap_c - ks.norm_sq - phi0_zz * np.abs(ks.V) ** 2
        if not ablate:
            res = res + c
    else:
        raise InputError(f"unknown family setting {setting!r}")
    return res, float(np.abs(res).max())


def min_c(fw: FamilyWeight, order: int = 4) -> float:
    return min(float(c_function(fw, ctr, order).min()) for ctr in fw.centers(order))


def positivity_start(family: EllipticFamily, hs: float, radius: int, eps: float = 0.1, order: int = 4) -> FamilyWeight:
    """``eps*Re(s e^{2 pi i x})`` plus the smallest ``K|s|^2`` making ``c >= 0``.

    The minimum of ``c`` over the sampled centers is zero, and ``d Phi/ds`` does
    not vanish identically.
    """
    fw = FamilyWeight.from_function(family, hs, radius, lambda s, x, y: eps * (s * np.exp(2j * np.pi * x)).real)
    K = -min_c(fw, order)
    return FamilyWeight.from_function(
        family, hs, radius, lambda s, x, y: eps * (s * np.exp(2j * np.pi * x)).real + K * abs(s - 0j) ** 2
    )


def family_bergman(fw: FamilyWeight, k: int, m_max: int, order: int = 4, adjoint: bool = False):
    """Fiberwise Bergman iteration with the normalized flat measure (or, with
    ``adjoint=True``, the unnormalized ``i dz^dzbar`` form). Returns the list of
    family weights ``phi_0 .. phi_m``; every fiber keeps the family grid."""
    fam = MeasureFamily("fixed")
    quants = [[Quantizer(fw.fiber(i, j), k) for j in range(fw.n)] for i in range(fw.n)]
    out = [fw]
    cur = fw
    for _ in range(m_max):
        new = np.empty_like(cur.u)
        for i in range(fw.n):
            for j in range(fw.n):
                q = quants[i][j]
                H = q.hilb(cur.weight(i, j), fam)
                if adjoint:
                    H = HermitianForm(k, 2 * q.quad.tau.imag * H.matrix, H.basis_hash)
                new[i, j] = q.fs(H).on(cur.fiber(i, j)).u
        cur = cur.with_u(new)
        out.append(cur)
    return out


def direct_image_psh(fw: FamilyWeight, k: int, order: int = 4) -> float:
    """Smallest ``Phi_ss`` (at fixed ``z``) of ``FS(adjoint Hilb(phi))`` over the
    sampled fibers."""
    out = family_bergman(fw, k, 1, order, adjoint=True)[-1]
    return min(float(total_hessian(out, ctr, order).ss.min()) for ctr in out.centers(order))


def perturbed_start(family: EllipticFamily, hs: float, radius: int) -> FamilyWeight:
    """Fiber-positive family with nontrivial ``s``-dependence in every Hessian block."""

    def u0(s, x, y):
        two_pi = 2 * np.pi
        return (
            0.1 * (s * np.exp(1j * two_pi * x)).real
            + 0.05 * abs(s) ** 2 * np.cos(two_pi * y)
            + 0.5 * abs(s) ** 2
            + 0.05 * np.sin(two_pi * (x + y))
            + 0.3 * (s**3).real * np.cos(two_pi * x)
        )

    return FamilyWeight.from_function(family, hs, radius, u0)


def heat_residual_in_dt(family: EllipticFamily, setting: str, dts, t_mid: float = 0.02, hs: float = 0.02,
                        radius: int = 2, order: int = 4, ablate: bool = False,
                        extrapolate: bool = True) -> list[float]:
    """Sup heat residual at ``t_mid`` for each time step in ``dts``.

    With ``extrapolate`` the snapshots come from Richardson-combining runs at
    ``dt`` and ``dt/2``, so the first-order scheme error does not mask the
    convergence of the residual itself.
    """
    fw = perturbed_start(family, hs, radius)
    sups = []
    for dt in dts:
        n = int(round(t_mid / dt))
        coarse = family_flow(fw, setting, dt, [n - 1, n, n + 1])
        snaps = [coarse[i] for i in (n - 1, n, n + 1)]
        if extrapolate:
            fine = family_flow(fw, setting, dt / 2, [2 * n - 2, 2 * n, 2 * n + 2])
            snaps = [fw.with_u(2 * fine[2 * i].u - coarse[i].u) for i in (n - 1, n, n + 1)]
        sups.append(heat_residual(snaps, dt, setting, order, ablate)[1])
    return sups


def heat_residual_in_h(family: EllipticFamily, setting: str, hs_list, dt: float = 1e-7,
                       order: int = 2, ablate: bool = False) -> list[float]:
    """Sup heat residual at the initial time for each lattice spacing; ``dt`` is
    small enough that the base-lattice error dominates."""
    sups = []
    for hs in hs_list:
        fw = perturbed_start(family, hs, order // 2)
        snaps = family_flow(fw, setting, dt, [0, 1, 2])
        sups.append(heat_residual([snaps[0], snaps[1], snaps[2]], dt, setting, order, ablate)[1])
    return sups


def observed_orders(steps, sups) -> np.ndarray:
    """Pairwise convergence orders ``log(e1/e2)/log(h1/h2)``."""
    steps, sups = np.asarray(steps, float), np.asarray(sups, float)
    return np.log(sups[:-1] / sups[1:]) / np.log(steps[:-1] / steps[1:])
