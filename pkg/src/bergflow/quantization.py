"""Quantized weights: Gram forms, the Fubini-Study map, Bergman functions and
the Bergman iteration ``phi -> FS(Hilb(phi))``.

All computations run on the quadrature geometry of the section basis, whose
grid is refined with ``k``; weights are moved there by spectral resampling and
results can be moved back with :meth:`Weight.on`.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError
from .functionals import MeasureFamily, i_functional, i_pm
from .geometry import EllipticCurve, Weight, reference_weight
from .sections import ThetaBasis, cholesky, make_basis

BALANCED_TOL = 1e-10
CONFIRM_STEPS = 5
# step ratios below this (relative to the weight size) are dominated by roundoff
RATIO_FLOOR = 1e-8


@dataclass(eq=False)
class HermitianForm:
    """A positive definite Hermitian matrix in a fixed section basis."""

    k: int
    matrix: np.ndarray
    basis_hash: str = ""

    def __post_init__(self):
        H = np.asarray(self.matrix, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise InputError("Hermitian form must be a square matrix")
        scale = max(float(np.abs(H).max()), 1e-300)
        if float(np.abs(H - H.conj().T).max()) > 1e-12 * scale:
            raise InputError("matrix is not Hermitian")
        self.matrix = 0.5 * (H + H.conj().T)
        self._chol = cholesky(self.matrix)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def log_det(self) -> float:
        return float(2 * np.sum(np.log(np.abs(np.diag(self._chol)))))

    @property
    def condition(self) -> float:
        lam = np.linalg.eigvalsh(self.matrix)
        return float(lam[-1] / lam[0])

    def scaled(self, factor: float) -> "HermitianForm":
        return HermitianForm(self.k, factor * self.matrix, self.basis_hash)

    def to_dict(self) -> dict:
        return {
            "format": "bergflow.hermitian/1",
            "k": self.k,
            "basis": self.basis_hash,
            "rows": [[[float(z.real), float(z.imag)] for z in row] for row in self.matrix],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "HermitianForm":
        if obj.get("format") != "bergflow.hermitian/1":
            raise InputError(f"not a Hermitian form container: {obj.get('format')!r}")
        M = np.array([[complex(re, im) for re, im in row] for row in obj["rows"]])
        return cls(int(obj["k"]), M, obj["basis"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


class Quantizer:
    """Level-``k`` quantization of one model geometry; caches the section basis."""

    def __init__(self, geom, k: int):
        self.geom = geom
        self.k = int(k)
        self.basis = make_basis(geom, k)
        self.quad = self.basis.quad
        self.n_sections = self.basis.n_sections

    def lift(self, phi: Weight) -> Weight:
        """The weight resampled onto the quadrature grid."""
        if phi.geom == self.quad:
            return phi
        if isinstance(self.quad, EllipticCurve) and (phi.geom.tau != self.quad.tau or phi.geom.degree != self.quad.degree):
            raise InputError("weight lives on a different curve than the quantizer")
        return phi.on(self.quad)

    def _density(self, phi: Weight, fam: MeasureFamily) -> np.ndarray:
        w = self.lift(phi)
        mu = fam.density(self.quad, w.u)
        return np.exp(-self.k * w.u) * mu

    def hilb(self, phi: Weight, fam: MeasureFamily) -> HermitianForm:
        """Gram form ``int f_i conj(f_j) exp(-k phi) mu_phi``."""
        G = self.basis.gram(self._density(phi, fam))
        try:
            return HermitianForm(self.k, G, self.basis.basis_hash)
        except NumericalError as exc:
            raise NumericalError(f"quadrature Gram is not positive definite; raise the resolution ({exc})", exc.margin) from exc

    def _check_form(self, H: HermitianForm):
        if H.basis_hash and H.basis_hash != self.basis.basis_hash:
            raise InputError("Hermitian form belongs to a different section basis")

    def fs(self, H: HermitianForm) -> Weight:
        """``(1/k) log((1/N) sum |s_a|^2)`` for an ``H``-orthonormal basis."""
        self._check_form(H)
        log_sum = self.basis.log_sum_sq(H.matrix)
        return Weight(self.quad, (log_sum - math.log(self.n_sections)) / self.k)

    def bergman_function(self, phi: Weight, fam: MeasureFamily) -> np.ndarray:
        """``rho = (1/N) sum |s_a|^2 exp(-k phi)``; ``rho * mu_phi`` has unit mass."""
        w = self.lift(phi)
        out = self.fs(self.hilb(w, fam))
        return np.exp(self.k * (out.u - w.u))

    def step(self, phi: Weight, fam: MeasureFamily) -> Weight:
        return self.fs(self.hilb(phi, fam))

    # quantized functionals -------------------------------------------------

    def _normalized(self, fam: MeasureFamily) -> MeasureFamily:
        if fam.normalized:
            return fam
        return MeasureFamily(fam.kind, True, fam.base_geom, fam.base_values)

    def l_functional(self, phi: Weight, fam: MeasureFamily) -> float:
        """``-(1/(N k)) log det Hilb`` with the normalized measure; equivariant."""
        H = self.hilb(phi, self._normalized(fam))
        return -H.log_det / (self.n_sections * self.k)

    def f_functional(self, H: HermitianForm, fam: MeasureFamily) -> float:
        V = self.geom.volume
        return V * (-H.log_det / (self.n_sections * self.k) - i_functional(self.fs(H), fam))

    @property
    def reference_form(self) -> HermitianForm:
        if not hasattr(self, "_h0"):
            self._h0 = self.hilb(reference_weight(self.quad), MeasureFamily("fixed"))
        return self._h0

    def j_functional(self, H: HermitianForm) -> float:
        """Quantized ``J``: zero at the reference form, bounded below on orbits."""
        V = self.geom.volume
        H0 = self.reference_form
        ref = self.quad.integrate
        u, u0 = self.fs(H).u, self.fs(H0).u
        return V * (ref(u) - ref(u0) + (H.log_det - H0.log_det) / (self.k * self.n_sections))


def hilb(phi: Weight, fam: MeasureFamily, k: int) -> HermitianForm:
    return Quantizer(phi.geom, k).hilb(phi, fam)


def fs(H: HermitianForm, geom) -> Weight:
    return Quantizer(geom, H.k).fs(H)


def bergman_function(phi: Weight, fam: MeasureFamily, k: int) -> np.ndarray:
    return Quantizer(phi.geom, k).bergman_function(phi, fam)


def bergman_step(phi: Weight, fam: MeasureFamily, k: int) -> Weight:
    return Quantizer(phi.geom, k).step(phi, fam)


def quantized_functionals(phi: Weight, fam: MeasureFamily, k: int) -> dict[str, float]:
    q = Quantizer(phi.geom, k)
    H = q.hilb(phi, fam)
    return {"L_k": q.l_functional(phi, fam), "F_k": q.f_functional(H, fam), "J_k": q.j_functional(H)}


# ---------------------------------------------------------------------------
# iteration


TRACE_COLUMNS = ["m", "sup_change", "ratio", "L_k", "I", "I_norm", "L_minus_I"]


@dataclass
class IterationTrace:
    k: int
    setting: str
    rows: list[list[float]] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    worst: dict[str, float] = field(default_factory=dict)
    balanced: bool = False
    balanced_at: int | None = None

    columns = TRACE_COLUMNS

    def column(self, name: str) -> np.ndarray:
        i = TRACE_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def contraction_bound(fam: MeasureFamily, k: int) -> float:
    """Per-step sup-norm Lipschitz constant of the Bergman map."""
    if fam.normalized or fam.sigma == 0:
        return 1.0
    return 1.0 - fam.sigma / k


def iterate(
    phi0: Weight,
    fam: MeasureFamily,
    k: int,
    m_max: int = 500,
    tol: float = BALANCED_TOL,
    quantizer: Quantizer | None = None,
    stop_when_balanced: bool = True,
) -> tuple[IterationTrace, Weight]:
    """Run the Bergman iteration, checking monotonicity and contraction per step.

    The returned weight lives on the quadrature grid.
    """
    q = quantizer or Quantizer(phi0.geom, k)
    phi = q.lift(phi0)
    trace = IterationTrace(k, fam.label)
    normalized_like = fam.normalized or fam.sigma == 0
    lip = contraction_bound(fam, k)
    names = ["L_monotone", "contraction"] + (["I_monotone"] if normalized_like else ["constant_dynamics"])
    trace.checks = {n: True for n in names}
    trace.worst = {n: 0.0 for n in names}

    def breach(name, amount, allowed):
        trace.worst[name] = max(trace.worst[name], amount)
        if amount > allowed:
            trace.checks[name] = False

    prev_change = None
    prev_row = None
    quiet = 0
    for m in range(m_max + 1):
        norm_fam = q._normalized(fam)
        H = q.hilb(phi, fam)
        Hn = H if fam.normalized else q.hilb(phi, norm_fam)
        L = -Hn.log_det / (q.n_sections * q.k)
        I = i_functional(phi, fam)
        In = i_pm(phi, fam)
        nxt = q.fs(H)
        if not normalized_like:
            # plain step = normalized step - (1/k) log mass, a pure constant shift
            shift = q.fs(Hn).u - nxt.u
            breach("constant_dynamics", float(np.abs(shift - fam.log_mass(q.quad, phi.u) / k).max()), 1e-10)
        change = float(np.abs(nxt.u - phi.u).max())
        floor = RATIO_FLOOR * (1 + float(np.abs(phi.u).max()))
        ratio = change / prev_change if prev_change and prev_change > floor else float("nan")
        row = [m, change, ratio, L, I, In, L - In]
        if prev_row is not None:
            # L itself for equivariant settings, L - I otherwise
            key = 3 if normalized_like else 6
            breach("L_monotone", (prev_row[key] - row[key]) / (1 + abs(prev_row[key])), 1e-12)
            if normalized_like:
                breach("I_monotone", (row[4] - prev_row[4]) / (1 + abs(prev_row[4])), 1e-12)
            if not math.isnan(ratio):
                breach("contraction", ratio - lip, 1e-6)
        trace.rows.append(row)
        prev_row, prev_change = row, change
        quiet = quiet + 1 if change <= tol else 0
        if quiet >= CONFIRM_STEPS and not trace.balanced:
            trace.balanced, trace.balanced_at = True, m - CONFIRM_STEPS + 1
            if stop_when_balanced:
                break
        if m < m_max:
            phi = nxt
    return trace, phi


@dataclass
class BalancedResult:
    weight: Weight
    trace: IterationTrace
    residual: float
    iterations: int


def solve_balanced(
    fam: MeasureFamily, k: int, init: Weight, tol: float = BALANCED_TOL, m_max: int = 2000,
    quantizer: Quantizer | None = None,
) -> BalancedResult:
    """Iterate to a balanced weight; normalized canonical settings are shifted
    so that ``I = 0``."""
    q = quantizer or Quantizer(init.geom, k)
    trace, phi = iterate(init, fam, k, m_max=m_max, tol=tol, quantizer=q)
    if not trace.balanced:
        last = trace.rows[-1][1]
        raise NumericalError(f"no balanced weight within {m_max} steps (last change {last:.3e})", margin=last)
    if fam.normalized and fam.sigma != 0:
        phi = phi.shifted(-i_pm(phi, fam))
    residual = float(np.abs(q.step(phi, fam).u - phi.u).max())
    if residual > 2 * tol:
        raise NumericalError(f"balanced residual {residual:.3e} exceeds {2 * tol:.1e}", margin=residual)
    return BalancedResult(phi, trace, residual, len(trace.rows) - 1)


def banach_prediction(first_change: float, k: int, tol: float, lip: float | None = None) -> float:
    """Steps for a ``lip``-contraction to bring its step size below ``tol``."""
    lip = 1 - 1 / k if lip is None else lip
    return math.log(tol / first_change) / math.log(lip)


# ---------------------------------------------------------------------------
# asymptotics


def bergman_error(phi: Weight, fam: MeasureFamily, k: int, quantizer: Quantizer | None = None) -> float:
    """``sup |rho_k - MA/(V mu)|`` on the quadrature grid."""
    q = quantizer or Quantizer(phi.geom, k)
    w = q.lift(phi)
    rho = q.bergman_function(w, fam)
    target = q.quad.ma_density(w.u) / (q.quad.volume * fam.density(q.quad, w.u))
    return float(np.abs(rho - target).max())


def bouche_tian_slope(phi: Weight, fam: MeasureFamily, k_list, floor: float = 1e-9):
    """Fitted exponent of ``sup|rho_k - MA/(V mu)|`` against ``k``.

    Returns ``(slope, r2, errors)``; errors below ``floor`` are dropped with a
    warning since they sit at the quadrature noise level.
    """
    from .report import fit_rate

    ks = sorted(int(k) for k in k_list)
    errors = {k: bergman_error(phi, fam, k) for k in ks}
    kept = [k for k in ks if errors[k] > floor]
    if len(kept) < len(ks):
        warnings.warn(f"dropping levels {sorted(set(ks) - set(kept))}: error below {floor:g}", RuntimeWarning)
    if len(kept) < 3:
        raise NumericalError("fewer than three usable levels for the rate fit")
    fit = fit_rate(np.array(kept, float), np.array([errors[k] for k in kept]), "power")
    return fit.rate, fit.r2, errors


@dataclass
class DoubleScalingTable:
    t_star: float
    rows: list[list[float]]

    columns = ["k", "m", "deviation", "k_times_deviation"]

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    @property
    def ratios(self) -> np.ndarray:
        dev = self.column("deviation")
        return dev[1:] / dev[:-1]

    def envelope(self) -> tuple[float, float]:
        """Fit ``dev = a/k + b/k^2`` and return ``(A, b)`` with ``a = A e^{t_star}``;
        ``A e^{t_star}/k`` is the leading-order envelope."""
        k = self.column("k")
        dev = self.column("deviation")
        design = np.column_stack([1 / k, 1 / k**2])
        (a, b), *_ = np.linalg.lstsq(design, dev, rcond=None)
        return float(a * math.exp(-self.t_star)), float(b)

    def under_envelope(self, slack: float = 1e-9) -> bool:
        A, _ = self.envelope()
        bound = A * math.exp(self.t_star) / self.column("k")
        return bool(np.all(self.column("deviation") <= bound * (1 + slack)))


def _flow_to(phi0: Weight, fam: MeasureFamily, t_end: float, dt: float) -> np.ndarray:
    from .flow import FlowState, flow_run

    run = flow_run(FlowState(phi0, fam, dt=dt), t_end, record_every=max(1, int(round(t_end / dt))))
    if run.failed:
        raise NumericalError(f"reference flow failed: {run.message}")
    return run.final.weight.u


def double_scaling(phi0: Weight, fam: MeasureFamily, k_list, t_star: float, dt: float = 1e-3) -> DoubleScalingTable:
    """``sup|phi_m^(k) - phi_{m/k}|`` with ``m = round(t_star*k)`` for each level.

    The flow reference starts from the same weight; the first-order
    semi-implicit runs at ``dt`` and ``dt/2`` are Richardson-extrapolated so the
    time error stays well below the ``1/k`` effect being measured.
    """
    if t_star < 0:
        raise InputError("t_star must be nonnegative")
    if t_star == 0:
        ref = phi0.u
    else:
        ref = 2 * _flow_to(phi0, fam, t_star, dt / 2) - _flow_to(phi0, fam, t_star, dt)
    reference = phi0.with_u(ref)
    rows = []
    for k in sorted(int(k) for k in k_list):
        q = Quantizer(phi0.geom, k)
        m = int(round(t_star * k))
        _, phi = iterate(phi0, fam, k, m_max=m, quantizer=q, stop_when_balanced=False)
        dev = float(np.abs(phi.u - q.lift(reference).u).max())
        rows.append([k, m, dev, k * dev])
    return DoubleScalingTable(t_star, rows)
