"""Weight-level Kahler-Ricci flow ``du/dt = log(MA(phi) / (V mu_phi))`` and a
Newton solver for its stationary points.

The semi-implicit scheme linearizes ``log MA`` around the current weight and
solves one symmetric positive system per step. On the torus the system is
handled by conjugate gradients with a Fourier preconditioner; on the line it
is banded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse.linalg import LinearOperator, cg

from . import grid as g
from .errors import InputError, NumericalError
from .functionals import MeasureFamily, energy, f_functional, i_functional, j_functional
from .geometry import EllipticCurve, P1Symmetric, Weight

SCHEMES = ("explicit", "semi-implicit")
MONOTONE_SLACK = 1e-12


def log_ratio(geom, u: np.ndarray, fam: MeasureFamily, normalized: bool | None = None) -> np.ndarray:
    """``log(MA(phi) / (V mu_phi))``, the flow velocity."""
    normalized = fam.normalized if normalized is None else normalized
    s = fam.sigma
    log_mu = s * u + np.log(fam.base(geom))
    if normalized and s != 0:
        log_mu = log_mu - fam.log_mass(geom, u)
    return geom.log_ma_density(u) - math.log(geom.volume) - log_mu


def _symmetrize(geom, u: np.ndarray) -> np.ndarray:
    if isinstance(geom, P1Symmetric):
        return 0.5 * (u + u[::-1])
    return u


def solve_shifted(geom, W: np.ndarray, a: float, b: float, rhs: np.ndarray, rtol: float = 1e-13) -> np.ndarray:
    """Solve ``a*W*x - b*L(x) = rhs`` where ``L`` is the curvature operator
    ``v -> linear_ma(v)`` and ``b > 0``.

    ``L`` is symmetric and negative semidefinite for the reference measure, so
    the system is positive definite when ``a*W > 0``.
    """
    if isinstance(geom, EllipticCurve):
        sym = -b * geom.lap_symbol / (4 * np.pi)
        if a == 0:
            return g.solve_symbol(rhs - rhs.mean(), sym)
        if a < 0:
            raise InputError("indefinite shifted systems are only supported on the line")
        pre = a * float(W.mean()) + sym

        def apply(x):
            x = x.reshape(geom.shape)
            return (a * W * x - b * geom.linear_ma(x)).ravel()

        def precondition(r):
            return g.apply_symbol(r.reshape(geom.shape), 1.0 / pre).ravel()

        n = W.size
        A = LinearOperator((n, n), matvec=apply, dtype=float)
        M = LinearOperator((n, n), matvec=precondition, dtype=float)
        x0 = g.apply_symbol(rhs, 1.0 / pre).ravel()
        sol, info = cg(A, rhs.ravel(), x0=x0, rtol=rtol, atol=0.0, M=M, maxiter=500)
        if info != 0:
            raise NumericalError(f"conjugate gradients did not converge (info={info})")
        return sol.reshape(geom.shape)
    # line: multiply through by the reference element so the matrix is D2-based
    mu0 = geom.mu0
    ab = -b * geom.grid.d2_banded
    diag = a * W * mu0 if a != 0 else 1e-9 * mu0
    ab = ab.copy()
    ab[3] += diag
    return solve_banded((3, 3), ab, rhs * mu0)


# ---------------------------------------------------------------------------
# time stepping


@dataclass
class FlowState:
    weight: Weight
    fam: MeasureFamily
    t: float = 0.0
    dt: float = 1e-2
    scheme: str = "semi-implicit"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InputError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InputError(f"dt must be positive, got {self.dt}")
        self.fam.check(self.weight.geom)


def explicit_dt_limit(geom, u: np.ndarray) -> float:
    """Largest stable explicit step, ``0.2 h^2 min MA`` in the natural metric."""
    ma_min = float(np.min(geom.ma_density(u)))
    if isinstance(geom, EllipticCurve):
        tau = geom.tau
        h = min(geom.grid.hx, geom.grid.hy)
        return 0.2 * h**2 * ma_min * 2 * tau.imag / (abs(tau) ** 2 + 1)
    return 0.2 * geom.grid.h**2 * float(np.min(geom.ma_density(u) * geom.mu0))


def flow_step(state: FlowState) -> FlowState:
    """Advance one step; raises :class:`NumericalError` on loss of positivity."""
    w, fam, dt = state.weight, state.fam, state.dt
    geom, u = w.geom, w.u
    ma = geom.ma_density(u)
    if ma.min() <= 0:
        raise NumericalError("weight is not fiber-positive", margin=float(ma.min()))
    G = log_ratio(geom, u, fam)
    if state.scheme == "explicit":
        limit = explicit_dt_limit(geom, u)
        if dt > limit:
            raise InputError(f"dt={dt:.3e} exceeds the explicit stability bound {limit:.3e}")
        delta = dt * G
    else:
        W = ma / geom.volume
        stiff = fam.sigma if not fam.normalized else 0
        delta = solve_shifted(geom, W, 1 + dt * stiff, dt / geom.volume, dt * W * G, rtol=1e-11)
    new_u = _symmetrize(geom, u + delta)
    margin = float(np.min(geom.ma_density(new_u)))
    if not np.all(np.isfinite(new_u)) or margin <= 0:
        raise NumericalError("step rejected: curvature density became nonpositive", margin=margin)
    return replace(state, weight=w.with_u(new_u), t=state.t + dt)


@dataclass
class FlowReport:
    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    worst_slack: dict[str, float] = field(default_factory=dict)
    final: FlowState | None = None
    failed: bool = False
    message: str = ""

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])


def sup_distance(a: np.ndarray, b: np.ndarray, modulo_constants: bool = False) -> float:
    d = np.asarray(a) - np.asarray(b)
    if modulo_constants:
        return 0.5 * float(d.max() - d.min())
    return float(np.abs(d).max())


def _record(state: FlowState, ref: np.ndarray | None, modulo: bool) -> list[float]:
    w, fam = state.weight, state.fam
    G = log_ratio(w.geom, w.u, fam)
    dist = sup_distance(w.u, ref, modulo) if ref is not None else float("nan")
    return [
        state.t,
        energy(w),
        i_functional(w, fam),
        f_functional(w, fam),
        j_functional(w),
        float(np.abs(G).max()),
        float(np.min(w.geom.ma_density(w.u))),
        dist,
    ]


FLOW_COLUMNS = ["t", "E", "I", "F", "J", "residual", "min_ma", "sup_dist"]


def flow_run(
    state: FlowState,
    t_end: float,
    reference: np.ndarray | None = None,
    modulo_constants: bool = False,
    record_every: int = 1,
) -> FlowReport:
    """Step to ``t_end``, checking the monotonicity of ``F`` (all settings) and of
    ``E`` and ``-I`` (normalized settings) at every step."""
    report = FlowReport(list(FLOW_COLUMNS))
    watch = {"F": 1}
    if state.fam.normalized:
        watch.update({"E": 1, "I": -1})
    report.checks = {f"{name}_monotone": True for name in watch}
    report.worst_slack = {f"{name}_monotone": 0.0 for name in watch}
    prev = _record(state, reference, modulo_constants)
    report.rows.append(prev)
    n_steps = int(round((t_end - state.t) / state.dt))
    for step in range(1, n_steps + 1):
        try:
            state = flow_step(state)
        except NumericalError as exc:
            report.failed, report.message = True, f"{exc} (margin {exc.margin})"
            break
        cur = _record(state, reference, modulo_constants)
        for name, sign in watch.items():
            i = FLOW_COLUMNS.index(name)
            drop = sign * (prev[i] - cur[i])
            key = f"{name}_monotone"
            report.worst_slack[key] = max(report.worst_slack[key], drop / (1 + abs(prev[i])))
            if drop > MONOTONE_SLACK * (1 + abs(prev[i])):
                report.checks[key] = False
        if step % record_every == 0 or step == n_steps:
            report.rows.append(cur)
        prev = cur
    report.final = state
    return report


# ---------------------------------------------------------------------------
# stationary points


@dataclass
class FixedPointResult:
    weight: Weight
    residual: float
    iterations: int
    history: list[float] = field(default_factory=list)


def solve_fixed_point(fam: MeasureFamily, init: Weight, tol: float = 1e-11, max_iter: int = 60) -> FixedPointResult:
    """Damped Newton on ``MA(phi) = V mu_phi``.

    Canonical families are solved in their unnormalized form, whose solution
    automatically has unit measure mass; fixed measures are shifted so that
    ``int u mu = 0``.
    """
    geom = init.geom
    fam.check(geom)
    s = fam.sigma
    u = init.u.copy()
    if geom.ma_density(u).min() <= 0:
        raise NumericalError("initial weight is not fiber-positive", margin=float(geom.ma_density(u).min()))

    def resid(v):
        return log_ratio(geom, v, fam, normalized=False)

    G = resid(u)
    err = float(np.abs(G).max())
    history = [err]
    it = 0
    while err > tol and it < max_iter:
        it += 1
        W = geom.ma_density(u) / geom.volume
        delta = solve_shifted(geom, W, float(s), 1.0 / geom.volume, W * G)
        step = 1.0
        while True:
            trial = _symmetrize(geom, u + step * delta)
            if geom.ma_density(trial).min() > 0:
                G_trial = resid(trial)
                e_trial = float(np.abs(G_trial).max())
                if np.isfinite(e_trial) and e_trial < (1 - 1e-4 * step) * err or e_trial <= tol:
                    break
            step *= 0.5
            if step < 1e-6:
                raise NumericalError(f"Newton line search failed at residual {err:.3e}", margin=err)
        u, G, err = trial, G_trial, e_trial
        history.append(err)
    if err > tol:
        raise NumericalError(f"Newton did not converge: residual {err:.3e} after {it} iterations", margin=err)
    if s == 0:
        u = u - geom.integrate(u * fam.base(geom))
    w = init.with_u(u)
    final = float(np.abs(log_ratio(geom, u, fam)).max())
    return FixedPointResult(w, final, it, history)
