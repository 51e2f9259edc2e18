"""Measure families ``phi -> mu_phi`` and the energy functionals built on them.

Every family has the shape ``exp(sigma*u) * base`` with ``sigma`` in
``{0, +1, -1}``, optionally divided by its mass:

* ``fixed``: a fixed probability density (``sigma = 0``);
* ``twisted``: ``exp(u) * mu_0`` with ``mu_0 = MA(phi_0)/V``, an ``e^{+phi}``
  family on a curve whose canonical bundle is trivial;
* ``anticanonical``: ``exp(-phi)`` on the projective line, i.e. ``exp(-u)``
  times the Fubini-Study area form (degree 2 only).

The total curvature mass ``V`` equals the degree and is carried explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError
from .geometry import EllipticCurve, P1Symmetric, Weight

KINDS = {"fixed": 0, "twisted": 1, "anticanonical": -1}


@dataclass(frozen=True, eq=False)
class MeasureFamily:
    """A rule assigning a volume density to each weight."""

    kind: str = "fixed"
    normalized: bool = True
    base_geom: object = None
    base_values: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown measure family {self.kind!r}; expected one of {sorted(KINDS)}")
        if self.kind == "fixed" and not self.normalized:
            raise InputError("a fixed measure is always normalized")
        if self.base_values is not None:
            vals = np.asarray(self.base_values, dtype=float)
            if self.base_geom is None or vals.shape != self.base_geom.shape:
                raise InputError("base density needs a matching geometry")
            if not np.all(np.isfinite(vals)) or vals.min() <= 0:
                raise InputError("base density must be finite and strictly positive")

    @property
    def sigma(self) -> int:
        return KINDS[self.kind]

    @property
    def label(self) -> str:
        if self.kind == "fixed":
            return "fixed"
        return f"{self.kind}-{'normalized' if self.normalized else 'plain'}"

    def check(self, geom) -> None:
        if self.kind == "anticanonical":
            if not isinstance(geom, P1Symmetric) or geom.degree != 2:
                raise InputError("the anticanonical family lives on the projective line with degree 2")

    def base(self, geom) -> np.ndarray:
        """Base density on ``geom``'s grid, with unit mass."""
        if self.base_values is None:
            return geom.reference_density
        if self.base_geom == geom:
            vals = np.asarray(self.base_values, dtype=float)
        else:
            vals = self.base_geom.transfer(self.base_values, geom)
        return vals / geom.integrate(vals)

    def log_mass(self, geom, u: np.ndarray) -> float:
        """``log int exp(sigma*u) base`` computed without overflow."""
        s = self.sigma
        if s == 0:
            return 0.0
        expo = s * u
        top = float(np.max(expo))
        return top + float(np.log(geom.integrate(np.exp(expo - top) * self.base(geom))))

    def density(self, geom, u: np.ndarray) -> np.ndarray:
        self.check(geom)
        s = self.sigma
        base = self.base(geom)
        if s == 0:
            return base
        if self.normalized:
            return np.exp(s * u - self.log_mass(geom, u)) * base
        with np.errstate(over="ignore"):
            out = np.exp(s * u) * base
        if not np.all(np.isfinite(out)):
            raise NumericalError("measure density overflowed; the weight has blown up")
        return out


def fixed_measure(geom, values=None) -> MeasureFamily:
    if values is None:
        return MeasureFamily("fixed")
    return MeasureFamily("fixed", True, geom, np.asarray(values, dtype=float))


def twisted_measure(normalized: bool = True) -> MeasureFamily:
    return MeasureFamily("twisted", normalized)


def anticanonical_measure(normalized: bool = True) -> MeasureFamily:
    return MeasureFamily("anticanonical", normalized)


def cosine_measure(geom: EllipticCurve, amplitude: float = 0.3) -> MeasureFamily:
    """Fixed measure proportional to ``1 + amplitude*cos(2 pi x)``."""
    x, _ = geom.grid.mesh
    return fixed_measure(geom, 1 + amplitude * np.cos(2 * np.pi * x))


def mu_of(phi: Weight, fam: MeasureFamily) -> np.ndarray:
    return fam.density(phi.geom, phi.u)


# ---------------------------------------------------------------------------
# functionals


def energy(phi: Weight) -> float:
    """Monge-Ampere energy ``(1/2) int u (MA(phi) + MA(phi_0))``; ``E(phi_0) = 0``."""
    geom, u = phi.geom, phi.u
    return geom.integrate(u * (geom.volume + 0.5 * geom.linear_ma(u)))


def i_functional(phi: Weight, fam: MeasureFamily) -> float:
    """Primitive of the measure family: ``dI(phi).v = int v mu_phi``."""
    geom, u = phi.geom, phi.u
    fam.check(geom)
    s = fam.sigma
    if s == 0:
        return geom.integrate(u * fam.base(geom))
    log_mass = fam.log_mass(geom, u)
    if fam.normalized:
        return s * log_mass
    return s * float(np.exp(log_mass))


def i_pm(phi: Weight, fam: MeasureFamily) -> float:
    """``sigma * log int exp(sigma*u) base``, the scale-equivariant primitive."""
    if fam.sigma == 0:
        return i_functional(phi, fam)
    return fam.sigma * fam.log_mass(phi.geom, phi.u)


def f_functional(phi: Weight, fam: MeasureFamily) -> float:
    """``F = E - V*I``, increasing along the flow."""
    return energy(phi) - phi.geom.volume * i_functional(phi, fam)


def j_functional(phi: Weight) -> float:
    """``J = int u MA(phi_0) - E``, nonnegative and zero exactly on constants."""
    geom, u = phi.geom, phi.u
    return -0.5 * geom.integrate(u * geom.linear_ma(u))


def f_j_functionals(phi: Weight, fam: MeasureFamily) -> dict[str, float]:
    return {"F_mu": f_functional(phi, fam), "J": j_functional(phi)}


def energy_derivative_check(phi: Weight, v: np.ndarray, fam: MeasureFamily, h: float = 1e-4) -> float:
    """Largest relative error of central differences of ``E`` and ``I`` against
    their claimed differentials ``MA`` and ``mu``."""
    geom = phi.geom
    v = np.asarray(v, dtype=float)
    plus, minus = phi.with_u(phi.u + h * v), phi.with_u(phi.u - h * v)
    worst = 0.0
    for func, diff in (
        (energy, lambda: geom.integrate(v * geom.ma_density(phi.u))),
        (lambda w: i_functional(w, fam), lambda: geom.integrate(v * fam.density(geom, phi.u))),
    ):
        fd = (func(plus) - func(minus)) / (2 * h)
        exact = diff()
        worst = max(worst, abs(fd - exact) / max(abs(exact), 1.0))
    return worst

