"""Model geometries, weights and their Monge-Ampere densities.

A weight is stored as a correction ``u`` on top of a fixed reference weight:
the flat weight on an elliptic curve (written in the theta-function frame) or
the Fubini-Study weight on the circle-symmetric projective line. Densities are
always expressed against a unit-mass reference area element: ``dx dy`` on the
torus and ``e^t/(1+e^t)^2 dt`` on the line ``t = log|z|^2``. With ``dd^c``
normalized as ``(i/2pi) d dbar``, the curvature density of a weight of degree
``d`` integrates to ``d``.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import grid as g
from .errors import InputError
from .grid import LineGrid, PeriodicGrid2


def softplus(t: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, t)


@dataclass(frozen=True)
class EllipticCurve:
    """The torus ``C/(Z + tau Z)`` with a line bundle of degree ``degree``.

    Grid coordinates ``(x, y)`` are related to ``z`` by ``z = x + tau*y``.
    """

    tau: complex = 1j
    degree: int = 1
    grid: PeriodicGrid2 = field(default_factory=PeriodicGrid2)

    kind = "elliptic"
    reference = "flat"

    def __post_init__(self):
        if complex(self.tau).imag <= 0:
            raise InputError(f"Im tau must be positive, got {self.tau}")
        if int(self.degree) != self.degree or self.degree < 1:
            raise InputError(f"degree must be a positive integer, got {self.degree}")

    @property
    def volume(self) -> float:
        return float(self.degree)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @cached_property
    def lap_symbol(self) -> np.ndarray:
        """Fourier symbol of ``4 * Im(tau) * d/dz d/dzbar`` in grid coordinates."""
        a, b = self.tau.real, self.tau.imag
        kx, ky = self.grid.wavenumbers
        kxo = np.where(np.abs(kx) == np.pi * self.grid.nx, 0.0, kx)
        kyo = np.where(np.abs(ky) == np.pi * self.grid.ny, 0.0, ky)
        return -(abs(self.tau) ** 2 * kx**2 - 2 * a * kxo * kyo + ky**2) / b

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        return g.apply_symbol(u, self.lap_symbol)

    def linear_ma(self, v: np.ndarray) -> np.ndarray:
        """Change of the curvature density under ``u -> u + v`` (exact, it is linear)."""
        return self.laplacian(v) / (4 * np.pi)

    def ma_density(self, u: np.ndarray) -> np.ndarray:
        return self.degree + self.linear_ma(u)

    def log_ma_density(self, u: np.ndarray) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.log(self.ma_density(u))

    @cached_property
    def reference_density(self) -> np.ndarray:
        return np.ones(self.grid.shape)

    def integrate(self, f: np.ndarray) -> float:
        return g.integrate(f, 1.0, self.grid)

    def phi0(self) -> np.ndarray:
        """Reference weight ``2 pi d (Im z)^2 / Im tau`` in the theta frame."""
        _, y = self.grid.mesh
        return 2 * np.pi * self.degree * self.tau.imag * y**2

    def with_grid(self, grid: PeriodicGrid2) -> "EllipticCurve":
        return EllipticCurve(self.tau, self.degree, grid)

    def transfer(self, u: np.ndarray, target: "EllipticCurve") -> np.ndarray:
        return g.resample(u, self.grid, target.grid)

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "tau": [float(self.tau.real), float(self.tau.imag)],
            "degree": int(self.degree),
            "grid": {"nx": self.grid.nx, "ny": self.grid.ny},
        }


@dataclass(frozen=True)
class P1Symmetric:
    """``O(degree)`` over the projective line, restricted to weights invariant
    under rotations and under ``z -> 1/z``.

    Such a weight is a function ``psi(t)`` of ``t = log|z|^2`` and ``u = psi -
    d*log(1+e^t)`` is bounded and even.
    """

    degree: int = 1
    grid: LineGrid = field(default_factory=LineGrid)

    kind = "p1"
    reference = "fubini-study"

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise InputError(f"degree must be a positive integer, got {self.degree}")

    @property
    def volume(self) -> float:
        return float(self.degree)

    @property
    def shape(self) -> tuple[int]:
        return self.grid.shape

    @cached_property
    def t(self) -> np.ndarray:
        return self.grid.t

    @cached_property
    def log_mu0(self) -> np.ndarray:
        """Log of the unit-mass reference element ``e^t/(1+e^t)^2`` per ``dt``."""
        return self.t - 2 * softplus(self.t)

    @cached_property
    def mu0(self) -> np.ndarray:
        return np.exp(self.log_mu0)

    def psi_fs(self) -> np.ndarray:
        return self.degree * softplus(self.t)

    def phi0(self) -> np.ndarray:
        return self.psi_fs()

    def linear_ma(self, v: np.ndarray) -> np.ndarray:
        return g.line_d2(v, self.grid) / self.mu0

    def ma_density(self, u: np.ndarray) -> np.ndarray:
        return self.degree + self.linear_ma(u)

    def log_ma_density(self, u: np.ndarray) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.log(self.degree) + np.log1p(self.linear_ma(u) / self.degree)

    @cached_property
    def reference_density(self) -> np.ndarray:
        return np.ones(self.grid.shape)

    def integrate(self, f: np.ndarray) -> float:
        return g.line_integrate(np.asarray(f) * self.mu0, self.grid)

    def legendre_slope(self, u: np.ndarray) -> np.ndarray:
        """``psi'(t)``, which increases from 0 to ``d`` for positive weights."""
        fs = self.degree / (1 + np.exp(-self.t))
        return fs + g.line_d1(u, self.grid)

    def with_grid(self, grid: LineGrid) -> "P1Symmetric":
        return P1Symmetric(self.degree, grid)

    def transfer(self, u: np.ndarray, target: "P1Symmetric") -> np.ndarray:
        if target.grid == self.grid:
            return np.array(u, dtype=float)
        return np.interp(target.t, self.t, u)

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "degree": int(self.degree),
            "grid": {"n": self.grid.n, "T": self.grid.T, "decay_tol": self.grid.decay_tol},
        }


Geometry = EllipticCurve | P1Symmetric


@dataclass(frozen=True)
class EllipticFamily:
    """Elliptic curves ``C/(Z + tau(s) Z)`` over a disc in the ``s``-plane.

    ``tau_coeffs`` are polynomial coefficients in increasing degree, so
    ``(1j,)`` is a trivial family and ``(1j, 1.0)`` is ``tau(s) = i + s``.
    """

    tau_coeffs: tuple = (1j,)
    degree: int = 1
    grid: PeriodicGrid2 = field(default_factory=PeriodicGrid2)
    radius: float = 0.2

    kind = "elliptic-family"

    def __post_init__(self):
        if not self.tau_coeffs:
            raise InputError("tau_coeffs must be non-empty")
        n = 33
        ss = np.linspace(-self.radius, self.radius, n)
        sgrid = ss[None, :] + 1j * ss[:, None]
        sgrid = sgrid[np.abs(sgrid) <= self.radius + 1e-12]
        if np.min(self.tau(sgrid).imag) <= 0.1:
            raise InputError("Im tau(s) must stay above 0.1 on the disc")

    @property
    def is_trivial(self) -> bool:
        return all(c == 0 for c in self.tau_coeffs[1:])

    def tau(self, s):
        return np.polyval(np.array(self.tau_coeffs[::-1], dtype=complex), s)

    def dtau(self, s):
        coeffs = np.array(self.tau_coeffs, dtype=complex)
        if coeffs.size == 1:
            return np.zeros_like(np.asarray(s, dtype=complex))
        deriv = coeffs[1:] * np.arange(1, coeffs.size)
        return np.polyval(deriv[::-1], s)

    def fiber(self, s: complex) -> EllipticCurve:
        return EllipticCurve(complex(self.tau(s)), self.degree, self.grid)

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "tau_coeffs": [[complex(c).real, complex(c).imag] for c in self.tau_coeffs],
            "degree": int(self.degree),
            "grid": {"nx": self.grid.nx, "ny": self.grid.ny},
            "radius": self.radius,
        }


def geometry_from_descriptor(desc: dict):
    kind = desc.get("kind")
    if kind == "elliptic":
        re, im = desc["tau"]
        return EllipticCurve(complex(re, im), int(desc["degree"]), PeriodicGrid2(**desc["grid"]))
    if kind == "p1":
        return P1Symmetric(int(desc["degree"]), LineGrid(**desc["grid"]))
    if kind == "elliptic-family":
        coeffs = tuple(complex(re, im) for re, im in desc["tau_coeffs"])
        return EllipticFamily(coeffs, int(desc["degree"]), PeriodicGrid2(**desc["grid"]), desc["radius"])
    raise InputError(f"unknown geometry kind {kind!r}")


# ---------------------------------------------------------------------------
# weights and densities


@dataclass(eq=False)
class Weight:
    """``phi = phi_0 + u`` for the reference weight ``phi_0`` of ``geom``."""

    geom: Geometry
    u: np.ndarray

    def __post_init__(self):
        self.u = np.array(self.u, dtype=float)
        if self.u.shape != self.geom.shape:
            raise InputError(f"correction shape {self.u.shape} does not match geometry {self.geom.shape}")
        if not np.all(np.isfinite(self.u)):
            raise InputError("weight correction contains non-finite samples")
        self._margin = None

    @property
    def reference(self) -> str:
        return self.geom.reference

    def shifted(self, c: float) -> "Weight":
        return Weight(self.geom, self.u + c)

    def with_u(self, u: np.ndarray) -> "Weight":
        return Weight(self.geom, u)

    def on(self, geom: Geometry) -> "Weight":
        """Same weight sampled on another grid of the same model."""
        return Weight(geom, self.geom.transfer(self.u, geom))

    @property
    def positivity_margin(self) -> float:
        if self._margin is None:
            self._margin = float(np.min(self.geom.ma_density(self.u)))
        return self._margin


@dataclass(eq=False)
class Density:
    """Values of a measure against the reference unit-mass area element."""

    geom: Geometry
    values: np.ndarray

    @property
    def mass(self) -> float:
        return self.geom.integrate(self.values)

    def normalized(self) -> "Density":
        return Density(self.geom, self.values / self.mass)


def reference_weight(geom: Geometry) -> Weight:
    """The flat weight (elliptic curve) or Fubini-Study weight (projective line)."""
    return Weight(geom, np.zeros(geom.shape))


def ma_measure(w: Weight) -> Density:
    """Curvature density ``dd^c phi`` against the reference element; mass ``d``."""
    return Density(w.geom, w.geom.ma_density(w.u))


def is_fiber_positive(w: Weight) -> tuple[bool, float]:
    """Whether the curvature density is strictly positive, with its minimum."""
    margin = w.positivity_margin
    return margin > 0, margin


# ---------------------------------------------------------------------------
# serialization


def _encode(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"dtype": "<f8", "shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype=obj["dtype"]).reshape(obj["shape"]).copy()


def weight_to_dict(w: Weight) -> dict:
    return {"format": "bergflow.weight/1", "geometry": w.geom.descriptor(), "reference": w.reference, "u": _encode(w.u)}


def weight_from_dict(obj: dict) -> Weight:
    if obj.get("format") != "bergflow.weight/1":
        raise InputError(f"not a weight container: {obj.get('format')!r}")
    geom = geometry_from_descriptor(obj["geometry"])
    if obj.get("reference") != geom.reference:
        raise InputError("reference tag does not match the geometry")
    return Weight(geom, _decode(obj["u"]))


def save_weight(w: Weight, path: str | Path) -> None:
    """Write a weight as JSON (``.json``) or as a numpy archive (anything else)."""
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(weight_to_dict(w), sort_keys=True))
    else:
        with open(path, "wb") as fh:
            np.savez(fh, u=w.u, meta=np.array(json.dumps({"geometry": w.geom.descriptor(), "reference": w.reference})))


def load_weight(path: str | Path) -> Weight:
    path = Path(path)
    if path.suffix == ".json":
        return weight_from_dict(json.loads(path.read_text()))
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        geom = geometry_from_descriptor(meta["geometry"])
        return Weight(geom, data["u"])
