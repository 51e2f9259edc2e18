import numpy as np
import pytest
from scipy.special import beta

from bergflow.errors import InputError, NumericalError
from bergflow.geometry import EllipticCurve
from bergflow.grid import PeriodicGrid2
from bergflow.sections import MonomialBasis, ThetaBasis, basis_eval, cholesky, make_basis, quadrature_size


def test_quadrature_size_doubles_until_resolved():
    assert quadrature_size(32, 2, 1) == 32
    assert quadrature_size(32, 8, 1) == 64
    assert quadrature_size(32, 64, 2) == 512
    assert quadrature_size(48, 1, 1) == 48


@pytest.mark.parametrize("tau,degree,k", [(1j, 1, 4), (0.3 + 1.2j, 2, 3), (-0.4 + 0.8j, 1, 5)])
def test_flat_theta_gram_is_gaussian_integral(tau, degree, k):
    # each section is a sum of translated Gaussians: ||g||^2 = int_R exp(-2 pi N b y^2) dy
    curve = EllipticCurve(tau, degree, PeriodicGrid2(32, 32))
    basis = ThetaBasis(curve, k)
    N = k * degree
    G = basis.gram(np.ones(basis.quad.shape))
    assert np.abs(G - np.eye(N) / np.sqrt(2 * N * tau.imag)).max() < 1e-13


def test_reduced_sections_are_periodic(skew):
    basis = ThetaBasis(skew, 3)
    rng = np.random.default_rng(2)
    x, y = rng.random(5), rng.random(5)
    mod = lambda v: np.abs(v)
    assert np.abs(mod(basis.evaluate(x + 1, y)) - mod(basis.evaluate(x, y))).max() < 1e-12
    assert np.abs(mod(basis.evaluate(x, y + 1)) - mod(basis.evaluate(x, y))).max() < 1e-12


def test_scattered_evaluation_matches_grid(square):
    basis = ThetaBasis(square, 2)
    grid = basis.quad.grid
    block = basis._eval(grid.x[:3], grid.y[:1])[:, 0, :]
    pts = basis.evaluate(grid.x[:3], np.full(3, grid.y[0]))
    assert np.abs(block - pts).max() < 1e-13
    assert np.abs(basis_eval(basis, (grid.x[1], grid.y[0])) - pts[:, 1]).max() < 1e-13


def test_monomial_gram_is_beta_function(sphere):
    # int e^{(j+1)t} / (1+e^t)^{kd+2} dt = B(j+1, kd-j+1)
    k = 3
    basis = MonomialBasis(sphere, k)
    G = basis.gram(np.ones(sphere.shape))
    n = k * sphere.degree
    expected = [beta(j + 1, n - j + 1) for j in range(n + 1)]
    assert np.abs(np.diag(G).real - expected).max() < 1e-12
    assert np.allclose(G, np.diag(np.diag(G)))


def test_monomial_log_sum_requires_diagonal(sphere):
    basis = MonomialBasis(sphere, 2)
    H = np.eye(5, dtype=complex)
    H[0, 1] = H[1, 0] = 0.1
    with pytest.raises(InputError):
        basis.log_sum_sq(H)


def test_cholesky_reports_indefinite_forms():
    with pytest.raises(NumericalError) as info:
        cholesky(np.diag([1.0, -1.0]).astype(complex))
    assert info.value.margin == pytest.approx(-1.0)


def test_make_basis_dispatch_and_validation(square, sphere):
    assert isinstance(make_basis(square, 2), ThetaBasis)
    assert isinstance(make_basis(sphere, 2), MonomialBasis)
    with pytest.raises(InputError):
        make_basis(object(), 2)
    with pytest.raises(InputError):
        ThetaBasis(square, 0)


def test_gram_is_hermitian_positive_for_rough_density(skew):
    basis = ThetaBasis(skew, 2)
    rng = np.random.default_rng(3)
    density = np.exp(0.5 * rng.standard_normal(basis.quad.shape))
    G = basis.gram(density)
    assert np.abs(G - G.conj().T).max() == 0
    assert np.linalg.eigvalsh(G).min() > 0


def test_log_sum_sq_matches_inverse_form_oracle(skew):
    # sum over an H-orthonormal frame equals g^* H^{-1} g, whatever frame is used
    basis = ThetaBasis(skew, 2)
    rng = np.random.default_rng(4)
    A = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    H = basis.gram(np.ones(basis.quad.shape)) + 0.2 * (A @ A.conj().T)
    grid = basis.quad.grid
    g = basis.evaluate(grid.x[[0, 5, 9]], grid.y[[2, 7, 11]])
    oracle = np.real(np.sum(g.conj() * np.linalg.solve(H, g), axis=0))
    out = basis.log_sum_sq(H)[[2, 7, 11], [0, 5, 9]]
    assert np.abs(out - np.log(oracle)).max() < 1e-12
