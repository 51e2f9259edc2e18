import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bergflow import grid as g
from bergflow.errors import InputError


def test_spectral_second_derivatives_are_exact_on_trig_polynomials():
    grid = g.PeriodicGrid2(16, 24)
    x, y = grid.mesh
    f = np.sin(2 * np.pi * x) * np.cos(4 * np.pi * y)
    two_pi = 2 * np.pi
    assert np.allclose(g.diff2(f, grid, "xx"), -(two_pi**2) * f, atol=1e-9)
    assert np.allclose(g.diff2(f, grid, "yy"), -(2 * two_pi) ** 2 * f, atol=1e-9)
    fxy = -two_pi * 2 * two_pi * np.cos(two_pi * x) * np.sin(4 * np.pi * y)
    assert np.allclose(g.diff2(f, grid, "xy"), fxy, atol=1e-9)


def test_finite_difference_mode_is_second_order():
    errs = []
    for n in (16, 32, 64):
        grid = g.PeriodicGrid2(n, n)
        x, _ = grid.mesh
        f = np.sin(2 * np.pi * x)
        errs.append(np.abs(g.diff2(f, grid, "xx", mode="fd") + (2 * np.pi) ** 2 * f).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


def test_poisson_solve_inverts_laplacian():
    grid = g.PeriodicGrid2(32, 32)
    x, y = grid.mesh
    u = np.cos(2 * np.pi * (x + 2 * y)) + 0.3 * np.sin(2 * np.pi * y)
    rhs = g.diff2(u, grid, "xx") + g.diff2(u, grid, "yy")
    assert np.abs(g.poisson_solve(rhs, grid) - u).max() < 1e-12


def test_poisson_solve_rejects_nonzero_mean():
    grid = g.PeriodicGrid2(8, 8)
    with pytest.raises(InputError):
        g.poisson_solve(np.ones(grid.shape), grid)


def test_shape_mismatch_is_an_input_error():
    with pytest.raises(InputError):
        g.integrate(np.ones((4, 4)), 1.0, g.PeriodicGrid2(8, 8))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(0, 3), st.floats(-1, 1))
def test_resample_preserves_band_limited_fields(kx, ky, phase):
    src = g.PeriodicGrid2(16, 16)
    dst = g.PeriodicGrid2(64, 32)
    field = lambda gr: np.cos(2 * np.pi * (kx * gr.mesh[0] + ky * gr.mesh[1]) + phase)
    assert np.abs(g.resample(field(src), src, dst) - field(dst)).max() < 1e-12


def test_line_derivatives_match_sech_profile():
    grid = g.LineGrid()
    t = grid.t
    u = 1 / np.cosh(t / 2) ** 2
    # d/dt sech^2(t/2) = -sech^2 tanh, second derivative from the product rule
    du = -(1 / np.cosh(t / 2) ** 2) * np.tanh(t / 2)
    d2u = 0.5 * (1 / np.cosh(t / 2) ** 2) * (2 * np.tanh(t / 2) ** 2 - (1 / np.cosh(t / 2) ** 2))
    assert np.abs(g.line_d1(u, grid) - du).max() < 1e-8
    assert np.abs(g.line_d2(u, grid) - d2u).max() < 1e-8


def test_banded_matrix_matches_stencil():
    grid = g.LineGrid(n=128)
    rng = np.random.default_rng(0)
    u = np.convolve(rng.standard_normal(128), np.ones(9) / 9, mode="same")
    ab = grid.d2_banded
    dense = np.zeros((128, 128))
    for d in range(-3, 4):
        for j in range(128):
            i = j - d
            if 0 <= i < 128:
                dense[i, j] = ab[3 + i - j, j]
    assert np.abs(dense @ u - g.line_d2(u, grid)).max() < 1e-9 * np.abs(u).max() / grid.h**2


def test_line_integrate_of_sech_squared_is_four():
    grid = g.LineGrid()
    # exact: int sech^2(t/2) dt = 4
    assert abs(g.line_integrate(1 / np.cosh(grid.t / 2) ** 2, grid) - 4) < 1e-9


def test_line_grid_validation():
    with pytest.raises(InputError):
        g.LineGrid(n=8)
    with pytest.raises(InputError):
        g.LineGrid(T=2.0)
