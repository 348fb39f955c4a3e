import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as sci_integrate
from scipy.special import gamma

from sobolev_lab.grid import (
    ModeFn,
    TailWarning,
    differentiate,
    fd_weights,
    grad_norm_lp,
    harmonic_norm,
    integrate,
    make_grid,
    sphere_area,
    weighted_inner,
    zonal_harmonic,
)


def test_sphere_area_low_dimensions():
    assert sphere_area(2) == pytest.approx(2 * np.pi, rel=1e-15)
    assert sphere_area(3) == pytest.approx(4 * np.pi, rel=1e-15)


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_gaussian_integral(n):
    g = make_grid(n, 512)
    assert integrate(g, np.exp(-g.nodes**2)) == pytest.approx(np.pi ** (n / 2), rel=1e-12)


@pytest.mark.parametrize("n", [3, 4])
def test_power_law_integral(n):
    # int (1 + r^2)^{-n} dx = pi^{n/2} Gamma(n/2) / Gamma(n)
    g = make_grid(n, 1024)
    exact = np.pi ** (n / 2) * gamma(n / 2) / gamma(n)
    assert integrate(g, (1 + g.nodes**2) ** (-n)) == pytest.approx(exact, rel=1e-10)


def test_tail_warning_on_slow_decay():
    g = make_grid(3, 256)
    with pytest.warns(TailWarning):
        integrate(g, (1 + g.nodes**2) ** -1.6)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        integrate(g, np.exp(-g.nodes))


def test_derivatives_of_smooth_profile():
    g = make_grid(3, 1024)
    f = np.exp(-g.nodes**2)
    exact = -2 * g.nodes * f
    # near the origin differencing a flat profile leaves rounding / r
    inner = g.nodes > 1e-3
    assert np.max(np.abs(differentiate(g, f) - exact)[inner]) < 1e-8
    mid = g.mid_derivative(f)
    assert np.max(np.abs(mid + 2 * g.mid * np.exp(-g.mid**2))[g.mid > 1e-3]) < 1e-8


def test_fd_weights_reproduce_polynomials():
    x = np.linspace(-2, 3, 7)
    w = fd_weights(0.3, x, 2)
    for k in range(6):
        assert w[1] @ x**k == pytest.approx(k * 0.3 ** (k - 1) if k else 0.0, abs=1e-10)
        assert w[2] @ x**k == pytest.approx(k * (k - 1) * 0.3 ** (k - 2) if k > 1 else 0.0, abs=1e-9)


@pytest.mark.parametrize("bad", [dict(n=1, N=64), dict(n=3, N=8), dict(n=3, N=64, L=-1.0)])
def test_make_grid_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        make_grid(**bad)


@pytest.mark.parametrize("n", [3, 5])
@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_radial_gradient_norm_against_quad(n, p):
    g = make_grid(n, 512)
    phi = ModeFn.radial(g, np.exp(-g.nodes**2))
    ref = sci_integrate.quad(lambda r: (2 * r * np.exp(-r * r)) ** p * r ** (n - 1), 0, np.inf,
                             epsabs=0, epsrel=1e-13)[0]
    assert grad_norm_lp(g, phi, p) == pytest.approx((sphere_area(n) * ref) ** (1 / p), rel=1e-9)


@pytest.mark.parametrize("n", [3, 4])
def test_zonal_harmonic_normalization(n):
    # |S^{n-1}|^{-1} int Y_ell^2 over the sphere, by quadrature in the polar angle
    for ell in range(3):
        num = sci_integrate.quad(
            lambda th: zonal_harmonic(n, ell, np.cos(th)) ** 2 * np.sin(th) ** (n - 2), 0, np.pi)[0]
        den = sci_integrate.quad(lambda th: np.sin(th) ** (n - 2), 0, np.pi)[0]
        assert harmonic_norm(n, ell) / sphere_area(n) * sphere_area(n) == pytest.approx(
            harmonic_norm(n, ell), rel=1e-15)
        assert num / den == pytest.approx(harmonic_norm(n, ell) / sphere_area(n), rel=1e-10)


def test_p2_gradient_norm_with_mode_one():
    # phi = f(r) x_1/r; |D phi|^2 = f'^2 Y^2 + f^2 |grad_S Y|^2 / r^2
    n = 3
    g = make_grid(n, 1024)
    f = g.nodes * np.exp(-g.nodes**2)
    phi = ModeFn.single(g, 1, f)
    # phi = x_1 exp(-r^2): |D phi|^2 = ((1 - 2 x_1^2)^2 + 4 x_1^2 (x_2^2 + x_3^2)) e^{-2r^2};
    # Gaussian moments with variance 1/4 give 3/4 + 1/2 times (pi/2)^{3/2}
    exact = (np.pi / 2) ** 1.5 * 1.25
    assert grad_norm_lp(g, phi, 2.0) ** 2 == pytest.approx(exact, rel=1e-10)


def test_modefn_arithmetic_and_inner_products():
    g = make_grid(3, 512)
    a = ModeFn.radial(g, np.exp(-g.nodes**2))
    b = ModeFn.single(g, 1, g.nodes * np.exp(-g.nodes**2), axis=2)
    w = np.ones(g.N)
    # distinct harmonics are orthogonal
    assert weighted_inner(g, w, a, b) == 0.0
    c = (a + b) * 2.0 - a
    assert np.allclose(c.terms[(0, 0)], a.profile)
    assert np.allclose(c.terms[(1, 2)], 2 * b.terms[(1, 2)])
    assert not c.is_radial and a.is_radial
    assert weighted_inner(g, w, a, a) == pytest.approx(np.pi**1.5 / 2**1.5, rel=1e-11)
    with pytest.raises(ValueError):
        a + ModeFn.radial(make_grid(3, 128), np.zeros(128))


@given(lam=st.floats(0.2, 5.0), p=st.sampled_from([1.5, 2.0, 3.0]))
def test_gradient_norm_scale_equivariance(lam, p):
    # f -> lam^{(n-p)/p} f(lam r) keeps ||D f||_p; grid rebuilt at scale 1/lam
    n = 4
    g1 = make_grid(n, 512)
    g2 = make_grid(n, 512, 1.0 / lam)
    f1 = ModeFn.radial(g1, np.exp(-g1.nodes**2))
    f2 = ModeFn.radial(g2, lam ** ((n - p) / p) * np.exp(-(lam * g2.nodes) ** 2))
    assert grad_norm_lp(g2, f2, p) == pytest.approx(grad_norm_lp(g1, f1, p), rel=1e-8)
