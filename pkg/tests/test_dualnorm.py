import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from sobolev_lab.bubble import Bubble, calibrated_bubble, make_params, profile, profile_dr, profile_dscale, sample
from sobolev_lab.dualnorm import (
    DualSolveError,
    Residual,
    dictionary_lower_bound,
    discrete_grad_norm,
    dual_energy,
    dual_norm,
    dual_solve,
    functional_from_density,
    residual,
    sigma,
)
from sobolev_lab.experiments import dictionary, eigen_direction, random_directions, setup, smooth_directions
from sobolev_lab.grid import ModeFn, make_grid
from sobolev_lab.spectrum import mode_spectra


def perturbed_residual(s, eps=1e-2, seed=0):
    u = sample(s.params, s.v0, s.grid) + random_directions(s, 1, seed=seed)[0] * eps
    return residual(s.params, u, s.grid, base=s.v0)


def test_zero_functional():
    s = setup(3, 2.0)
    f = functional_from_density(s.grid, 2.0, np.zeros(s.grid.N))
    sol = dual_solve(s.params, f, s.grid)
    assert not np.any(sol.w) and sol.norm == 0


def test_duality_identity(pair):
    s = setup(*pair)
    sol = dual_solve(s.params, perturbed_residual(s), s.grid)
    assert sol.pairing == pytest.approx(sol.energy, rel=1e-8)
    assert sol.optimality <= 1e-10
    assert sol.grad_norm == pytest.approx(discrete_grad_norm(s.grid, sol.w, s.params.p), rel=1e-10)


def test_poisson_solve_at_p2():
    s = setup(3, 2.0)
    g = s.grid
    f = perturbed_residual(s)
    G = g.G[:, : g.N - 1]
    K = (G.T @ sp.diags(g.mid_weights / g.mid**2) @ G).tocsc()
    F = f.vector[:-1]
    sol = dual_solve(s.params, f, g)
    w = spla.spsolve(K, F)
    # K is badly conditioned, so compare residuals and energies, not entries
    for x in (w, sol.w[:-1]):
        assert np.linalg.norm(K @ x - F) <= 1e-12 * np.linalg.norm(F)
    assert sol.energy == pytest.approx(float(w @ (K @ w)), rel=1e-10)


def test_spectral_oracle_at_p2():
    # at p = 2 the linearized operator is the Laplacian, so for an eigenpair
    # K xi = mu M xi with xi^T M xi = 1 the functional M xi has norm mu^{-1/2}
    s = setup(3, 2.0)
    res = mode_spectra(s.params, s.v0, s.grid, 0, k=3)[0]
    xi, mu = res.eigenvectors[:, 2], res.eigenvalues[2]
    dens = profile(s.params, s.v0, s.grid.nodes) ** (s.params.pstar - 2) * xi
    f = functional_from_density(s.grid, 2.0, dens)
    assert dual_norm(s.params, f, s.grid) == pytest.approx(mu**-0.5, rel=1e-6)


def test_dictionary_never_exceeds_norm(pair):
    s = setup(*pair)
    f = perturbed_residual(s, seed=1)
    r = s.grid.nodes
    dic = [profile(s.params, s.v0, r), profile_dscale(s.params, s.v0, r)]
    dic += list(mode_spectra(s.params, s.v0, s.grid, 0, k=7)[0].eigenvectors[:, 3:7].T)
    dic += dictionary(s.grid)
    lower, idx = dictionary_lower_bound(s.params, f, s.grid, dic)
    norm = dual_norm(s.params, f, s.grid)
    assert 0 < lower <= norm * (1 + 1e-10)
    assert idx >= 0


def test_dictionary_attains_norm_at_maximizer(pair):
    s = setup(*pair)
    f = perturbed_residual(s, seed=2)
    sol = dual_solve(s.params, f, s.grid)
    lower, _ = dictionary_lower_bound(s.params, f, s.grid, [sol.w])
    assert lower == pytest.approx(sol.norm, rel=1e-8)


@settings(max_examples=10)
@given(scale=st.floats(-1e3, 1e3).filter(lambda x: abs(x) > 1e-3))
def test_homogeneity(scale):
    s = setup(4, 1.5)
    f = perturbed_residual(s)
    a, b = dual_solve(s.params, f, s.grid), dual_solve(s.params, f * scale, s.grid)
    assert b.norm == pytest.approx(abs(scale) * a.norm, rel=1e-8)
    assert b.grad_norm == pytest.approx(abs(scale) ** (1 / (s.params.p - 1)) * a.grad_norm, rel=1e-8)


@settings(max_examples=20)
@given(seed=st.integers(0, 10_000), t=st.floats(1e-4, 1.0))
def test_minimizer_beats_perturbations(seed, t):
    s = setup(5, 3.0)
    f = perturbed_residual(s)
    sol = dual_solve(s.params, f, s.grid)
    psi = smooth_directions(s.params, s.v0, s.grid, 1, seed)[0].profile
    psi *= t * discrete_grad_norm(s.grid, sol.w, 3.0) / discrete_grad_norm(s.grid, psi, 3.0)
    e0 = dual_energy(s.grid, 3.0, f, sol.w)
    assert e0 == pytest.approx(-(1 - 1 / 3.0) * sol.energy, rel=1e-8)
    assert dual_energy(s.grid, 3.0, f, sol.w + psi) >= e0
    assert dual_energy(s.grid, 3.0, f, sol.w - psi) >= e0


def test_residual_of_bubble_vanishes(pair):
    P = make_params(*pair)
    g = make_grid(P.n, 1024)
    v0 = calibrated_bubble(P)
    u = sample(P, v0, g)
    f = residual(P, u, g, base=v0)
    assert f.relative_sup(u) <= 1e-8
    natural = P.S ** (P.n * (P.p - 1) / P.p)
    assert dual_norm(P, f, g) <= 1e-6 * natural


def test_residual_of_doubled_bubble(pair):
    s = setup(*pair)
    P = s.params
    u = sample(P, s.v0, s.grid) * 2.0
    f = residual(P, u, s.grid)  # plain differencing, no bubble base
    v = profile(P, s.v0, s.grid.nodes)
    expected = (2 ** (P.p - 1) - 2 ** (P.pstar - 1)) * v ** (P.pstar - 1)
    m = f.reliable
    assert m.sum() >= 40
    assert np.allclose(f.pointwise[m], expected[m], rtol=1e-5, atol=0)
    assert np.all(f.pointwise[m] < 0)


def test_pointwise_and_weak_forms_agree(pair):
    # u is a sum of two bubbles, so u' keeps one sign and the flux is smooth;
    # where u' changes sign and p < 2 the strong form only exists weakly
    s = setup(*pair)
    P, g = s.params, s.grid
    other = Bubble(s.v0.amplitude, 2.0)
    u = ModeFn.radial(g, 1.5 * profile(P, s.v0, g.nodes) + 0.3 * profile(P, other, g.nodes))
    du = 1.5 * profile_dr(P, s.v0, g.mid) + 0.3 * profile_dr(P, other, g.mid)
    f = residual(P, u, g, base=s.v0)
    t = np.log(g.nodes)
    rng = np.random.default_rng(0)
    for _ in range(10):
        c, w = rng.uniform(-3, 3), rng.uniform(0.3, 1.0)
        phi = np.exp(-(((t - c) / w) ** 2))
        strong = float(g.quad_weights @ (f.pointwise * phi))
        weak = f.as_functional(phi)
        scale = (float(g.mid_weights @ np.abs(sigma(du, P.p) * g.mid_derivative(phi)))
                 + float(g.quad_weights @ np.abs(sigma(u.profile, P.pstar) * phi)))
        assert abs(strong - weak) <= 1e-8 * scale


def test_errors():
    s = setup(3, 2.0)
    other = setup(3, 2.0, N=512)
    f = functional_from_density(s.grid, 2.0, np.ones(s.grid.N))
    with pytest.raises(ValueError, match="different grid"):
        dual_solve(s.params, f, other.grid)
    bad = Residual(s.grid, 2.0, f.pointwise, f.vector.copy())
    bad.vector[3] = np.nan
    with pytest.raises(DualSolveError):
        dual_solve(s.params, bad, s.grid)
    with pytest.raises(ValueError, match="radial"):
        residual(s.params, ModeFn.single(s.grid, 1, np.ones(s.grid.N)), s.grid)
    with pytest.raises(ValueError):
        residual(s.params, np.ones(7), s.grid)


def test_eigen_direction_residual_is_linear_in_eps():
    s = setup(3, 2.0)
    phi = eigen_direction(s, 2)
    v = sample(s.params, s.v0, s.grid)
    norms = [dual_norm(s.params, residual(s.params, v + phi * e, s.grid, base=s.v0), s.grid) for e in (1e-4, 2e-4)]
    assert norms[1] / norms[0] == pytest.approx(2.0, rel=1e-3)
