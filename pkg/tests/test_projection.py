import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sobolev_lab.bubble import Bubble, Params, normalization_constant, profile
from sobolev_lab.experiments import eigen_direction, random_directions, setup
from sobolev_lab.grid import ModeFn, grad_norm_lp
from sobolev_lab.projection import ProjectionError, project


def bubble_fn(s, b):
    return ModeFn.radial(s.grid, profile(s.params, b, s.grid.nodes))


def test_fixed_point(pair):
    s = setup(*pair)
    res = project(s.params, bubble_fn(s, s.v0), s.v0)
    assert res.exact and res.epsilon == 0
    assert res.v.scale == pytest.approx(1.0, rel=1e-12)
    assert res.v.amplitude == pytest.approx(s.v0.amplitude, rel=1e-12)
    assert np.max(np.abs(res.ortho_residuals)) <= 1e-12 * res.info["ortho_scale"]
    assert not np.any(res.phi.profile)


def test_recovers_rescaled_bubble(pair):
    s = setup(*pair)
    target = Bubble(s.v0.amplitude, 1.3)
    res = project(s.params, bubble_fn(s, target), s.v0)
    assert res.v.scale == pytest.approx(1.3, rel=1e-8)
    assert res.epsilon <= 1e-8
    assert res.amplitude_drift <= 1e-8


def test_orthogonal_perturbation(pair):
    s = setup(*pair)
    phi = eigen_direction(s, 2)
    eps0 = 1e-3
    u = bubble_fn(s, s.v0) + phi * eps0
    res = project(s.params, u, s.v0)
    assert res.epsilon == pytest.approx(eps0, rel=10 * eps0)
    assert res.amplitude_drift <= 1e-4
    assert grad_norm_lp(s.grid, res.phi, s.params.p) == pytest.approx(1.0, abs=1e-10)
    assert np.max(np.abs(res.ortho_residuals)) <= 1e-8 * res.info["ortho_scale"]
    assert len(res.ortho_residuals) == s.params.n + 2
    # radial input: the mode-one conditions vanish identically
    assert np.all(res.ortho_residuals[2:] == 0)


def test_epsilon_recomputed_independently(pair):
    s = setup(*pair)
    u = bubble_fn(s, s.v0) + random_directions(s, 1, seed=4)[0] * 3e-2
    res = project(s.params, u, s.v0)
    diff = u - bubble_fn(s, res.v)
    assert res.epsilon == pytest.approx(grad_norm_lp(s.grid, diff, s.params.p), rel=1e-12)


def test_idempotent(pair):
    s = setup(*pair)
    u = bubble_fn(s, s.v0) + random_directions(s, 1, seed=5)[0] * 1e-2
    first = project(s.params, u, s.v0)
    again = project(s.params, bubble_fn(s, first.v) + first.phi * first.epsilon, first.v)
    assert again.v.scale == pytest.approx(first.v.scale, rel=1e-10)
    assert again.v.amplitude == pytest.approx(first.v.amplitude, rel=1e-10)
    assert again.iterations <= 1


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_scale_equivariance(lam):
    s1, s2 = setup(4, 1.5), setup(4, 1.5, scale=lam)
    k = s1.params.k
    assert np.allclose(s2.grid.nodes * lam, s1.grid.nodes, rtol=1e-14)
    phi = random_directions(s1, 1, seed=6)[0]
    f = profile(s1.params, s1.v0, s1.grid.nodes) + 2e-2 * phi.profile
    r1 = project(s1.params, ModeFn.radial(s1.grid, f), s1.v0)
    r2 = project(s2.params, ModeFn.radial(s2.grid, lam**k * f), s2.v0)
    assert r2.v.scale == pytest.approx(lam * r1.v.scale, rel=1e-8)
    assert r2.epsilon == pytest.approx(r1.epsilon, rel=1e-8)


def test_invariant_under_prenormalization():
    s = setup(3, 2.0)
    u = bubble_fn(s, s.v0) + random_directions(s, 1, seed=7)[0] * 1e-2
    c = 0.37
    a, b = project(s.params, u, s.v0), project(s.params, u * c, s.v0)
    assert b.v.scale == pytest.approx(a.v.scale, rel=1e-10)
    assert b.v.amplitude == pytest.approx(c * a.v.amplitude, rel=1e-10)
    assert b.epsilon == pytest.approx(c * a.epsilon, rel=1e-10)


@settings(max_examples=15)
@given(t=st.floats(-0.5, 0.5), eps=st.floats(1e-4, 5e-2), seed=st.integers(0, 1000))
def test_orthogonality_holds_near_the_manifold(t, eps, seed):
    s = setup(5, 3.0)
    phi = random_directions(s, 1, seed=seed)[0]
    u = bubble_fn(s, Bubble(s.v0.amplitude, np.exp(t))) + phi * eps
    res = project(s.params, u, s.v0)
    assert np.max(np.abs(res.ortho_residuals)) <= 1e-8 * res.info["ortho_scale"]


def test_basin_distance_recorded():
    s = setup(3, 2.0)
    res = project(s.params, bubble_fn(s, Bubble(s.v0.amplitude, 1.3)), s.v0)
    assert res.info["basin_distance"] > 0


def test_errors():
    s = setup(3, 2.0)
    with pytest.raises(ValueError, match="radial"):
        project(s.params, ModeFn.single(s.grid, 1, np.ones(s.grid.N)), s.v0)
    with pytest.raises(ValueError):
        project(Params(3, 2.0), bubble_fn(s, s.v0), s.v0)
    with pytest.raises(ProjectionError) as info:
        project(s.params, bubble_fn(s, s.v0) * -1.0, s.v0)
    assert info.value.residual is not None


def test_amplitude_drift_reference(pair):
    s = setup(*pair)
    res = project(s.params, bubble_fn(s, Bubble(1.1 * s.v0.amplitude)), s.v0)
    assert res.amplitude_drift == pytest.approx(0.1, rel=1e-10)
    assert normalization_constant(s.params) == pytest.approx(s.v0.amplitude, rel=1e-12)
