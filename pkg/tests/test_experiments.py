import math

import numpy as np
import pytest

from sobolev_lab.experiments import (
    EPS_FLOOR,
    chain_constants,
    concentrating_direction,
    default_directions,
    dictionary,
    eigen_direction,
    fit_slope,
    random_directions,
    setup,
    stability_sweep,
)
from sobolev_lab.grid import grad_norm_lp
from sobolev_lab.spectrum import ortho_cosines

SWEEP_PAIRS = [(3, 2.0), (4, 1.5), (5, 3.0)]


def test_fit_slope():
    eps = np.array([1e-3, 1e-2, 1e-1])
    assert fit_slope(eps, 3 * eps**1.7) == pytest.approx(1.7, rel=1e-12)
    assert fit_slope([0.0, 1e-2, 1e-1], [0.0, 2e-2, 2e-1]) == pytest.approx(1.0)
    assert math.isnan(fit_slope([1e-2], [1.0]))
    assert math.isnan(fit_slope([EPS_FLOOR / 10, 1e-2], [1.0, 2.0]))


def test_chain_constants(pair):
    s = setup(*pair)
    k = s.constants
    P = s.params
    g = k.gap * P.S ** (-P.p)
    assert 0 < k.kappa < g / (P.pstar + g)
    if P.p < 2:
        assert k.gamma0 > 0
        # gamma0 leaves at least half of c1 in the chain
        assert k.vec.c1 - (P.pstar - 1 + k.kappa) * k.gamma0 / (P.pstar - 1 + g) >= k.vec.c1 / 2 * (1 - 1e-12)
    else:
        assert k.gamma0 == 0
    assert chain_constants(P, k.gap) == k
    assert set(k.as_dict()) == {"kappa", "gamma0", "gap", "c1", "c2", "c3", "C1", "C2"}


def test_setup_cache_ignores_argument_form():
    assert setup(3, 2) is setup(3.0, 2.0, 1024, 1)


def test_directions_are_unit_and_orthogonal(pair):
    s = setup(*pair)
    dirs = [eigen_direction(s, 2), eigen_direction(s, 3), concentrating_direction(s, 1e-2)]
    dirs += random_directions(s, 3, seed=1)
    for phi in dirs:
        assert grad_norm_lp(s.grid, phi, s.params.p) == pytest.approx(1.0, rel=1e-12)
        assert np.max(np.abs(ortho_cosines(s.params, s.v0, s.grid, phi.profile))) <= 1e-10
        assert phi.profile[-1] == 0


def test_default_directions_depend_on_regime():
    assert set(default_directions(setup(3, 2.0))) == {"eig2", "eig3"}
    dirs = default_directions(setup(5, 3.0))
    assert set(dirs) == {"bump0", "bump0w"}
    assert all(callable(d) for d in dirs.values())


def test_concentrating_direction_narrows_with_eps():
    s = setup(5, 3.0)
    r = s.grid.nodes

    def width(phi):
        f = np.abs(phi.profile)
        return r[np.argmax(f < 0.5 * f[0])]

    assert width(concentrating_direction(s, 1e-3)) < width(concentrating_direction(s, 1e-1))


def test_random_directions_deterministic():
    s = setup(4, 1.5)
    a, b = random_directions(s, 2, seed=3), random_directions(s, 2, seed=3)
    assert all(np.array_equal(x.profile, y.profile) for x, y in zip(a, b))
    assert not np.array_equal(a[0].profile, random_directions(s, 1, seed=4)[0].profile)


def test_dictionary_shape():
    s = setup(3, 2.0)
    d = dictionary(s.grid)
    assert len(d) == 51 and all(phi.is_radial for phi in d)


@pytest.fixture(scope="module")
def sweeps():
    out = {}
    for pair in SWEEP_PAIRS:
        s = setup(*pair)
        for name, d in default_directions(s).items():
            out[pair, name] = stability_sweep(s.params, d)
    return out


def test_sweep_ratio_bounded(sweeps):
    for (pair, name), rows in sweeps.items():
        ratios = np.array([r.ratio for r in rows])
        assert np.all(np.isfinite(ratios)) and np.all(ratios > 0), (pair, name)
        assert ratios.max() / ratios.min() <= 10, (pair, name)
        assert not any(r.error for r in rows)


def test_sweep_slope_for_small_p(sweeps):
    for (pair, name), rows in sweeps.items():
        if pair[1] <= 2:
            assert abs(rows[0].slope - 1) <= 0.15, (pair, name)


def test_sweep_links(sweeps):
    for (pair, name), rows in sweeps.items():
        for r in rows:
            t = r.terms
            assert max(t["link_identity_grad"], t["link_identity_mass"]) <= 1e-8
            assert t["link_testing"] <= 1e-8
            for key in ("link_dual", "link_vector", "link_vector_pointwise", "link_scalar", "link_chain"):
                assert t[key] >= -1e-10, (pair, name, r.epsilon, key)
            assert t["link_coefficient"] > 0
            assert t["min_constant"] > 0
            assert t["gap_margin"] >= -1e-10


def test_sweep_rows_keep_order_and_lhs(sweeps):
    for (pair, _), rows in sweeps.items():
        p = pair[1]
        assert [r.epsilon for r in rows] == [1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
        for r in rows:
            assert r.ratio == pytest.approx(r.lhs / r.rhs, rel=1e-14)
            # lhs is ||Du - Dv||^{max(1, p-1)} and u - v is eps phi up to the projection
            assert r.lhs == pytest.approx(r.epsilon ** max(1, p - 1), rel=0.2)


def test_zero_epsilon_row_is_exact():
    s = setup(3, 2.0)
    row = stability_sweep(s.params, eigen_direction(s, 2), [0.0])[0]
    assert row.exact and row.lhs == 0 and row.rhs < 1e-8
    assert math.isnan(row.ratio) and row.terms == {}


def test_zero_epsilon_with_callable_direction():
    s = setup(5, 3.0)
    rows = stability_sweep(s.params, default_directions(s)["bump0"], [0.0, 1e-2])
    assert rows[0].exact and not rows[1].exact


def test_sweep_rejects_large_eps():
    s = setup(3, 2.0)
    with pytest.raises(ValueError):
        stability_sweep(s.params, eigen_direction(s, 2), [0.2])


def test_sweep_worker_count_does_not_change_results():
    s = setup(4, 1.5)
    d = eigen_direction(s, 2)
    a = stability_sweep(s.params, d, [1e-3, 1e-2, 1e-1], workers=1)
    b = stability_sweep(s.params, d, [1e-3, 1e-2, 1e-1], workers=3)
    assert [r.ratio for r in a] == [r.ratio for r in b]


def test_failed_rows_are_reported_not_raised():
    s = setup(3, 2.0)

    def broken(eps):
        raise ValueError("no direction")

    rows = stability_sweep(s.params, broken, [1e-3, 1e-2])
    assert all(r.error.startswith("ValueError") for r in rows)
    assert all(math.isnan(r.ratio) for r in rows)


@pytest.mark.parametrize("pair", SWEEP_PAIRS)
def test_ratio_scale_invariant(pair):
    eps = [1e-3, 1e-2, 1e-1]
    out = []
    for lam in (1.0, 2.0):
        s = setup(*pair, scale=lam)
        d = list(default_directions(s).values())[0]
        out.append([r.ratio for r in stability_sweep(s.params, d, eps, scale=lam, breakdown=False)])
    assert np.allclose(out[0], out[1], rtol=1e-6, atol=0)


@pytest.mark.parametrize("pair", SWEEP_PAIRS)
def test_ratio_stable_under_refinement(pair):
    eps = [1e-3, 1e-1]
    out = []
    for N in (512, 1024):
        s = setup(*pair, N=N)
        d = list(default_directions(s).values())[0]
        out.append(max(r.ratio for r in stability_sweep(s.params, d, eps, N=N, breakdown=False)))
    assert abs(out[1] - out[0]) / out[1] <= 0.1


def test_fixed_direction_at_p3_is_linear():
    # a smooth fixed direction only sees the linearized operator, so the
    # dual norm grows like eps rather than eps^{p-1}
    s = setup(5, 3.0)
    rows = stability_sweep(s.params, eigen_direction(s, 2), breakdown=False)
    assert rows[0].slope == pytest.approx(1.0, abs=0.1)
