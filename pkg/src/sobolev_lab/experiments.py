"""Stability sweeps and term-by-term breakdowns of the stability argument.

A sweep perturbs the calibrated bubble v0 by eps phi, re-projects onto the
manifold, and compares lhs = ||Du - Dv||_p^{max(1, p-1)} with
rhs = ||P(u)||_{W^{-1,q}}.  The breakdown evaluates every link of the chain
that bounds eps ||P(u)|| ||D phi||_p from below.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .bubble import Bubble, Params, calibrated_bubble, make_params, problem_grid, profile, profile_dr
from .dualnorm import dual_solve, residual, sigma
from .grid import ModeFn, RadialGrid, grad_norm_lp
from .projection import ProjectionError, project
from .spectrum import mode_spectra, orthogonalize, perturbed_gap_check, spectral_gap
from .vectorial import (
    ScalarIneqConstants,
    VecIneqConstants,
    estimate_scalar_constants,
    estimate_vec_constants,
    gradient_margin_from_norms,
    omega_from_norms,
    scalar_branch_one,
)

__all__ = [
    "EPS_FLOOR",
    "DEFAULT_EPSILONS",
    "ChainConstants",
    "Setup",
    "StabilityReport",
    "chain_constants",
    "setup",
    "eigen_direction",
    "concentrating_direction",
    "default_directions",
    "random_directions",
    "smooth_directions",
    "dictionary",
    "stability_sweep",
    "term_breakdown",
    "fit_slope",
]

EPS_FLOOR = 1e-8
DEFAULT_EPSILONS = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)


def _workers() -> int:
    env = int(os.environ.get("SOBOLEV_LAB_THREADS", "0") or 0)
    return env if env > 0 else max(1, min(8, os.cpu_count() or 1))


@dataclass(frozen=True)
class ChainConstants:
    """Empirical constants used along the chain for one (n, p)."""

    kappa: float
    gamma0: float
    gap: float
    vec: VecIneqConstants
    scalar: ScalarIneqConstants

    def as_dict(self) -> dict:
        return {"kappa": self.kappa, "gamma0": self.gamma0, "gap": self.gap,
                "c1": self.vec.c1, "c2": self.vec.c2, "c3": self.vec.c3,
                "C1": self.scalar.C1, "C2": self.scalar.C2}


def chain_constants(params: Params, gap: float) -> ChainConstants:
    """kappa is half the largest admissible value; gamma0 keeps c1/2 of c1."""
    ps = params.pstar
    g = gap * params.S ** (-params.p)
    kappa = 0.5 * g / (ps + g)
    vec = estimate_vec_constants(params.p, kappa)
    scal = estimate_scalar_constants(ps, kappa)
    gamma0 = vec.c1 * (ps - 1 + g) / (2 * (ps - 1 + kappa)) if params.p < 2 else 0.0
    return ChainConstants(kappa, gamma0, gap, vec, scal)


@dataclass
class Setup:
    params: Params
    grid: RadialGrid
    v0: Bubble
    constants: ChainConstants


def setup(n: int, p: float, N: int = 1024, scale: float = 1.0) -> Setup:
    """Calibrated bubble at ``scale``, its grid and the chain constants (cached)."""
    return _setup(int(n), float(p), int(N), float(scale))


@lru_cache(maxsize=16)
def _setup(n: int, p: float, N: int, scale: float) -> Setup:
    params = make_params(n, p)
    grid = problem_grid(params, N, scale)
    v0 = calibrated_bubble(params, scale)
    gap = spectral_gap(params, v0, grid)
    return Setup(params, grid, v0, chain_constants(params, gap))


def _unit(params: Params, grid: RadialGrid, v0: Bubble, f: np.ndarray) -> ModeFn:
    f = orthogonalize(params, v0, grid, f)
    phi = ModeFn.radial(grid, f)
    return phi / grad_norm_lp(grid, phi, params.p)


def eigen_direction(s: Setup, index: int) -> ModeFn:
    """The ``index``-th ell = 0 eigenvector of the linearized operator (0-based),
    made orthogonal and normalized to ||D phi||_p = 1."""
    res = mode_spectra(s.params, s.v0, s.grid, 0, k=index + 1)[0]
    return _unit(s.params, s.grid, s.v0, res.eigenvectors[:, index])


def concentrating_direction(s: Setup, eps: float, *, width: float = 0.3,
                            exponent: float | None = None) -> ModeFn:
    """A Gaussian bump at the origin of radius rho = width * eps^exponent / lam.

    Dv vanishes at the origin, so once the bump is narrow enough the
    perturbation gradient dominates |Dv| on its support and P(u) behaves like
    eps^{p-1} times the p-Laplacian of phi.  The default exponent
    1 / (n/p + 1/(p-1)) makes the linear part of P(u) decay faster than that.
    """
    params = s.params
    if exponent is None:
        exponent = 1.0 / (params.n / params.p + 1.0 / (params.p - 1.0))
    rho = width * eps**exponent / s.v0.scale
    f = np.exp(-((s.grid.nodes / rho) ** 2))
    return _unit(params, s.grid, s.v0, f)


def default_directions(s: Setup) -> dict[str, ModeFn | Callable[[float], ModeFn]]:
    """Two directions per configuration.

    p <= 2: the third and fourth ell = 0 eigenvectors (the first two span the
    tangent directions).  p > 2: two concentrating bump families, because a
    fixed smooth direction only sees the linearized operator and gives
    rhs ~ eps rather than eps^{p-1}.
    """
    if s.params.p <= 2:
        return {"eig2": eigen_direction(s, 2), "eig3": eigen_direction(s, 3)}
    return {"bump0": lambda e: concentrating_direction(s, e),
            "bump0w": lambda e: concentrating_direction(s, e, width=0.1)}


def smooth_directions(params: Params, v0: Bubble, grid: RadialGrid, count: int, seed=0) -> list[ModeFn]:
    """Random smooth orthogonal radial directions with ||D phi||_p = 1.

    Each is a sum of three Gaussians in log r with random centres (within two
    decades of the bubble scale), widths and signed weights.
    """
    rng = np.random.default_rng(seed)
    t = np.log(grid.nodes * v0.scale)
    out = []
    for _ in range(count):
        c = rng.uniform(-np.log(100.0), np.log(100.0), 3)
        w = rng.uniform(0.3, 2.0, 3)
        a = rng.standard_normal(3)
        f = np.sum(a[:, None] * np.exp(-(((t[None, :] - c[:, None]) / w[:, None]) ** 2)), axis=0)
        out.append(_unit(params, grid, v0, f))
    return out


def random_directions(s: Setup, count: int, seed=0) -> list[ModeFn]:
    """:func:`smooth_directions` on the grid of a setup."""
    return smooth_directions(s.params, s.v0, s.grid, count, seed)


def dictionary(grid: RadialGrid, scale: float = 1.0) -> list[ModeFn]:
    """A fixed family of test functions for one-sided dual-norm bounds."""
    t = np.log(grid.nodes * scale)
    out = []
    for c in np.linspace(-4.0, 4.0, 17):
        for w in (0.5, 1.0, 2.0):
            out.append(ModeFn.radial(grid, np.exp(-(((t - c) / w) ** 2))))
    return out


@dataclass
class StabilityReport:
    n: int
    p: float
    epsilon: float
    lhs: float
    rhs: float
    ratio: float
    slope: float = float("nan")
    terms: dict = field(default_factory=dict)
    exact: bool = False
    error: str = ""
    info: dict = field(default_factory=dict)


def fit_slope(eps, values) -> float:
    """Least-squares slope of log(values) against log(eps)."""
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    ok = (eps >= EPS_FLOOR) & np.isfinite(values) & (values > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps[ok]), np.log(values[ok]), 1)[0])


def _row(s: Setup, direction, eps: float, breakdown: bool) -> StabilityReport:
    params, grid, v0 = s.params, s.grid, s.v0
    n, p = params.n, params.p
    try:
        u = ModeFn.radial(grid, profile(params, v0, grid.nodes))
        if eps > 0:
            phi = direction(eps) if callable(direction) else direction
            u = u + eps * phi
        proj = project(params, u, v0)
        lhs = proj.epsilon ** max(1.0, p - 1.0)
        res = residual(params, u, grid, base=proj.v, defect=True)
        sol = dual_solve(params, res, grid)
        rhs = sol.norm
        exact = proj.exact or proj.epsilon < EPS_FLOOR
        ratio = lhs / rhs if rhs > 0 and not exact else float("nan")
        terms = {}
        if breakdown and not proj.exact:
            terms = term_breakdown(params, u, proj.v, proj.phi, proj.epsilon, s, dual=rhs)
        info = {"projected_scale": proj.v.scale, "amplitude_drift": proj.amplitude_drift,
                "dual_optimality": sol.optimality, "ortho_max": float(np.max(np.abs(proj.ortho_residuals)))}
        return StabilityReport(n, p, eps, lhs, rhs, ratio, terms=terms, exact=exact, info=info)
    except (ProjectionError, ValueError, RuntimeError) as exc:
        nan = float("nan")
        return StabilityReport(n, p, eps, nan, nan, nan, error=f"{type(exc).__name__}: {exc}")


def stability_sweep(params: Params, direction, epsilons=DEFAULT_EPSILONS, *, N: int = 1024,
                    scale: float = 1.0, breakdown: bool = True,
                    workers: int | None = None) -> list[StabilityReport]:
    """One report per eps, in the order given; the slope is shared by all rows."""
    s = setup(params.n, params.p, N, scale)
    epsilons = [float(e) for e in epsilons]
    if any(e < 0 or e > 0.1 for e in epsilons):
        raise ValueError("epsilons must lie in [0, 0.1]")
    workers = workers or _workers()
    if workers > 1 and len(epsilons) > 1:
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(lambda e: _row(s, direction, e, breakdown), epsilons))
    else:
        rows = [_row(s, direction, e, breakdown) for e in epsilons]
    good = [r for r in rows if not r.exact and not r.error]
    slope = fit_slope([r.epsilon for r in good], [r.rhs for r in good])
    for r in rows:
        r.slope = slope
    return rows


def term_breakdown(params: Params, u: ModeFn, v: Bubble, phi: ModeFn, eps: float, s: Setup, *,
                   dual: float | None = None) -> dict:
    """Every quantity and link margin of the chain, evaluated on the grid.

    Link margins are signed so that >= 0 means the link holds.  Identity links
    are reported as relative sizes that should vanish.
    """
    grid, k = s.grid, s.constants
    p, ps = params.p, params.pstar
    r, rm = grid.nodes, grid.mid
    wq, wm = grid.quad_weights, grid.mid_weights
    f = phi.profile
    uu = u.profile
    vv = profile(params, v, r)
    dv = profile_dr(params, v, rm)
    dphi = grid.mid_derivative(f)
    du = dv + eps * dphi
    ax, ay = np.abs(dv), np.abs(eps * dphi)
    axy = np.abs(du)
    branch = params.branch
    gnorm = float(wm @ np.abs(dphi) ** p) ** (1 / p)

    res = residual(params, u, grid, base=v, defect=True)
    if dual is None:
        dual = dual_solve(params, res, grid).norm
    grad_u = eps * float(wm @ (sigma(du, p) * dphi))
    mass_u = eps * float(wq @ (sigma(uu, ps) * f))
    tested = res.as_functional(eps * f)

    grad_v = float(wm @ (sigma(dv, p) * dphi))
    mass_v = float(wq @ (vv ** (ps - 1) * f))
    scale_v = float(wm @ ax**p) ** ((p - 1) / p) * gnorm

    if branch in (1, 2):
        w_a, w_b = omega_from_norms(1, p, ax, axy), omega_from_norms(2, p, ax, axy)
    else:
        w_a, w_b = omega_from_norms(3, p, ax, axy, k.vec.c3), omega_from_norms(4, p, ax, axy)
    quad = float(wm @ (w_a * dphi**2))
    quad_b = float(wm @ (w_b * ((axy - ax) / eps) ** 2))
    with np.errstate(divide="ignore"):
        mins = np.minimum(ay**p, np.where(ax > 0, ax ** (p - 2), np.inf) * ay**2)
    min_int = float(wm @ mins)
    plaw = eps**p * gnorm**p
    if branch == 1:
        mass_term = float(wq @ ((vv + k.scalar.C1 * np.abs(eps * f)) ** ps / (vv**2 + (eps * f) ** 2) * f**2))
    else:
        mass_term = float(wq @ (vv ** (ps - 2) * f**2))
    high = float(wq @ np.abs(f) ** ps)

    extra = k.vec.c1 * min_int if p < 2 else k.vec.c2 * plaw
    vec_rhs = eps * grad_v + (1 - k.kappa) * eps**2 * (quad + (p - 2) * quad_b) + extra
    C2 = 0.0 if scalar_branch_one(ps) else k.scalar.C2
    scal_rhs = eps * mass_v + eps**2 * (ps - 1 + k.kappa) * mass_term + C2 * eps**ps * high
    pointwise = gradient_margin_from_norms(p, k.vec, ax, ay, dv * eps * dphi)

    g = k.gap * params.S ** (-p)
    coef = 1 - k.kappa - (ps - 1 + k.kappa) / (ps - 1 + g)
    if p < 2:
        chain = (eps**2 * coef * (quad + (p - 2) * quad_b)
                 + (k.vec.c1 - k.gamma0 * (ps - 1 + k.kappa) / (ps - 1 + g)) * min_int
                 - C2 * eps**ps * high)
    else:
        chain = eps**2 * coef * (quad + (p - 2) * quad_b) + k.vec.c2 * plaw - C2 * eps**ps * high

    gap_terms = {}
    try:
        gc = perturbed_gap_check(params, v, grid, phi * eps, k.gamma0, k.scalar.C1, gap=k.gap,
                                 delta_bar=max(1e-2, 1.01 * eps * gnorm), c3=k.vec.c3, ortho_tol=1e-6)
        gap_terms = {"gap_margin": gc.margin, "gap_lhs": gc.lhs, "gap_rhs": gc.rhs}
    except ValueError as exc:
        gap_terms = {"gap_error": str(exc)}

    out = {
        "pairing": tested,
        "dual_bound": eps * dual * gnorm,
        "grad_u": grad_u,
        "mass_u": mass_u,
        "grad_v": grad_v,
        "mass_v": mass_v,
        "weighted_quadratic": quad,
        "weighted_difference": quad_b,
        "min_integral": min_int,
        "p_power": plaw,
        "mass_term": mass_term,
        "high_order": high,
        "chain_lower": chain,
        "min_constant": min_int / (eps**2 * gnorm**2),
        # the pairing has the discrete P(v) removed, so the v terms are removed here too
        "link_testing": abs(tested - (grad_u - mass_u - eps * (grad_v - mass_v)))
        / max(abs(grad_u), abs(mass_u), 1e-300),
        "link_dual": eps * dual * gnorm - tested,
        "link_identity_grad": abs(grad_v) / scale_v,
        "link_identity_mass": abs(mass_v) / scale_v,
        "link_vector": grad_u - vec_rhs,
        "link_vector_pointwise": float(np.min(pointwise)),
        "link_scalar": scal_rhs - mass_u,
        "link_coefficient": coef,
        "link_chain": eps * dual * gnorm - chain,
    }
    out.update(gap_terms)
    return out
