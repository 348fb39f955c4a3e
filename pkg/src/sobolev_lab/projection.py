"""Projection of u onto the bubble manifold under weighted orthogonality.

For radial u the unknowns are the amplitude c and scale lam of
v = c U[z, lam] (z is u's expansion centre).  Every condition
int v^{p*-2} xi (u - v) = 0 scales out the factor c^{p*-1}, so with
U = U[z, lam]:

    int U^{p*-1} (u - c U) = 0           ->  c = int U^{p*-1} u / int U^{p*}
    int U^{p*-2} d_lam U (u - c U) = 0   ->  one equation g(lam) = 0,

solved by Newton in log(lam) with the closed-form derivative.  The mode-1
conditions vanish identically for radial u.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bubble import (
    Bubble,
    Params,
    normalization_constant,
    profile,
    profile_dr,
    profile_dscale,
    profile_dscale2,
)
from .grid import ModeFn, grad_norm_lp, weighted_inner

__all__ = ["ProjectionResult", "ProjectionError", "project", "EXACT_FLOOR", "BASIN"]

# relative size of u - v below which u is reported as lying on the manifold
EXACT_FLOOR = 1e-13
BASIN = 0.1


class ProjectionError(RuntimeError):
    """Newton left the basin or stalled; carries the last iterate."""

    def __init__(self, msg: str, last: Bubble | None = None, residual: float | None = None):
        super().__init__(msg)
        self.last = last
        self.residual = residual


@dataclass
class ProjectionResult:
    v: Bubble
    epsilon: float
    phi: ModeFn
    ortho_residuals: np.ndarray
    amplitude_drift: float
    iterations: int = 0
    exact: bool = False
    info: dict = field(default_factory=dict)


def _moments(params: Params, grid, f: np.ndarray, lam: float, need_jac: bool):
    ps = params.pstar
    U1 = Bubble(1.0, lam)
    r = grid.nodes
    w = grid.quad_weights
    U = profile(params, U1, r)
    Ul = profile_dscale(params, U1, r)
    UpU = U ** (ps - 2)
    A = float(w @ (U ** (ps - 1) * f))
    B = float(w @ U**ps)
    c = A / B
    X = float(w @ (UpU * Ul * f))
    Y = float(w @ (U ** (ps - 1) * Ul))
    g = X - c * Y
    if not need_jac:
        return c, g, None
    Ull = profile_dscale2(params, U1, r)
    ratio = Ul / U
    dX = float(w @ (((ps - 2) * U ** (ps - 2) * ratio * Ul + UpU * Ull) * f))
    dY = float(w @ ((ps - 1) * U ** (ps - 1) * ratio * Ul + U ** (ps - 1) * Ull))
    dA = (ps - 1) * X
    dB = ps * Y
    dc = (dA * B - A * dB) / B**2
    dg = dX - dc * Y - c * dY
    return c, g, dg


def project(params: Params, u: ModeFn, init: Bubble, *, tol: float = 1e-14,
            maxiter: int = 60) -> ProjectionResult:
    """Bubble v with u - v orthogonal to T_v M in L^2(v^{p*-2}), and u = v + eps phi.

    ``info["basin_distance"]`` is ||Du - D init||_p / S^{n/p}; results are
    meant for values up to ``BASIN``.
    """
    if not u.is_radial:
        raise ValueError("only radial u is supported")
    grid = u.grid
    if params.S is None:
        raise ValueError("params.S is not set")
    f = u.profile
    p, ps = params.p, params.pstar
    r = grid.nodes
    center = np.asarray(u.center, dtype=float)

    # distance from init, relative to S^{n/p}; recorded rather than enforced
    # because Newton in log(lam) converges well beyond it
    d0 = grad_norm_lp(grid, u - ModeFn.radial(grid, profile(params, Bubble(init.amplitude, init.scale), r)), p)
    basin_distance = d0 / params.S ** (params.n / p)

    # weighted norms for a scale-free stopping test
    def rel(g, lam):
        U1 = Bubble(1.0, lam)
        U = profile(params, U1, r)
        Ul = profile_dscale(params, U1, r)
        a = np.sqrt(grid.quad_weights @ (U ** (ps - 2) * Ul**2))
        b = np.sqrt(grid.quad_weights @ (U ** (ps - 2) * f**2))
        return abs(g) / (a * b) if a * b > 0 else abs(g)

    s = np.log(init.scale)
    c, g, dg = _moments(params, grid, f, np.exp(s), True)
    res = rel(g, np.exp(s))
    it = 0
    history = [res]
    while res > tol and it < maxiter:
        it += 1
        lam = np.exp(s)
        if dg == 0 or not np.isfinite(dg):
            raise ProjectionError("singular Jacobian", Bubble(abs(c) or 1.0, lam, tuple(center)), res)
        step = -g / (lam * dg)
        t = 1.0
        while True:
            c_new, g_new, dg_new = _moments(params, grid, f, np.exp(s + t * step), True)
            res_new = rel(g_new, np.exp(s + t * step))
            if res_new < res or t < 1e-6:
                break
            t *= 0.5
        if res_new >= res and abs(t * step) < 1e-15:
            break
        s, c, g, dg, res = s + t * step, c_new, g_new, dg_new, res_new
        history.append(res)
        if abs(t * step) < 1e-15:
            break
    if res > max(tol, 1e-10):
        raise ProjectionError(f"Newton stalled at relative residual {res:.2e} after {it} steps",
                              Bubble(abs(c) or 1.0, float(np.exp(s)), tuple(center)), res)
    if not c > 0:
        raise ProjectionError(f"nonpositive amplitude {c}", None, res)

    lam = float(np.exp(s))
    v = Bubble(float(c), lam, tuple(center))
    vv = profile(params, v, r)
    diff = ModeFn(grid, {(0, 0): f - vv}, center.copy())
    eps = grad_norm_lp(grid, diff, p)
    scale_u = grad_norm_lp(grid, u, p)
    exact = eps <= EXACT_FLOOR * scale_u
    if exact:
        phi = ModeFn(grid, {(0, 0): np.zeros(grid.N)}, center.copy())
        eps = 0.0
    else:
        phi = diff / eps

    weight = vv ** (ps - 2)
    tangent = [ModeFn.radial(grid, vv), ModeFn.radial(grid, profile_dscale(params, v, r))]
    tangent += [ModeFn.single(grid, 1, -profile_dr(params, v, r), i) for i in range(params.n)]
    ortho = np.array([weighted_inner(grid, weight, xi, diff) for xi in tangent])
    a = normalization_constant(params)
    return ProjectionResult(v, float(eps), phi, ortho, abs(c - a) / a, it, bool(exact),
                            {"history": history, "basin_distance": basin_distance, "ortho_scale": float(grid.quad_weights @ (vv ** (ps - 1) * f))})
