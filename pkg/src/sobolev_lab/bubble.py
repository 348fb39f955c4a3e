"""Talenti bubbles, their calibration, tangent space and the Sobolev constant.

A bubble is ``v = a U[z, lam]`` with

    U[z, lam](x) = lam^k (1 + (lam |x - z|)^q)^(-k),   k = (n - p)/p,  q = p/(p - 1).

All radial derivatives below are closed-form; writing ``rho = lam r`` and
``w = 1 + rho^q`` keeps the expressions short.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .grid import ModeFn, RadialGrid, integrate, make_grid

__all__ = [
    "Params",
    "Bubble",
    "TangentDirection",
    "CalibrationError",
    "QuadratureError",
    "make_params",
    "problem_grid",
    "bubble_eval",
    "profile",
    "profile_dr",
    "profile_dr2",
    "profile_dscale",
    "profile_dscale_dr",
    "profile_dscale2",
    "closed_form_coefficient",
    "normalization_constant",
    "sobolev_constant",
    "calibrated_bubble",
    "tangent_basis",
    "el_residual",
    "el_interior",
    "sample",
]


class CalibrationError(RuntimeError):
    """The amplitude root-find could not bracket a solution."""


class QuadratureError(RuntimeError):
    """Two quadrature levels disagree: the grid is too coarse."""


@dataclass(frozen=True)
class Params:
    """Problem constants.  ``S`` is ``None`` until :func:`sobolev_constant` fills it."""

    n: int
    p: float
    S: float | None = None
    q: float = field(init=False)
    pstar: float = field(init=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if not 1.0 < self.p < self.n:
            raise ValueError(f"need 1 < p < n, got p={self.p}, n={self.n}")
        if self.S is not None and not self.S > 0:
            raise ValueError("Sobolev constant must be positive")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "q", self.p / (self.p - 1.0))
        object.__setattr__(self, "pstar", self.n * self.p / (self.n - self.p))

    @property
    def k(self) -> float:
        """Decay exponent (n - p)/p of U in (1 + rho^q)."""
        return (self.n - self.p) / self.p

    @property
    def branch(self) -> int:
        """1 for p <= 2n/(n+2), 2 for 2n/(n+2) < p < 2, 3 for p >= 2."""
        if self.p <= 2.0 * self.n / (self.n + 2.0):
            return 1
        return 2 if self.p < 2.0 else 3

    @property
    def exponent(self) -> float:
        """Stability exponent max(1, p - 1)."""
        return max(1.0, self.p - 1.0)


@dataclass(frozen=True)
class Bubble:
    """``amplitude * U[center, scale]``."""

    amplitude: float
    scale: float = 1.0
    center: tuple = ()

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def center_array(self, n: int) -> np.ndarray:
        if not self.center:
            return np.zeros(n)
        c = np.asarray(self.center, dtype=float)
        if c.shape != (n,):
            raise ValueError(f"center has dimension {c.size}, expected {n}")
        return c


# --- closed-form radial profiles -----------------------------------------------

def _parts(params: Params, lam: float, r):
    r = np.asarray(r, dtype=float)
    rho = lam * r
    rq = rho**params.q
    return rho, rq, 1.0 + rq


def profile(params: Params, b: Bubble, r) -> np.ndarray:
    """v(r) for the bubble centred at the origin."""
    k, lam = params.k, b.scale
    _, _, w = _parts(params, lam, r)
    return b.amplitude * lam**k * w ** (-k)


def profile_dr(params: Params, b: Bubble, r) -> np.ndarray:
    """dv/dr."""
    k, q, lam = params.k, params.q, b.scale
    rho, _, w = _parts(params, lam, r)
    return -b.amplitude * k * q * lam ** (k + 1) * rho ** (q - 1) * w ** (-k - 1)


def profile_dr2(params: Params, b: Bubble, r) -> np.ndarray:
    """d^2v/dr^2 (infinite at r = 0 when p > 2)."""
    k, q, lam = params.k, params.q, b.scale
    rho, rq, w = _parts(params, lam, r)
    return (-b.amplitude * k * q * lam ** (k + 2) * rho ** (q - 2) * w ** (-k - 2)
            * ((q - 1) * w - (k + 1) * q * rq))


def _h(params, rho, rq, w):
    k, q = params.k, params.q
    return k * w ** (-k - 1) * (1.0 - (q - 1) * rq)


def _dh(params, rho, rq, w):
    k, q = params.k, params.q
    return -k * q * rho ** (q - 1) * w ** (-k - 2) * ((k + 1) * (1.0 - (q - 1) * rq) + (q - 1) * w)


def profile_dscale(params: Params, b: Bubble, r) -> np.ndarray:
    """dv/dlam at fixed amplitude."""
    lam = b.scale
    rho, rq, w = _parts(params, lam, r)
    return b.amplitude * lam ** (params.k - 1) * _h(params, rho, rq, w)


def profile_dscale_dr(params: Params, b: Bubble, r) -> np.ndarray:
    """d/dr of dv/dlam."""
    lam = b.scale
    rho, rq, w = _parts(params, lam, r)
    return b.amplitude * lam**params.k * _dh(params, rho, rq, w)


def profile_dscale2(params: Params, b: Bubble, r) -> np.ndarray:
    """d^2v/dlam^2 at fixed amplitude."""
    lam, k = b.scale, params.k
    rho, rq, w = _parts(params, lam, r)
    return b.amplitude * lam ** (k - 2) * ((k - 1) * _h(params, rho, rq, w) + rho * _dh(params, rho, rq, w))


def bubble_eval(params: Params, b: Bubble, x) -> np.ndarray:
    """v(x) at points ``x`` of shape (..., n)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.n:
        raise ValueError(f"points must have last dimension {params.n}")
    r = np.linalg.norm(x - b.center_array(params.n), axis=-1)
    return profile(params, b, r)


# --- calibration ---------------------------------------------------------------------

def make_params(n: int, p: float) -> Params:
    """Params with the Sobolev constant filled in."""
    base = Params(n, p)
    return replace(base, S=sobolev_constant(base))


def closed_form_coefficient(params: Params) -> float:
    """Candidate c in -Delta_p U = c U^(p*-1): n ((n-p)/(p-1))^(p-1)."""
    n, p = params.n, params.p
    return n * ((n - p) / (p - 1.0)) ** (p - 1.0)


def _default_grid(n: int, scale: float = 1.0, N: int = 1024) -> RadialGrid:
    return make_grid(n, N, 1.0 / scale)


STIFFNESS_RANGE = 1e6


def problem_grid(params: Params, N: int = 1024, scale: float = 1.0) -> RadialGrid:
    """Grid at map scale 1/scale with an inner cut-off suited to |v'|^{p-2}.

    In the log variable the radial stiffness weight |v'|^{p-2} r^{n-2} behaves
    like r^e near the origin, e = (p-2)/(p-1) + n - 2.  When e < 0 the first
    node is moved out until that weight stays below ``STIFFNESS_RANGE``;
    otherwise the weight explodes and the matrices lose all accuracy.
    """
    n, p = params.n, params.p
    e = (p - 2) / (p - 1) + n - 2
    t_min = -37.0 / n - 1.0
    if e < 0:
        t_min = max(t_min, np.log(STIFFNESS_RANGE) / e)
    return make_grid(n, N, 1.0 / scale, t_min=t_min)


def _p_laplacian(params: Params, b: Bubble, r: np.ndarray) -> np.ndarray:
    """-Delta_p of the radial profile from its closed-form derivatives."""
    d1 = profile_dr(params, b, r)
    d2 = profile_dr2(params, b, r)
    p = params.p
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.abs(d1) ** (p - 2) * ((p - 1) * d2 + (params.n - 1) * d1 / r)


def normalization_constant(params: Params, grid: RadialGrid | None = None, *, scale: float = 1.0) -> float:
    """Amplitude a with -Delta_p(aU) = (aU)^(p*-1).

    The coefficient c in -Delta_p U = c U^(p*-1) is read off pointwise on the
    grid (weighted least squares over the well-conditioned nodes), then
    a^(p*-p) = c is solved with a bracketing root-find.
    """
    if grid is None:
        return _cached_amplitude(params.n, params.p, float(scale))
    u = Bubble(1.0, scale)
    r = grid.nodes
    mask = el_interior(params, u, grid)
    lhs = _p_laplacian(params, u, r)[mask]
    rhs = profile(params, u, r[mask]) ** (params.pstar - 1)
    w = grid.quad_weights[mask]
    c = float(np.sum(w * lhs * rhs) / np.sum(w * rhs * rhs))
    gap = params.pstar - params.p

    def f(a):
        return a**gap - c

    if not (c > 0 and np.isfinite(c)):
        raise CalibrationError(f"could not bracket the amplitude (c={c})")
    lo, hi = 1e-8, 1.0
    for _ in range(200):
        if f(hi) > 0:
            break
        hi *= 2.0
    else:
        raise CalibrationError(f"could not bracket the amplitude (c={c})")
    if f(lo) >= 0:
        raise CalibrationError(f"could not bracket the amplitude (c={c})")
    return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


@lru_cache(maxsize=None)
def _cached_amplitude(n: int, p: float, scale: float) -> float:
    params = Params(n, p)
    return normalization_constant(params, _default_grid(n, scale), scale=scale)


def calibrated_bubble(params: Params, scale: float = 1.0, center=()) -> Bubble:
    return Bubble(normalization_constant(params), scale, center)


def sobolev_constant(params: Params, grid: RadialGrid | None = None, *, scale: float = 1.0,
                     rtol: float = 1e-10) -> float:
    """S = ||Dv||_p / ||v||_p* for the calibrated bubble.

    The quotient is also evaluated on the every-other-node subgrid; a
    disagreement above ``rtol`` raises :class:`QuadratureError`.
    """
    if grid is None:
        return _cached_sobolev(params.n, params.p, float(scale))
    b = Bubble(normalization_constant(params, grid, scale=scale), scale)
    r = grid.nodes
    gp = np.abs(profile_dr(params, b, r)) ** params.p
    vp = profile(params, b, r) ** params.pstar
    S_fine = integrate(grid, gp) ** (1 / params.p) / integrate(grid, vp) ** (1 / params.pstar)
    w2 = np.zeros_like(grid.quad_weights)
    w2[::2] = 2.0 * grid.quad_weights[::2]
    S_coarse = (w2 @ gp) ** (1 / params.p) / (w2 @ vp) ** (1 / params.pstar)
    if abs(S_fine - S_coarse) > rtol * S_fine:
        raise QuadratureError(f"Sobolev quotient not converged: {S_fine} vs {S_coarse}")
    return float(S_fine)


@lru_cache(maxsize=None)
def _cached_sobolev(n: int, p: float, scale: float) -> float:
    return sobolev_constant(Params(n, p), _default_grid(n, scale), scale=scale)


# --- tangent space and Euler-Lagrange residual -----------------------------------------

@dataclass(frozen=True)
class TangentDirection:
    """One generator of T_v M as a radial profile times a harmonic.

    ``ell = 0`` entries are radial; ``ell = 1`` entries multiply the harmonic
    ``x_axis / |x|``.
    """

    name: str
    ell: int
    axis: int
    profile: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]

    def on(self, grid: RadialGrid) -> ModeFn:
        return ModeFn.single(grid, self.ell, self.profile(grid.nodes), self.axis)


def tangent_basis(params: Params, b: Bubble) -> list[TangentDirection]:
    """{v, d_lam v, d_{z_1} v, ..., d_{z_n} v}."""
    basis = [
        TangentDirection("v", 0, 0, lambda r: profile(params, b, r), lambda r: profile_dr(params, b, r)),
        TangentDirection("d_scale", 0, 0, lambda r: profile_dscale(params, b, r),
                         lambda r: profile_dscale_dr(params, b, r)),
    ]
    # d/dz_i v(|x - z|) = -v'(r) x_i / r
    for i in range(params.n):
        basis.append(TangentDirection(f"d_z{i + 1}", 1, i, lambda r: -profile_dr(params, b, r),
                                      lambda r: -profile_dr2(params, b, r)))
    return basis


def el_residual(params: Params, b: Bubble, grid: RadialGrid, *, relative: bool = False) -> np.ndarray:
    """-div(|Dv|^(p-2) Dv) - v^(p*-1) at the nodes, from v' and v''.

    With ``relative`` the residual is divided by v^(p*-1).
    """
    r = grid.nodes
    v = profile(params, b, r)
    res = _p_laplacian(params, b, r) - v ** (params.pstar - 1)
    if relative:
        res = res / v ** (params.pstar - 1)
    return res


def el_interior(params: Params, b: Bubble, grid: RadialGrid, cap: float = 1e6) -> np.ndarray:
    """Mask of nodes where the relative residual is well conditioned.

    For large r the two terms of the radial p-Laplacian cancel to leading
    order and rounding grows like (lam r)^q relative to v^(p*-1).
    """
    return (b.scale * grid.nodes) ** params.q <= cap


def sample(params: Params, b: Bubble, grid: RadialGrid) -> ModeFn:
    """The bubble as a radial :class:`ModeFn` (expansion about its centre)."""
    return ModeFn.radial(grid, profile(params, b, grid.nodes), center=b.center_array(params.n))
