"""Per-mode spectra of the linearized p-Laplacian around a bubble.

For radial v and phi = f(r) Y_ell, the second variation splits as

    int (p - 1)|v'|^{p-2} f'^2 + |v'|^{p-2} ell(ell + n - 2) f^2 / r^2,

with mass int v^{p*-2} f^2 (both against the R^n measure).  The radial term
is assembled at cell midpoints with the staggered derivative, the angular
term and the mass at the nodes.  The outer node carries a Dirichlet
condition, so matrices act on the first N - 1 node values.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bubble import Bubble, Params, profile, profile_dr, profile_dscale
from .grid import ModeFn, RadialGrid, grad_norm_lp
from .vectorial import omega_from_norms

__all__ = [
    "ModeOperator",
    "SpectrumResult",
    "SpectrumError",
    "GapCheck",
    "assemble_mode_operator",
    "solve_eigs",
    "mode_spectra",
    "spectral_gap",
    "orthogonalize",
    "ortho_residuals",
    "ortho_cosines",
    "perturbed_gap_check",
    "quadratic_form",
]


class SpectrumError(RuntimeError):
    """Eigensolver failure or a spectral statement that should not fail."""


def _free(grid: RadialGrid, f: np.ndarray) -> np.ndarray:
    return np.asarray(f, dtype=float)[: grid.N - 1]


def _pad(grid: RadialGrid, x: np.ndarray) -> np.ndarray:
    out = np.zeros((grid.N,) + x.shape[1:])
    out[: grid.N - 1] = x
    return out


@dataclass(frozen=True, eq=False)
class ModeOperator:
    """Stiffness and mass of the linearized operator on mode ``ell``."""

    ell: int
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    grid: RadialGrid

    def form(self, f: np.ndarray, g: np.ndarray | None = None) -> float:
        """Bilinear form on node profiles (the outer value is ignored)."""
        f = _free(self.grid, f)
        g = f if g is None else _free(self.grid, g)
        return float(f @ (self.stiffness @ g))

    def mass_form(self, f: np.ndarray, g: np.ndarray | None = None) -> float:
        f = _free(self.grid, f)
        g = f if g is None else _free(self.grid, g)
        return float(f @ (self.mass @ g))

    def rayleigh(self, f: np.ndarray) -> float:
        return self.form(f) / self.mass_form(f)


@dataclass
class SpectrumResult:
    """Lowest generalized eigenpairs of one mode.

    ``eigenvectors`` has one node profile per column (outer value 0) and is
    orthonormal in the mass inner product.
    """

    ell: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    gap_lambda: float = float("nan")
    info: dict = field(default_factory=dict)


def _mid_coefficients(params: Params, b: Bubble, grid: RadialGrid):
    dv = np.abs(profile_dr(params, b, grid.mid))
    return dv ** (params.p - 2)


def assemble_mode_operator(params: Params, b: Bubble, grid: RadialGrid, ell: int) -> ModeOperator:
    """Stiffness/mass pair of the linearized operator at ``b`` on mode ``ell``.

    The harmonic is scaled so that its square integrates to the sphere area,
    as for ell = 0; for a :class:`ModeFn` entry multiply the forms by
    ``harmonic_norm(n, ell) / area``.
    """
    if ell < 0 or int(ell) != ell:
        raise ValueError(f"mode degree must be a nonnegative integer, got {ell}")
    p, n = params.p, params.n
    G = grid.G[:, : grid.N - 1]
    a_mid = (p - 1) * _mid_coefficients(params, b, grid) * grid.mid_weights / grid.mid**2
    K = G.T @ sp.diags(a_mid) @ G
    r = grid.nodes[: grid.N - 1]
    w = grid.quad_weights[: grid.N - 1]
    if ell:
        dv = np.abs(profile_dr(params, b, r))
        with np.errstate(divide="ignore", invalid="ignore"):
            K = K + sp.diags(w * dv ** (p - 2) * ell * (ell + n - 2) / r**2)
    m = w * profile(params, b, r) ** (params.pstar - 2)
    if not (np.all(np.isfinite(K.data)) and np.all(np.isfinite(m))):
        raise SpectrumError(f"non-finite coefficients in the mode-{ell} operator")
    K = 0.5 * (K + K.T)
    return ModeOperator(int(ell), K.tocsr(), sp.diags(m).tocsr(), grid)


def quadratic_form(params: Params, b: Bubble, grid: RadialGrid, phi: ModeFn) -> float:
    """int |Dv|^{p-2}|Dphi|^2 + (p-2)|Dv|^{p-4}|Dv . Dphi|^2 by direct quadrature.

    Independent of the matrices: uses the zonal-harmonic polar rule for
    modes ell >= 1, evaluated at the midpoints.
    """
    from .grid import _polar_rule, _zonal_harmonic_ds, zonal_harmonic, sphere_area

    n, p = grid.n, params.p
    dv = profile_dr(params, b, grid.mid)
    total = 0.0
    for (ell, _), f in phi.terms.items():
        df = grid.mid_derivative(f)
        fm = grid.I @ f
        wgt = np.abs(dv) ** (p - 2) * grid.mid_weights / grid.area
        if ell == 0:
            total += grid.area * float(np.sum(wgt * (p - 1) * df**2))
            continue
        s, ws = _polar_rule(n)
        Y = zonal_harmonic(n, ell, s)
        dY = _zonal_harmonic_ds(n, ell, s)
        # Dphi = f' Y e_r + (f / r) (grad_S Y); |grad_S Y|^2 = (1 - s^2) Y'(s)^2
        rad = (df[:, None] * Y[None, :]) ** 2
        ang = (fm[:, None] / grid.mid[:, None]) ** 2 * ((1 - s**2) * dY**2)[None, :]
        dens = (1.0 * (rad + ang) + (p - 2) * rad) @ ws
        total += sphere_area(n - 1) * float(np.sum(wgt * dens))
    return total


def solve_eigs(op: ModeOperator, k: int, *, sigma: float = 0.0, tol: float = 0.0) -> SpectrumResult:
    """``k`` smallest eigenpairs of K x = mu M x (shift-invert Lanczos).

    Dense solvers are not offered: the coefficients span tens of decades
    across the grid, and a dense solve loses the small eigenvalues entirely.
    """
    size = op.stiffness.shape[0]
    if not 1 <= k < size - 1:
        raise ValueError(f"need 1 <= k < {size - 1}, got {k}")
    # fixed start vector: ARPACK's own random start depends on call history
    try:
        vals, vecs = spla.eigsh(op.stiffness.tocsc(), k=k, M=op.mass.tocsc(), sigma=sigma,
                                which="LM", tol=tol, maxiter=20 * size, v0=np.ones(size))
    except spla.ArpackNoConvergence as exc:
        raise SpectrumError(f"mode {op.ell}: {len(exc.eigenvalues)} of {k} eigenpairs "
                            f"converged") from exc
    info = {"method": "shift-invert", "sigma": sigma}
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    # fix signs: positive near the origin for a reproducible orientation
    for j in range(vecs.shape[1]):
        piv = np.argmax(np.abs(vecs[:, j]) > 1e-3 * np.max(np.abs(vecs[:, j])))
        if vecs[piv, j] < 0:
            vecs[:, j] *= -1
    mnorm = np.sqrt(np.einsum("ij,ij->j", vecs, op.mass @ vecs))
    vecs = vecs / mnorm
    rq = np.einsum("ij,ij->j", vecs, op.stiffness @ vecs)
    info["rayleigh_rel_err"] = float(np.max(np.abs(rq - vals) / np.abs(vals)))
    return SpectrumResult(op.ell, vals, _pad(op.grid, vecs), info=info)


def _n_tangent(ell: int) -> int:
    """Number of eigenpairs at mode ``ell`` that belong to T_v M (plus the v mode)."""
    return {0: 2, 1: 1}.get(ell, 0)


def _workers() -> int:
    w = int(os.environ.get("SOBOLEV_LAB_THREADS", "0") or 0)
    return w if w > 0 else (os.cpu_count() or 1)


def mode_spectra(params: Params, b: Bubble, grid: RadialGrid, ell_max: int, k: int = 4) -> list[SpectrumResult]:
    """Eigen-solves for ell = 0..ell_max, each with its own gap estimate."""

    def one(ell):
        res = solve_eigs(assemble_mode_operator(params, b, grid, ell), k)
        mu_next = res.eigenvalues[_n_tangent(ell)]
        res.gap_lambda = 0.5 * params.S**params.p * (mu_next - (params.pstar - 1))
        return res

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        return list(pool.map(one, range(ell_max + 1)))


def spectral_gap(params: Params, b: Bubble, grid: RadialGrid, ell_max: int = 2) -> float:
    """lambda_hat = S^p / 2 (mu_next - (p* - 1)), minimized over ell <= ell_max.

    ``mu_next`` is the first eigenvalue past the tangent directions: the third
    at ell = 0, the second at ell = 1, the first for ell >= 2.
    """
    if params.S is None:
        raise ValueError("params.S is not set")
    spectra = mode_spectra(params, b, grid, ell_max)
    gap = min(s.gap_lambda for s in spectra)
    if not gap > 0:
        raise SpectrumError(f"nonpositive spectral gap {gap}")
    return float(gap)


# --- orthogonality -----------------------------------------------------------------

def _tangent_radial(params: Params, b: Bubble, grid: RadialGrid) -> np.ndarray:
    r = grid.nodes
    return np.stack([profile(params, b, r), profile_dscale(params, b, r)], axis=1)


def ortho_residuals(params: Params, b: Bubble, grid: RadialGrid, phi: np.ndarray) -> np.ndarray:
    """int v^{p*-2} xi phi for xi in {v, d_lam v} (radial phi)."""
    w = grid.quad_weights * profile(params, b, grid.nodes) ** (params.pstar - 2)
    return _tangent_radial(params, b, grid).T @ (w * phi)


def ortho_cosines(params: Params, b: Bubble, grid: RadialGrid, phi: np.ndarray) -> np.ndarray:
    """:func:`ortho_residuals` divided by the weighted norms of xi and phi."""
    w = grid.quad_weights * profile(params, b, grid.nodes) ** (params.pstar - 2)
    T = _tangent_radial(params, b, grid)
    nf = np.sqrt(w @ phi**2)
    if nf == 0:
        return np.zeros(2)
    return (T.T @ (w * phi)) / (np.sqrt(np.einsum("ij,i,ij->j", T, w, T)) * nf)


def orthogonalize(params: Params, b: Bubble, grid: RadialGrid, f: np.ndarray) -> np.ndarray:
    """Remove the v and d_lam v components of a radial profile in L^2(v^{p*-2}).

    The outer node is set to 0 first, so the result stays in the Dirichlet
    space used by the solvers.
    """
    f = np.array(f, dtype=float)
    f[-1] = 0.0
    T = _tangent_radial(params, b, grid)
    T[-1] = 0.0
    w = grid.quad_weights * profile(params, b, grid.nodes) ** (params.pstar - 2)
    gram = T.T @ (w[:, None] * T)
    coef = np.linalg.solve(gram, T.T @ (w * f))
    out = f - T @ coef
    # one refinement sweep against rounding
    coef = np.linalg.solve(gram, T.T @ (w * out))
    return out - T @ coef


# --- perturbed gap ------------------------------------------------------------------

@dataclass
class GapCheck:
    """Both sides of the perturbed spectral-gap inequality for one phi."""

    margin: float
    lhs: float
    rhs: float
    grad_norm: float
    branch: int
    terms: dict = field(default_factory=dict)


def perturbed_gap_check(params: Params, b: Bubble, grid: RadialGrid, phi: ModeFn, gamma0: float,
                        C1: float, branch: int | None = None, *, gap: float,
                        delta_bar: float = 1e-2, c3: float | None = None,
                        ortho_tol: float = 1e-8) -> GapCheck:
    """LHS - RHS of the weighted gap inequality for a radial, orthogonal phi.

    Gradient terms use omega_j(Dv, Dv + Dphi) at the midpoints; for radial
    profiles Dv and Dphi are collinear, so only |v'|, |v' + phi'| enter.
    """
    if branch is None:
        branch = params.branch
    if branch != params.branch:
        raise ValueError(f"branch {branch} does not match p={params.p} (expected {params.branch})")
    if not phi.is_radial:
        raise ValueError("only radial phi is supported")
    f = phi.profile
    p, ps = params.p, params.pstar
    gnorm = grad_norm_lp(grid, phi, p)
    if gnorm > delta_bar * (1 + 1e-12):
        raise ValueError(f"||D phi||_p = {gnorm} exceeds delta_bar = {delta_bar}")
    cos = ortho_cosines(params, b, grid, f)
    if np.max(np.abs(cos)) > ortho_tol:
        raise ValueError(f"phi is not orthogonal to the tangent space (cosines {cos})")
    if gnorm == 0:
        return GapCheck(0.0, 0.0, 0.0, 0.0, branch)

    dv = profile_dr(params, b, grid.mid)
    dphi = grid.mid_derivative(f)
    ax = np.abs(dv)
    axy = np.abs(dv + dphi)
    ay = np.abs(dphi)
    wm = grid.mid_weights
    if branch in (1, 2):
        w_a, w_b = omega_from_norms(1, p, ax, axy), omega_from_norms(2, p, ax, axy)
    else:
        w_a, w_b = omega_from_norms(3, p, ax, axy, c3), omega_from_norms(4, p, ax, axy)
    quad = float(wm @ (w_a * ay**2)) + (p - 2) * float(wm @ (w_b * (axy - ax) ** 2))
    terms = {"weighted_quadratic": quad}
    lhs = quad
    if branch in (1, 2):
        with np.errstate(divide="ignore"):
            mins = np.minimum(ay**p, np.where(ax > 0, ax ** (p - 2), np.inf) * ay**2)
        min_int = float(wm @ mins)
        terms["min_integral"] = min_int
        lhs += gamma0 * min_int
    v = profile(params, b, grid.nodes)
    if branch == 1:
        dens = (v + C1 * np.abs(f)) ** ps / (v**2 + f**2) * f**2
    else:
        dens = v ** (ps - 2) * f**2
    mass = float(grid.quad_weights @ dens)
    terms["mass"] = mass
    factor = ps - 1 + gap * params.S ** (-p)
    rhs = factor * mass
    return GapCheck(lhs - rhs, lhs, rhs, gnorm, branch, terms)
