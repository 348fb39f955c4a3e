"""Numerical laboratory for quantitative stability near the Sobolev bubble.

The p-Laplace Euler-Lagrange equation -div(|Du|^{p-2} Du) = |u|^{p*-2} u on
R^n is studied near a single Talenti bubble: calibration of the bubble, the
weighted vector and scalar inequalities, the spectrum of the linearized
operator, projection onto the bubble manifold, the W^{-1,q} norm of the
residual, and end-to-end stability sweeps.
"""

__version__ = "0.1.0"

from .bubble import Bubble, Params, calibrated_bubble, make_params, problem_grid, sobolev_constant
from .dualnorm import dual_norm, dual_solve, residual
from .experiments import StabilityReport, stability_sweep, term_breakdown
from .grid import ModeFn, RadialGrid, make_grid
from .projection import ProjectionResult, project
from .spectrum import mode_spectra, perturbed_gap_check, spectral_gap

__all__ = [
    "Bubble",
    "ModeFn",
    "Params",
    "ProjectionResult",
    "RadialGrid",
    "StabilityReport",
    "calibrated_bubble",
    "dual_norm",
    "dual_solve",
    "make_grid",
    "make_params",
    "mode_spectra",
    "perturbed_gap_check",
    "problem_grid",
    "project",
    "residual",
    "sobolev_constant",
    "spectral_gap",
    "stability_sweep",
    "term_breakdown",
]
