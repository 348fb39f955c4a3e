"""Weighted vectorial inequalities for |x|^{p-2} x and the scalar power |a|^{p*-2} a.

Both margins are homogeneous (degree p in (x, y), degree p* in (a, b)) and
the vectorial one is rotation invariant, so constants are estimated on the
reduced sample ``|x| = 1``, ``|y| = t``, angle ``theta`` between x and y.
The full-vector fuzzers below are the independent check.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "VecIneqConstants",
    "ScalarIneqConstants",
    "ConstantEstimationError",
    "FuzzResult",
    "omega",
    "omega_from_norms",
    "gradient_ineq_margin",
    "gradient_margin_from_norms",
    "estimate_c3",
    "estimate_vec_constants",
    "scalar_ineq_margin",
    "estimate_scalar_constants",
    "scalar_branch_one",
    "F_c3",
    "g_sub",
    "fuzz_vec",
    "fuzz_scalar",
]

SAFETY_LOWER = 0.9
SAFETY_UPPER = 1.1


class ConstantEstimationError(RuntimeError):
    """No admissible constant was found on the sample."""


@dataclass(frozen=True)
class VecIneqConstants:
    """Empirical constants for the gradient inequality at exponent ``p``."""

    p: float
    kappa: float
    c1: float | None = None
    c2: float | None = None
    c3: float | None = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.p < 2:
            if self.c1 is None or not self.c1 > 0:
                raise ValueError("p < 2 needs c1 > 0")
        else:
            if self.c2 is None or not self.c2 > 0:
                raise ValueError("p >= 2 needs c2 > 0")
            if self.c3 is None or not 0 < self.c3 <= 0.5:
                raise ValueError("p >= 2 needs 0 < c3 <= 1/2")

    @property
    def c(self) -> float:
        """The constant in front of the extra term of the active branch."""
        return self.c1 if self.p < 2 else self.c2


@dataclass(frozen=True)
class ScalarIneqConstants:
    pstar: float
    kappa: float
    C1: float
    C2: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.C1 < 1.0 / self.pstar:
            raise ValueError("C1 must be at least 1/pstar")
        if not self.C2 > 0:
            raise ValueError("C2 must be positive")


# --- weights ---------------------------------------------------------------

def omega_from_norms(j: int, p: float, ax, axy, c3: float | None = None) -> np.ndarray:
    """omega_j as a function of ``|x|`` and ``|x + y|``."""
    ax = np.asarray(ax, dtype=float)
    axy = np.asarray(axy, dtype=float)
    if j in (1, 2):
        if not 1 < p <= 2:
            raise ValueError(f"omega_{j} needs 1 < p <= 2, got p={p}")
    elif j in (3, 4):
        if p < 2:
            raise ValueError(f"omega_{j} needs p >= 2, got p={p}")
    else:
        raise ValueError(f"weight index must be 1..4, got {j}")
    outer = ax <= axy
    with np.errstate(divide="ignore", invalid="ignore"):
        if j == 1:
            out = np.where(outer, axy ** (p - 2), ax ** (p - 2))
        elif j == 2:
            first = axy ** (p - 1) / ((2 - p) * axy + (p - 1) * ax)
            out = np.where(outer, first, ax ** (p - 2))
        else:
            mid = axy ** (p - 1) / ax
            if j == 4:
                out = np.where(outer, ax ** (p - 2), mid)
            else:
                if c3 is None:
                    c3 = estimate_c3(p)
                low = axy <= c3 ** (1 / (p - 1)) * ax
                out = np.where(outer, ax ** (p - 2), np.where(low, c3 * ax ** (p - 2), mid))
    return out


def omega(j: int, p: float, x, y, c3: float | None = None) -> np.ndarray:
    """omega_j(x, x + y); vectors along the last axis."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return omega_from_norms(j, p, np.linalg.norm(x, axis=-1), np.linalg.norm(x + y, axis=-1), c3)


# --- gradient inequality -------------------------------------------------------

def _spow(ax, e):
    """ax**e with 0**negative read as +inf and no warnings."""
    with np.errstate(divide="ignore"):
        return np.power(ax, e)


def gradient_margin_from_norms(p: float, consts: VecIneqConstants, ax, ay, xy, *,
                               extra: bool = True) -> np.ndarray:
    """LHS - RHS of the gradient inequality from ``|x|``, ``|y|`` and ``x . y``.

    ``extra=False`` drops the c-term, which is what constant estimation needs.
    """
    ax, ay, xy = (np.asarray(a, dtype=float) for a in (ax, ay, xy))
    axy2 = np.maximum(ax**2 + 2 * xy + ay**2, 0.0)
    axy = np.sqrt(axy2)
    with np.errstate(divide="ignore", invalid="ignore"):
        # |x+y|^{p-2}(x+y).y - |x|^{p-2} x.y
        lhs = np.where(axy > 0, axy ** (p - 2) * (xy + ay**2), 0.0)
        lhs = lhs - np.where(ax > 0, ax ** (p - 2) * xy, 0.0)
        k1 = 1.0 - consts.kappa
        if p < 2:
            w_a, w_b = omega_from_norms(1, p, ax, axy), omega_from_norms(2, p, ax, axy)
        else:
            w_a, w_b = omega_from_norms(3, p, ax, axy, consts.c3), omega_from_norms(4, p, ax, axy)
        quad = k1 * w_a * ay**2 + (p - 2) * k1 * w_b * (ax - axy) ** 2
        # at y = 0 the weights may be 0 * inf
        quad = np.where(ay > 0, quad, 0.0)
        margin = lhs - quad
        if extra:
            if p < 2:
                m = np.minimum(ay**p, np.where(ax > 0, _spow(ax, p - 2) * ay**2, np.inf))
                m = np.where(ay > 0, m, 0.0)
            else:
                m = ay**p
            margin = margin - consts.c * m
    return margin


def gradient_ineq_margin(p: float, consts: VecIneqConstants, x, y) -> np.ndarray:
    """LHS - RHS of the weighted gradient inequality; vectors along the last axis."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return gradient_margin_from_norms(p, consts, np.linalg.norm(x, axis=-1),
                                      np.linalg.norm(y, axis=-1), np.sum(x * y, axis=-1))


def F_c3(t, a: float, p: float):
    """Branch function whose nonnegativity on (0, a^{1/(p-1)}] fixes c3."""
    t = np.asarray(t, dtype=float)
    return ((2 - p) * t ** (p + 1) + (2 * p - 3) * t**p + (1 - p) * t ** (p - 1)
            - (t - 1) ** 2 * a + (1 - t))


def g_sub(t, p: float):
    """(p - 1) t^p - p t^{p-1} + 1."""
    t = np.asarray(t, dtype=float)
    return (p - 1) * t**p - p * t ** (p - 1) + 1


def _c3_admissible(a: float, p: float, m: int = 4000) -> bool:
    top = a ** (1 / (p - 1))
    t = np.concatenate([top * np.logspace(-12, 0, m), np.linspace(0, top, m)[1:]])
    return bool(np.min(F_c3(t, a, p)) >= 0)


@lru_cache(maxsize=None)
def estimate_c3(p: float, *, safety: float = SAFETY_LOWER) -> float:
    """Largest a in (0, 1/2] with F(., a) >= 0 on (0, a^{1/(p-1)}], times ``safety``.

    Admissibility is monotone in a (F decreases in a and the interval grows),
    so bisection applies.
    """
    if p < 2:
        raise ValueError("c3 is only defined for p >= 2")
    if _c3_admissible(0.5, p):
        return safety * 0.5
    lo, hi = 1e-12, 0.5
    if not _c3_admissible(lo, p):
        raise ConstantEstimationError(f"no admissible c3 for p={p}")
    for _ in range(60):
        mid = np.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        if _c3_admissible(mid, p):
            lo = mid
        else:
            hi = mid
    return safety * lo


def _reduced_sample(t_max: float, density: int):
    t = np.logspace(-4, np.log10(t_max), density)
    th = np.linspace(0.0, np.pi, density)
    T, TH = np.meshgrid(t, th, indexing="ij")
    return np.ones_like(T), T, T * np.cos(TH)


def estimate_vec_constants(p: float, kappa: float, t_max: float = 1e3,
                           grid_density: int = 400) -> VecIneqConstants:
    """Largest constants (times 0.9) passing on the reduced (t, theta) sample.

    For p >= 2 c3 comes first from :func:`estimate_c3`, then c2 is read off
    the margin with that c3 in the weights.
    """
    if not p > 1:
        raise ValueError("need p > 1")
    ax, ay, xy = _reduced_sample(t_max, grid_density)
    if p < 2:
        probe = VecIneqConstants(p, kappa, c1=1.0)
        base = gradient_margin_from_norms(p, probe, ax, ay, xy, extra=False)
        extra = np.minimum(ay**p, ay**2)
        # x = 0 reduces the inequality to (1 - c1)|y|^p >= 0
        raw = min(float(np.min(base / extra)), 1.0)
        if not raw > 0:
            raise ConstantEstimationError(f"no positive c1 for p={p}, kappa={kappa} (min ratio {raw})")
        return VecIneqConstants(p, kappa, c1=SAFETY_LOWER * raw)
    c3 = estimate_c3(p)
    probe = VecIneqConstants(p, kappa, c2=1.0, c3=c3)
    base = gradient_margin_from_norms(p, probe, ax, ay, xy, extra=False)
    raw = float(np.min(base / ay**p))
    if not raw > 0:
        raise ConstantEstimationError(f"no positive c2 for p={p}, kappa={kappa} (min ratio {raw})")
    return VecIneqConstants(p, kappa, c2=SAFETY_LOWER * raw, c3=c3)


# --- scalar inequality -------------------------------------------------------------

def scalar_branch_one(pstar: float) -> bool:
    """True on the p* <= 2 branch (with a relative tolerance for p* = 2 exactly)."""
    return pstar <= 2.0 * (1 + 1e-12)


def _spower(a, e):
    """|a|^e sign(a), i.e. |a|^{e-1} a."""
    return np.sign(a) * np.abs(a) ** e


def scalar_ineq_margin(pstar: float, consts: ScalarIneqConstants, a, b) -> np.ndarray:
    """RHS - LHS of the scalar inequality for |a|^{p*-2} a."""
    if abs(consts.pstar - pstar) > 1e-12 * pstar:
        raise ValueError("constants were estimated for a different pstar")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lhs = _spower(a + b, pstar - 1) * b
    k = pstar - 1 + consts.kappa
    base = _spower(a, pstar - 1) * b
    with np.errstate(divide="ignore", invalid="ignore"):
        if scalar_branch_one(pstar):
            den = a**2 + b**2
            extra = np.where(den > 0, k * (np.abs(a) + consts.C1 * np.abs(b)) ** pstar / den * b**2, 0.0)
        else:
            extra = k * np.abs(a) ** (pstar - 2) * b**2 + consts.C2 * np.abs(b) ** pstar
    return base + extra - lhs


def _scalar_f(t, pstar):
    return _spower(1 + t, pstar - 1) * t - t


def _scan_t(m: int = 20001, lo: float = -6.0, hi: float = 6.0):
    pos = np.logspace(lo, hi, m)
    return np.concatenate([-pos[::-1], pos])


def estimate_scalar_constants(pstar: float, kappa: float) -> ScalarIneqConstants:
    """C1 and C2 from 1D scans in t = b / a, with the upper safety factor 1.1.

    Only the constant of the active branch constrains anything; the other one
    is still reported from its own scan.
    """
    if not pstar > 1:
        raise ValueError("need pstar > 1")
    if not kappa > 0:
        raise ValueError("need kappa > 0")
    k = pstar - 1 + kappa

    def c1_curve(t):
        f = _scalar_f(t, pstar)
        r = (1 + t**2) * f / (k * t**2)
        with np.errstate(invalid="ignore"):
            return np.where(r > 0, (np.abs(r) ** (1 / pstar) - 1) / np.abs(t), -np.inf)

    def c2_curve(t):
        return (_scalar_f(t, pstar) - k * t**2) / np.abs(t) ** pstar

    sups = {}
    for name, curve in (("C1", c1_curve), ("C2", c2_curve)):
        # sups over growing ranges; their increments must shrink if bounded
        s4, s5, s6 = (float(np.max(curve(_scan_t(2000 * (e + 6) + 1, -6, e)))) for e in (4, 5, 6))
        if not np.isfinite(s6) or (s6 - s5) > max(s5 - s4, 0.0) + 1e-12 * abs(s6):
            raise ConstantEstimationError(f"{name} scan grows with the range ({s4}, {s5}, {s6})")
        sups[name] = s6
    C1 = max(1.0 / pstar, SAFETY_UPPER * sups["C1"])
    # a = 0 needs C2 >= 1; the t -> infinity limit of the scan is 1
    C2 = SAFETY_UPPER * max(sups["C2"], 1.0)
    return ScalarIneqConstants(pstar, kappa, C1, C2)


# --- fuzzing -------------------------------------------------------------------------

@dataclass
class FuzzResult:
    min_margin: float
    argmin: dict
    samples: int
    extra: dict = field(default_factory=dict)


def _workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("SOBOLEV_LAB_THREADS", "0") or 0)
    return workers if workers > 0 else (os.cpu_count() or 1)


def _chunked(samples: int, chunk: int, seed, fn, workers: int | None):
    """Run ``fn(rng, size)`` over deterministic chunks; results in chunk order."""
    sizes = [chunk] * (samples // chunk)
    if samples % chunk:
        sizes.append(samples % chunk)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    with ThreadPoolExecutor(max_workers=_workers(workers)) as pool:
        return list(pool.map(lambda a: fn(np.random.default_rng(a[0]), a[1]), zip(seeds, sizes)))


def _random_dirs(rng, size, n):
    v = rng.standard_normal((size, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def fuzz_vec(p: float, consts: VecIneqConstants, samples: int = 1_000_000, n: int = 3, *,
             seed=0, chunk: int = 100_000, workers: int | None = None) -> FuzzResult:
    """Random (x, y) in R^n over nine decades of |y|/|x| and two of overall scale.

    For p >= 2 also records the smallest omega_3 / (c3 |x|^{p-2}).
    """

    def run(rng, size):
        x = _random_dirs(rng, size, n)
        y = _random_dirs(rng, size, n) * 10.0 ** rng.uniform(-4.5, 4.5, (size, 1))
        # some y nearly cancelling x, where |x + y| is tiny
        k = size // 10
        y[:k] = -x[:k] * (1 + 10.0 ** rng.uniform(-6, 0, (k, 1))) + 1e-3 * y[:k] / np.maximum(
            1.0, np.linalg.norm(y[:k], axis=1, keepdims=True))
        s = 10.0 ** rng.uniform(-1, 1, (size, 1))
        x, y = s * x, s * y
        m = gradient_ineq_margin(p, consts, x, y)
        i = int(np.argmin(m))
        out = {"min": float(m[i]), "x": x[i].tolist(), "y": y[i].tolist()}
        if p >= 2:
            ax = np.linalg.norm(x, axis=1)
            w3 = omega(3, p, x, y, consts.c3)
            out["omega3_ratio"] = float(np.min(w3 / (consts.c3 * ax ** (p - 2))))
        return out

    parts = _chunked(samples, chunk, seed, run, workers)
    best = min(parts, key=lambda d: d["min"])
    extra = {}
    if p >= 2:
        extra["omega3_ratio_min"] = min(d["omega3_ratio"] for d in parts)
    return FuzzResult(best["min"], {"x": best["x"], "y": best["y"]}, samples, extra)


def fuzz_scalar(pstar: float, consts: ScalarIneqConstants, samples: int = 1_000_000, *,
                seed=0, chunk: int = 100_000, workers: int | None = None) -> FuzzResult:
    """Random (a, b) with |b/a| log-uniform over twelve decades, random signs, a != 0."""

    def run(rng, size):
        t = 10.0 ** rng.uniform(-6, 6, size) * rng.choice([-1.0, 1.0], size)
        a = rng.choice([-1.0, 1.0], size) * 10.0 ** rng.uniform(-1, 1, size)
        b = t * a
        # homogeneity of degree p*: evaluate on the unit circle
        r = np.hypot(a, b)
        m = scalar_ineq_margin(pstar, consts, a / r, b / r)
        i = int(np.argmin(m))
        return {"min": float(m[i]), "a": float(a[i] / r[i]), "b": float(b[i] / r[i])}

    parts = _chunked(samples, chunk, seed, run, workers)
    best = min(parts, key=lambda d: d["min"])
    return FuzzResult(best["min"], {"a": best["a"], "b": best["b"]}, samples)
