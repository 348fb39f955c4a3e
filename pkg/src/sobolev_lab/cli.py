"""Command-line driver.

Every subcommand prints (or writes to ``--out``) one JSON object or a CSV
table and exits 0 when all of its checks pass, 1 when one fails and 2 on a
usage error.  Output depends only on the arguments, so repeated runs are
byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time

import numpy as np

from . import __version__
from .bubble import (
    Bubble,
    calibrated_bubble,
    closed_form_coefficient,
    el_interior,
    el_residual,
    make_params,
    normalization_constant,
    problem_grid,
    profile,
    profile_dr,
    sample,
    sobolev_constant,
)
from .dualnorm import dictionary_lower_bound, dual_solve, residual
from .experiments import (
    DEFAULT_EPSILONS,
    concentrating_direction,
    default_directions,
    dictionary,
    eigen_direction,
    random_directions,
    setup,
    smooth_directions,
    stability_sweep,
    term_breakdown,
)
from .grid import make_grid
from .projection import project
from .spectrum import mode_spectra, perturbed_gap_check, spectral_gap
from .vectorial import (
    estimate_scalar_constants,
    estimate_vec_constants,
    fuzz_scalar,
    fuzz_vec,
)

SWEEP_COLUMNS = [
    "n", "p", "epsilon", "lhs", "rhs", "ratio", "slope", "direction", "exact",
    "projected_scale", "amplitude_drift", "link_identity_grad", "link_identity_mass",
    "link_dual", "link_vector", "link_scalar", "link_chain", "gap_margin", "min_constant", "error",
]
CSV_VERSION = 1


class UsageError(ValueError):
    """Arguments are well formed but meaningless (exit code 2)."""


# --- output -----------------------------------------------------------------

def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    return str(x)


def _flatten(d: dict, prefix: str = "") -> list[tuple[str, object]]:
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out += _flatten(v, key + ".")
        elif isinstance(v, (list, tuple)):
            out += [(f"{key}.{i}", x) for i, x in enumerate(v)] if v else [(key, "")]
        else:
            out.append((key, v))
    return out


def render(command: str, payload: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    buf.write(f"# sobolev_lab {command} csv v{CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    rows = payload.get("rows")
    if rows is not None:
        columns = payload.get("columns") or sorted({k for r in rows for k in r})
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    else:
        w.writerow(["key", "value"])
        for k, v in _flatten(payload):
            w.writerow([k, _fmt(v)])
    return buf.getvalue()


# --- config -----------------------------------------------------------------

def read_config(path: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use - or _."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


# --- subcommands ------------------------------------------------------------

def _params(args):
    if args.n is None or args.p is None:
        raise UsageError("--n and --p are required")
    try:
        return make_params(args.n, args.p)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_calibrate(args):
    params = _params(args)
    grid = problem_grid(params, args.grid_size)
    a = normalization_constant(params)
    b = Bubble(a)
    res = np.abs(el_residual(params, b, grid, relative=True))[el_interior(params, b, grid)]
    r = grid.nodes
    dv = float(grid.quad_weights @ np.abs(profile_dr(params, b, r)) ** params.p)
    lv = float(grid.quad_weights @ profile(params, b, r) ** params.pstar)
    S = sobolev_constant(params)
    ident = abs(dv - lv) / S**params.n
    checks = {"el_residual": bool(res.max() <= 1e-8), "norm_identity": bool(ident <= 1e-6)}
    return {"n": params.n, "p": params.p, "amplitude": a,
            "closed_form_amplitude": closed_form_coefficient(params) ** (1 / (params.pstar - params.p)),
            "S": S, "el_residual_rel_sup": float(res.max()), "norm_identity_rel": ident,
            "checks": checks}, all(checks.values())


def cmd_fuzz_vecineq(args):
    if args.p is None:
        raise UsageError("--p is required")
    kappa = args.kappa if args.kappa is not None else 0.5
    consts = estimate_vec_constants(args.p, kappa)
    res = fuzz_vec(args.p, consts, args.samples, args.dim, seed=args.seed)
    checks = {"min_margin": bool(res.min_margin >= -1e-12)}
    if "omega3_ratio_min" in res.extra:
        checks["omega3_lower"] = bool(res.extra["omega3_ratio_min"] >= 1 - 1e-12)
    payload = {"p": args.p, "kappa": kappa, "dim": args.dim, "samples": res.samples,
               "min_margin": res.min_margin, "argmin": res.argmin,
               "constants": {"c1": consts.c1, "c2": consts.c2, "c3": consts.c3},
               "checks": checks, **res.extra}
    return payload, all(checks.values())


def cmd_fuzz_scalar(args):
    if args.pstar is not None:
        pstar = args.pstar
    elif args.n is not None and args.p is not None:
        pstar = _params(args).pstar
    else:
        raise UsageError("give --pstar, or --n and --p")
    kappa = args.kappa if args.kappa is not None else 0.5
    consts = estimate_scalar_constants(pstar, kappa)
    res = fuzz_scalar(pstar, consts, args.samples, seed=args.seed)
    checks = {"C1_lower": bool(consts.C1 >= 1 / pstar), "min_margin": bool(res.min_margin >= -1e-12)}
    return {"pstar": pstar, "kappa": kappa, "samples": res.samples, "min_margin": res.min_margin,
            "argmin": res.argmin, "constants": {"C1": consts.C1, "C2": consts.C2},
            "checks": checks}, all(checks.values())


def cmd_spectrum(args):
    params = _params(args)
    s = setup(params.n, params.p, args.grid_size)
    spectra = mode_spectra(params, s.v0, s.grid, args.ell_max, k=args.k)
    ps = params.pstar
    rows = []
    for sp_ in spectra:
        for i, mu in enumerate(sp_.eigenvalues):
            rows.append({"ell": sp_.ell, "index": i, "eigenvalue": mu, "gap_lambda": sp_.gap_lambda})
    mu0 = spectra[0].eigenvalues
    ident = {"ell0_v": abs(mu0[0] - (params.p - 1)) / (params.p - 1),
             "ell0_dlam": abs(mu0[1] - (ps - 1)) / (ps - 1)}
    if args.ell_max >= 1:
        ident["ell1_dz"] = abs(spectra[1].eigenvalues[0] - (ps - 1)) / (ps - 1)
    coarse = spectral_gap(params, s.v0, setup(params.n, params.p, args.grid_size // 2).grid)
    drift = abs(coarse - s.constants.gap) / s.constants.gap
    checks = {"identities": bool(max(ident.values()) <= 1e-3), "gap_positive": bool(s.constants.gap > 0),
              "gap_drift": bool(drift <= 0.05)}
    return {"n": params.n, "p": params.p, "grid_size": args.grid_size, "gap": s.constants.gap,
            "gap_half_grid": coarse, "gap_drift": drift, "identities_rel": ident,
            "columns": ["ell", "index", "eigenvalue", "gap_lambda"], "rows": rows,
            "checks": checks}, all(checks.values())


def cmd_gap_check(args):
    params = _params(args)
    s = setup(params.n, params.p, args.grid_size)
    k = s.constants
    rows = []
    for i, phi in enumerate(random_directions(s, args.samples, args.seed)):
        for norm in args.norms:
            g = perturbed_gap_check(params, s.v0, s.grid, phi * norm, k.gamma0, k.scalar.C1,
                                    gap=k.gap, delta_bar=max(1e-2, norm), c3=k.vec.c3)
            rows.append({"sample": i, "norm": norm, "margin": g.margin, "lhs": g.lhs, "rhs": g.rhs})
    worst = min(r["margin"] for r in rows)
    checks = {"margin": bool(worst >= -1e-10)}
    return {"n": params.n, "p": params.p, "branch": params.branch, "constants": k.as_dict(),
            "min_margin": worst, "columns": ["sample", "norm", "margin", "lhs", "rhs"], "rows": rows,
            "checks": checks}, all(checks.values())


def _direction(s, name: str):
    dirs = default_directions(s)
    if name in dirs:
        return dirs[name]
    if name.startswith("eig") and name[3:].isdigit():
        return eigen_direction(s, int(name[3:]))
    if name == "bump":
        return lambda e: concentrating_direction(s, e)
    raise UsageError(f"unknown direction {name!r} (known: {', '.join(sorted(dirs))}, eigK, bump)")


def cmd_project(args):
    params = _params(args)
    s = setup(params.n, params.p, args.grid_size)
    target = Bubble(s.v0.amplitude, args.target_scale)
    u = sample(params, target, s.grid)
    if args.epsilon:
        d = _direction(s, args.direction or next(iter(default_directions(s))))
        phi = d(args.epsilon) if callable(d) else d
        u = u + args.epsilon * phi
    res = project(params, u, s.v0)
    ortho_rel = float(np.max(np.abs(res.ortho_residuals)) / abs(res.info["ortho_scale"]))
    checks = {"orthogonality": bool(ortho_rel <= 1e-8)}
    if not args.epsilon:
        checks["recovery"] = bool(abs(res.v.scale - args.target_scale) <= 1e-8 * args.target_scale
                                  and res.epsilon <= 1e-8)
    return {"n": params.n, "p": params.p, "amplitude": res.v.amplitude, "scale": res.v.scale,
            "center": list(res.v.center_array(params.n)), "epsilon": res.epsilon,
            "ortho_residuals": res.ortho_residuals, "ortho_rel": ortho_rel,
            "amplitude_drift": res.amplitude_drift, "iterations": res.iterations, "exact": res.exact,
            "basin_distance": res.info["basin_distance"], "checks": checks}, all(checks.values())


def cmd_dualnorm(args):
    # the default grid keeps the first node near r = 0, where the flux of a
    # radial function vanishes; see problem_grid for why spectra differ
    params = _params(args)
    grid = make_grid(params.n, args.grid_size)
    v0 = calibrated_bubble(params)
    u = sample(params, v0, grid)
    if args.epsilon:
        u = u + args.epsilon * smooth_directions(params, v0, grid, 1, args.seed)[0]
    f = residual(params, u, grid, base=v0)
    sol = dual_solve(params, f, grid)
    lower, idx = dictionary_lower_bound(params, f, grid, dictionary(grid))
    natural = float(grid.mid_weights @ np.abs(profile_dr(params, v0, grid.mid)) ** params.p) ** (
        (params.p - 1) / params.p)
    duality = abs(sol.pairing - sol.energy) / max(sol.energy, 1e-300)
    checks = {"duality": bool(duality <= 1e-8),
              "dictionary": bool(lower <= sol.norm * (1 + 1e-10))}
    if not args.epsilon:
        checks["residual_of_bubble"] = bool(sol.norm <= 1e-6 * natural)
    return {"n": params.n, "p": params.p, "epsilon": args.epsilon, "norm": sol.norm,
            "natural_scale": natural, "relative": sol.norm / natural, "pairing": sol.pairing,
            "energy": sol.energy, "duality_rel": duality, "optimality": sol.optimality,
            "dictionary_bound": lower, "dictionary_index": idx, "checks": checks}, all(checks.values())


def _sweep_rows(args, params, s):
    names = [args.direction] if args.direction else list(default_directions(s))
    eps = args.epsilons or list(DEFAULT_EPSILONS)
    out = []
    for name in names:
        d = _direction(s, name)
        rows = stability_sweep(params, d, eps, N=args.grid_size, scale=args.scale, breakdown=True)
        out.append((name, rows))
    return out


def cmd_sweep(args):
    params = _params(args)
    s = setup(params.n, params.p, args.grid_size, args.scale)
    rows, ok, summary = [], True, {}
    for name, reps in _sweep_rows(args, params, s):
        ratios = np.array([r.ratio for r in reps if not r.exact and not r.error])
        spread = float(ratios.max() / ratios.min()) if ratios.size else float("nan")
        summary[name] = {"ratio_max": float(ratios.max()) if ratios.size else float("nan"),
                         "ratio_spread": spread, "slope": reps[0].slope}
        ok &= bool(ratios.size and np.all(np.isfinite(ratios)) and np.all(ratios > 0))
        ok &= not any(r.error for r in reps)
        for r in reps:
            row = {"n": r.n, "p": r.p, "epsilon": r.epsilon, "lhs": r.lhs, "rhs": r.rhs,
                   "ratio": r.ratio, "slope": r.slope, "direction": name, "exact": r.exact,
                   "error": r.error, **r.info}
            row.update({k: v for k, v in r.terms.items() if k in SWEEP_COLUMNS})
            rows.append(row)
    return {"n": params.n, "p": params.p, "grid_size": args.grid_size, "scale": args.scale,
            "summary": summary, "columns": SWEEP_COLUMNS, "rows": rows,
            "checks": {"ratio_finite_positive": bool(ok)}}, bool(ok)


def cmd_breakdown(args):
    params = _params(args)
    s = setup(params.n, params.p, args.grid_size)
    eps = args.epsilon or 1e-3
    d = _direction(s, args.direction or next(iter(default_directions(s))))
    phi = d(eps) if callable(d) else d
    u = sample(params, s.v0, s.grid) + eps * phi
    proj = project(params, u, s.v0)
    terms = term_breakdown(params, u, proj.v, proj.phi, proj.epsilon, s)
    margins = {k: v for k, v in terms.items()
               if k in ("link_dual", "link_vector", "link_scalar", "link_chain", "gap_margin")}
    checks = {"identity": bool(max(terms["link_identity_grad"], terms["link_identity_mass"]) <= 1e-8),
              "margins": bool(min(margins.values()) >= -1e-10),
              "min_constant": bool(terms["min_constant"] > 0)}
    rows = [{"term": k, "value": v} for k, v in terms.items() if not isinstance(v, str)]
    return {"n": params.n, "p": params.p, "epsilon": proj.epsilon, "constants": s.constants.as_dict(),
            "columns": ["term", "value"], "rows": rows, "checks": checks}, all(checks.values())


COMMANDS = {
    "calibrate": cmd_calibrate,
    "fuzz-vecineq": cmd_fuzz_vecineq,
    "fuzz-scalar": cmd_fuzz_scalar,
    "spectrum": cmd_spectrum,
    "gap-check": cmd_gap_check,
    "project": cmd_project,
    "dualnorm": cmd_dualnorm,
    "sweep": cmd_sweep,
    "breakdown": cmd_breakdown,
}


# --- parser -----------------------------------------------------------------

def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _global_options(default) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=default)
    g = common.add_argument_group("global options")
    g.add_argument("--n", type=int, help="dimension")
    g.add_argument("--p", type=float, help="exponent, 1 < p < n")
    g.add_argument("--grid-size", type=int, help="radial nodes (default 1024)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--out", help="write output here instead of standard output")
    g.add_argument("--format", choices=["csv", "json"], help="output format (default json)")
    g.add_argument("--config", help="key = value file; command-line flags take precedence")
    return common


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; the copy on
    # the subcommands must not reset values given before it
    common = _global_options(None)
    sub_common = _global_options(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="sobolev-lab", parents=[common],
                                     description="Numerical checks around the Sobolev bubble.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[sub_common], help=help_)

    add("calibrate", "calibrate the bubble and check the Euler-Lagrange equation")
    for name, help_ in (("fuzz-vecineq", "fuzz the weighted gradient inequality"),
                        ("fuzz-scalar", "fuzz the scalar inequality")):
        sp_ = add(name, help_)
        sp_.add_argument("--kappa", type=float)
        sp_.add_argument("--samples", type=int)
        if name == "fuzz-vecineq":
            sp_.add_argument("--dim", type=int)
        else:
            sp_.add_argument("--pstar", type=float)
    sp_ = add("spectrum", "eigenvalues of the linearized operator and the gap")
    sp_.add_argument("--ell-max", type=int)
    sp_.add_argument("--k", type=int)
    sp_ = add("gap-check", "perturbed gap inequality on random orthogonal directions")
    sp_.add_argument("--samples", type=int)
    sp_.add_argument("--norms", type=_float_list)
    sp_ = add("project", "project a (perturbed, rescaled) bubble onto the manifold")
    sp_.add_argument("--target-scale", type=float)
    sp_.add_argument("--epsilon", type=float)
    sp_.add_argument("--direction")
    sp_ = add("dualnorm", "dual norm of the Euler-Lagrange residual")
    sp_.add_argument("--epsilon", type=float)
    sp_.add_argument("--direction")
    sp_ = add("sweep", "stability sweep over epsilon")
    sp_.add_argument("--epsilons", type=_float_list)
    sp_.add_argument("--direction")
    sp_.add_argument("--scale", type=float)
    sp_ = add("breakdown", "term-by-term breakdown of the stability chain")
    sp_.add_argument("--epsilon", type=float)
    sp_.add_argument("--direction")
    return parser


DEFAULTS = {"grid_size": 1024, "seed": 0, "format": "json", "kappa": None, "samples": None,
            "dim": 3, "ell_max": 2, "k": 4, "norms": [1e-4, 1e-3, 1e-2], "target_scale": 1.3,
            "epsilon": 0.0, "scale": 1.0}
SAMPLE_DEFAULTS = {"fuzz-vecineq": 1_000_000, "fuzz-scalar": 1_000_000, "gap-check": 50}


def _resolve(args, parser):
    """Fill unset options from --config, then from the defaults."""
    conf = read_config(args.config) if args.config else {}
    actions = {a.dest: a for a in parser._actions}
    for sp_action in parser._subparsers._group_actions:
        for a in sp_action.choices[args.command]._actions:
            actions.setdefault(a.dest, a)
    for key, text in conf.items():
        if key not in actions or key in ("config", "help", "command"):
            raise UsageError(f"unknown config key {key!r}")
        if getattr(args, key, None) is None:
            conv = actions[key].type or str
            try:
                setattr(args, key, conv(text))
            except ValueError as exc:
                raise UsageError(f"config key {key}: {exc}") from exc
    for key, value in DEFAULTS.items():
        if getattr(args, key, None) is None and key in actions:
            setattr(args, key, value)
    if getattr(args, "samples", "absent") is None:
        args.samples = SAMPLE_DEFAULTS[args.command]
    if args.format is None:
        args.format = "json"
    if args.format not in ("csv", "json"):
        raise UsageError(f"--format must be csv or json, got {args.format!r}")
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args = _resolve(args, parser)
        t0 = time.perf_counter()
        payload, ok = COMMANDS[args.command](args)
    except (UsageError, OSError) as exc:
        print(f"sobolev-lab: error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        # a numerical failure is a failed check, not a usage error
        print(f"sobolev-lab: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    text = render(args.command, payload, args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    status = "ok" if ok else "FAILED"
    print(f"{args.command}: {status} ({time.perf_counter() - t0:.2f} s)", file=sys.stderr)
    return 0 if ok else 1


def cli_main(argv=None) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
