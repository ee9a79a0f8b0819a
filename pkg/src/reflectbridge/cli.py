"""Command-line driver.

Each subcommand reads an optional JSON config, applies flag overrides (flags
win), and writes CSV/JSON files into ``--out``.  Exit codes: 0 success
(warnings allowed), 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from importlib import resources

import numpy as np

from . import domains, eot, kernels, ldp, skorokhod
from .kernels import CostFamily

log = logging.getLogger("reflectbridge")

DEFAULT_LADDERS = {
    "ceta-convergence": [0.2, 0.1, 0.05, 0.02, 0.01],
    "ldp-check": [0.2, 0.1, 0.05, 0.02, 0.01, 0.005],
    "bounds": [1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01],
}
UNIT_INTERVAL = {"kind": "box", "lower": [0.0], "upper": [1.0]}


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    """17 significant digits; integers and strings pass through."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(float(x), ".17g")
    if isinstance(x, np.ndarray):
        return ";".join(fmt(v) for v in x.ravel())
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


# ------------------------------------------------------------------- config

def load_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.eta_ladder is not None:
        cfg["eta_ladder"] = args.eta_ladder
    for key, val in (getattr(args, "set", None) or []):
        cfg[key] = val
    return cfg


def parse_ladder(text: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid eta ladder {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("eta ladder is empty")
    return vals


def parse_set(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError("--set expects KEY=JSON")
    key, val = text.split("=", 1)
    try:
        return key, json.loads(val)
    except json.JSONDecodeError:
        return key, val


def _domain(cfg, key="domain", default=UNIT_INTERVAL, allow_free=True):
    spec = cfg.get(key, default)
    if spec == "free" or (isinstance(spec, dict) and spec.get("kind") == "free"):
        if not allow_free:
            raise ConfigError(f"field {key!r}: the free kernel is not allowed here")
        return kernels.FREE
    try:
        return domains.from_json(spec)
    except domains.DomainError as exc:
        raise ConfigError(f"field {key!r}: {exc}") from exc


def _free_dim(cfg, key="domain"):
    spec = cfg.get(key)
    if isinstance(spec, dict):
        return int(spec.get("dimension", 1))
    return 1


def _number(cfg, key, default=None, positive=False, integer=False):
    val = cfg.get(key, default)
    if val is None:
        raise ConfigError(f"field {key!r} is required")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"field {key!r} must be a number, got {val!r}")
    if integer:
        if float(val) != int(val):
            raise ConfigError(f"field {key!r} must be an integer")
        val = int(val)
    if positive and not val > 0:
        raise ConfigError(f"field {key!r} must be positive")
    return val


def _ladder(cfg, command):
    lad = cfg.get("eta_ladder", DEFAULT_LADDERS.get(command))
    if not isinstance(lad, list) or not lad:
        raise ConfigError("field 'eta_ladder' must be a nonempty list")
    if not all(isinstance(e, (int, float)) and not isinstance(e, bool) and e > 0 for e in lad):
        raise ConfigError("field 'eta_ladder' must contain positive numbers")
    return [float(e) for e in lad]


def _family(cfg):
    dom = _domain(cfg)
    return CostFamily(dom, float(cfg.get("series_tol", 1e-14)),
                      _free_dim(cfg) if dom == kernels.FREE else None)


def _measure(spec, name):
    if not isinstance(spec, dict) or "points" not in spec:
        raise ConfigError(f"field {name!r} must be an object with 'points'")
    pts = np.asarray(spec["points"], dtype=float)
    try:
        if "weights" in spec:
            return eot.DiscreteMeasure(pts, np.asarray(spec["weights"], dtype=float))
        return eot.DiscreteMeasure.uniform(pts)
    except ValueError as exc:
        raise ConfigError(f"field {name!r}: {exc}") from exc


def load_instance(cfg):
    if "instance" in cfg:
        inst = cfg["instance"]
        if isinstance(inst, str):
            inst = _read_instance(inst)
    elif "instance_file" in cfg:
        inst = _read_instance(cfg["instance_file"])
    else:
        inst = _read_instance("interval_8x8")
    if not isinstance(inst, dict):
        raise ConfigError("field 'instance' must be an object or a bundled name")
    return _measure(inst.get("mu"), "mu"), _measure(inst.get("nu"), "nu")


def _read_instance(name):
    try:
        if os.path.exists(name):
            with open(name) as fh:
                return json.load(fh)
        return json.loads(resources.files("reflectbridge.data").joinpath(f"{name}.json").read_text())
    except (OSError, FileNotFoundError, json.JSONDecodeError) as exc:
        raise ConfigError(f"unknown instance {name!r}: {exc}") from exc


def _cost(cfg, mu, nu, eta):
    spec = cfg.get("cost", {"kind": "family"})
    kind = spec.get("kind") if isinstance(spec, dict) else spec
    if kind == "family":
        fam = _family(cfg)
        return eot.build_cost(fam, mu, nu, eta), fam
    if kind == "quadratic":
        return eot.build_cost(kernels.quadratic_cost, mu, nu, source="quadratic"), None
    if kind == "constant":
        value = _number(spec, "value", 0.0)
        return eot.CostMatrix(np.full((mu.size, nu.size), float(value)), "constant"), None
    raise ConfigError(f"field 'cost': unknown kind {kind!r}")


# ----------------------------------------------------------------- commands

def cmd_kernel_table(cfg, out):
    dom = _domain(cfg)
    lad = cfg.get("eta_ladder")
    if lad is not None:
        lad = _ladder(cfg, "kernel-table")
        if len(lad) != 1:
            raise ConfigError("kernel-table takes a single eta")
        eta = lad[0]
    else:
        eta = _number(cfg, "eta", 0.01, positive=True)
    t = _number(cfg, "t", 1.0, positive=True)
    n = _number(cfg, "n_grid", 101, positive=True, integer=True)
    spec = kernels.KernelSpec(dom, eta, float(cfg.get("series_tol", 1e-14)),
                              _free_dim(cfg) if dom == kernels.FREE else None)
    d = spec.dim
    if dom != kernels.FREE and dom.kind == "box":
        lo, hi = dom.lower, dom.upper
    else:
        lo = np.zeros(d) if dom == kernels.FREE else dom.lower
        hi = lo + _number(cfg, "x_span", 3.0, positive=True)
    pts = kernels._grid_points(kernels.FREE, n, lo, hi, d)
    X, Y = kernels.pair_grid(pts, pts, d)
    dens = kernels.density(spec, t, X, Y)
    write_csv(os.path.join(out, "kernel_table.csv"), ["x", "y", "density"],
              ((pts[i] if d > 1 else pts[i, 0], pts[j] if d > 1 else pts[j, 0], dens[i, j])
               for i in range(len(pts)) for j in range(len(pts))))
    return []


def cmd_ceta_convergence(cfg, out):
    fam = _family(cfg)
    lad = _ladder(cfg, "ceta-convergence")
    n = _number(cfg, "n_grid", 201, positive=True, integer=True)
    x0 = cfg.get("slice_x", 0.3)
    d = fam.dim
    if fam.dom != kernels.FREE and fam.dom.kind == "box":
        lo, hi = fam.dom.lower, fam.dom.upper
    else:
        lo = np.zeros(d) if fam.dom == kernels.FREE else fam.dom.lower
        hi = lo + 1.0
    pts = kernels._grid_points(kernels.FREE, n, lo, hi, d)
    summary = []
    for k, eta in enumerate(lad):
        shift, sup = kernels.sup_deviation(fam, eta, pts)
        summary.append((eta, shift, sup))
        ce, cl = kernels.ceta_slice(fam, eta, x0, pts, shift)
        write_csv(os.path.join(out, f"slice_{k:02d}.csv"), ["y", "c_eta_shifted", "c_limit"],
                  zip(pts if d > 1 else pts[:, 0], ce, cl))
    write_csv(os.path.join(out, "summary.csv"), ["eta", "shift", "sup_dev"], summary)
    warnings = []
    sups = [s for _, _, s in summary]
    if any(b >= a for a, b in zip(sups, sups[1:])):
        warnings.append("sup_dev is not strictly decreasing along the ladder")
    return warnings


def cmd_solve(cfg, out):
    mu, nu = load_instance(cfg)
    eta = _number(cfg, "eta", 0.05, positive=True)
    tol = _number(cfg, "tol", eot.DEFAULT_TOL, positive=True)
    max_iter = _number(cfg, "max_iter", eot.DEFAULT_MAX_ITER, positive=True, integer=True)
    cost, _ = _cost(cfg, mu, nu, eta)
    cp = eot.sinkhorn(mu, nu, cost, eta, tol, max_iter)
    warnings = [] if cp.converged else [
        f"Sinkhorn did not converge in {cp.iterations} iterations (marginal error {cp.marginal_error:.3g})"]
    write_csv(os.path.join(out, "plan.csv"), ["i", "j", "x_i", "y_j", "mass"],
              ((i, j, _pt(mu, i), _pt(nu, j), cp.plan[i, j])
               for i in range(mu.size) for j in range(nu.size)))
    write_csv(os.path.join(out, "duals.csv"), ["side", "index", "value"],
              [("u", i, v) for i, v in enumerate(cp.u)] + [("v", j, v) for j, v in enumerate(cp.v)])
    write_json(os.path.join(out, "meta.json"), {
        "eta": eta, "iterations": cp.iterations, "marginal_error": cp.marginal_error,
        "converged": cp.converged, "cost_source": cost.source, "warnings": warnings})
    return warnings


def _pt(meas, i):
    p = meas.points[i]
    return p[0] if p.size == 1 else p


def _sets(cfg, sol: ldp.OtSolution, n, m):
    raw = cfg.get("sets")
    if raw is None:
        raise ConfigError("field 'sets' is required (use 'support', 'off_support' or a mapping)")
    if isinstance(raw, str):
        raw = {raw: raw}
    if isinstance(raw, list):
        raw = {f"set{k}": v for k, v in enumerate(raw)}
    if not isinstance(raw, dict) or not raw:
        raise ConfigError("field 'sets' must name at least one set")
    support = set(sol.support.pairs)
    sets = {}
    for sid, spec in raw.items():
        if spec == "support":
            pairs = sorted(support)
        elif spec == "off_support":
            pairs = [(i, j) for i in range(n) for j in range(m) if (i, j) not in support]
        else:
            try:
                pairs = [(int(p[0]), int(p[1])) for p in spec]
            except (TypeError, ValueError, IndexError) as exc:
                raise ConfigError(f"set {sid!r} must list [i, j] pairs") from exc
            if any(not (0 <= i < n and 0 <= j < m) for i, j in pairs):
                raise ConfigError(f"set {sid!r} has an index out of range")
        if not pairs:
            raise ConfigError(f"set {sid!r} is empty")
        sets[str(sid)] = pairs
    return sets


def cmd_ldp_check(cfg, out):
    mu, nu = load_instance(cfg)
    fam = _family(cfg)
    lad = sorted(_ladder(cfg, "ldp-check"), reverse=True)
    k_max = _number(cfg, "k_max", 3, positive=True, integer=True)
    limit = eot.build_cost(fam.limit_cost, mu, nu, source="limit")
    sol = ldp.exact_ot(mu, nu, limit)
    sets = _sets(cfg, sol, mu.size, nu.size)
    duals = ldp.kantorovich_potentials(sol, limit, mu, nu)
    ks = list(range(2, k_max + 1))
    report = ldp.rate_report(limit, sol, duals, ks)
    write_csv(os.path.join(out, "rates.csv"),
              ["i", "j", "x", "y", "I_dual"] + [f"I_enum_k{k}" for k in ks],
              ((i, j, x if x.size > 1 else x[0], y if y.size > 1 else y[0], *rest)
               for i, j, x, y, *rest in report.rows(mu, nu)))
    tol = _number(cfg, "tol", eot.DEFAULT_TOL, positive=True)
    max_iter = _number(cfg, "max_iter", eot.DEFAULT_MAX_ITER, positive=True, integer=True)
    plans = eot.plan_family(mu, nu, fam, lad, tol, max_iter)
    table = ldp.ldp_table(plans, report.I_dual, sets)
    write_csv(os.path.join(out, "ldp_table.csv"), ["eta", "set_id", "eta_log_prob", "neg_inf_rate", "gap"],
              ((r.eta, r.set_id, r.eta_log_prob, r.neg_inf_rate, r.gap) for r in table.rows))
    warnings = [f"Sinkhorn did not converge at eta={cp.eta}" for cp in plans if not cp.converged]
    if not duals.unique:
        warnings.append(f"support graph has {len(duals.components)} components; "
                        "potentials are not unique and off-support rates depend on the centring")
    write_json(os.path.join(out, "ldp_summary.json"), {
        "etas": lad,
        "extrapolated": {k: (v if math.isfinite(v) else None) for k, v in table.extrapolated.items()},
        "neg_inf_rate": {sid: -float(np.min(report.I_dual[[p[0] for p in ps], [p[1] for p in ps]]))
                         for sid, ps in sets.items()},
        "ot_value": sol.value,
        "components": len(duals.components),
        "warnings": warnings,
    })
    return warnings


def cmd_simulate(cfg, out):
    dom = _domain(cfg, allow_free=False)
    eta = _number(cfg, "eta", 0.1)
    if eta < 0:
        raise ConfigError("field 'eta' must be nonnegative")
    seed = cfg.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"field 'seed' must be an integer, got {seed!r}")
    n_paths = _number(cfg, "n_paths", 100_000, positive=True, integer=True)
    n_steps = _number(cfg, "n_steps", 1000, positive=True, integer=True)
    t_end = _number(cfg, "t_end", 1.0, positive=True)
    x0 = np.atleast_1d(np.asarray(cfg.get("x0", [0.3] * dom.dimension), dtype=float))
    if x0.shape != (dom.dimension,):
        raise ConfigError("field 'x0' must have one entry per dimension")
    scheme = cfg.get("scheme", "auto")
    if scheme not in ("auto", "fold", "projection"):
        raise ConfigError("field 'scheme' must be auto, fold or projection")
    if scheme == "auto":
        scheme = "fold" if dom.kind == "box" else "projection"
    sde = skorokhod.SdeConfig(eta, skorokhod.point_mass(x0), n_steps=n_steps, seed=seed)
    ends = skorokhod.simulate_reflected_endpoints(dom, sde, n_paths, t_end, scheme)
    write_csv(os.path.join(out, "endpoints.csv"), [f"dim{k}" for k in range(dom.dimension)], ends)
    report = {"n_paths": n_paths, "n_steps": n_steps, "eta": eta, "seed": seed, "scheme": scheme,
              "max_abs_z": None, "n_cells": 0, "pass": None}
    warnings = []
    if dom.kind == "box" and dom.dimension == 1 and eta > 0:
        n_cells = _number(cfg, "n_cells", 50, positive=True, integer=True)
        hist = histogram_comparison(ends[:, 0], dom, eta * t_end, x0[0], n_cells)
        write_csv(os.path.join(out, "histogram.csv"), ["cell_lo", "cell_hi", "count", "expected", "z"], hist)
        zmax = float(max(abs(r[4]) for r in hist))
        report.update({"max_abs_z": zmax, "n_cells": n_cells, "pass": bool(zmax < 4.0)})
        if zmax >= 4.0:
            warnings.append(f"max standardized cell deviation {zmax:.3f} >= 4")
    write_json(os.path.join(out, "report.json"), report)
    return warnings


def histogram_comparison(samples, dom, var, x0, n_cells):
    """Cell counts against image-series cell probabilities, with binomial z-scores."""
    from scipy.integrate import quad

    lo, hi = float(dom.lower[0]), float(dom.upper[0])
    edges = np.linspace(lo, hi, n_cells + 1)
    counts, _ = np.histogram(samples, bins=edges)
    n = samples.size
    rows = []
    for k in range(n_cells):
        prob = quad(lambda y: kernels.box_density(1.0, var, x0, y, dom), edges[k], edges[k + 1],
                    epsabs=1e-13, epsrel=1e-11, limit=200)[0]
        expected = n * prob
        sd = math.sqrt(max(n * prob * (1 - prob), 1e-300))
        rows.append((edges[k], edges[k + 1], int(counts[k]), expected, (counts[k] - expected) / sd))
    return rows


def cmd_bounds(cfg, out):
    dom = _domain(cfg)
    if dom == kernels.FREE or dom.kind != "box":
        raise ConfigError("field 'domain': bounds need a box")
    fam = CostFamily(dom, float(cfg.get("series_tol", 1e-14)))
    lad = _ladder(cfg, "bounds")
    n = _number(cfg, "n_grid", 101, positive=True, integer=True)
    delta = _number(cfg, "delta", 0.1)
    if delta < 0:
        raise ConfigError("field 'delta' must be nonnegative")
    eps = _number(cfg, "eps", 0.2, positive=True)
    beta = _number(cfg, "beta", 1.0, positive=True)
    try:
        lower = kernels.check_lower_bound(fam, lad, eps, n, beta)
    except domains.EmptyInnerDomain as exc:
        raise ConfigError(f"field 'eps': {exc}") from exc
    upper = kernels.check_upper_bound(fam, lad, n, delta)
    write_json(os.path.join(out, "bounds.json"),
               {"domain": dom.to_json(), "upper": upper.to_json(), "lower": lower.to_json()})
    warnings = list(upper.notes) + list(lower.notes)
    return warnings


COMMANDS = {
    "kernel-table": cmd_kernel_table,
    "ceta-convergence": cmd_ceta_convergence,
    "solve": cmd_solve,
    "ldp-check": cmd_ldp_check,
    "simulate": cmd_simulate,
    "bounds": cmd_bounds,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--eta-ladder", type=parse_ladder, metavar="A,B,C",
                        help="comma-separated eta values (overrides config)")
    common.add_argument("--set", type=parse_set, action="append", metavar="KEY=JSON",
                        help="override a single config field")
    parser = argparse.ArgumentParser(prog="reflectbridge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        os.makedirs(args.out, exist_ok=True)
        warnings = COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1
    except (ArithmeticError, ldp.InfeasiblePotentials) as exc:
        log.error("numerical failure: %s", exc)
        return 2
    for w in warnings:
        log.warning("%s", w)
    return 0


if __name__ == "__main__":
    sys.exit(main())
