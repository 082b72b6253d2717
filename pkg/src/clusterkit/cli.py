"""Command-line interface.

    clusterkit fit --y y --x x1,x2 --cluster cid data.csv
    clusterkit boot --variant wcr-s --coef x1 --B 9999 --seed 7 --format json data.csv ...

Exit codes: 0 success, 1 usage error, 2 data error, 3 method error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from dataclasses import asdict

import numpy as np

from . import __version__
from .bootstrap import BootstrapPlan, default_weights, run_bootstrap
from .crve import cv1, cv2, cv3, hc, t_test
from .design import ColumnSpec, INTERCEPT_NAME, build_blocks, load_dataset, weight_by_cluster_size
from .diagnostics import red_flag_report
from .errors import DataError, MethodError
from .estimator import jackknife_estimates, ols_fit
from .simulate import METHODS, McDesign, PlaceboDesign, run_monte_carlo, run_placebo_study
from .svtest import nest, score_variance_bootstrap, score_variance_test
from .twoway import robust_max_se, twoway_variance

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_METHOD = 0, 1, 2, 3

# options that never change results and so stay out of the embedded config
_NOT_CONFIG = {"threads", "format", "config", "verbose", "func"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _flag(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("data")
    g.add_argument("data", help="CSV file with a header row")
    g.add_argument("--y", required=True, help="regressand column")
    g.add_argument("--x", type=_csv_list, default=[], help="comma-separated regressor columns")
    g.add_argument("--cluster", "--coarse", dest="cluster", required=True,
                   help="cluster id column (the coarse level for svtest)")
    g.add_argument("--cluster2", help="second clustering dimension (twoway)")
    g.add_argument("--treatment", help="0/1 treatment regressor (must also be in --x)")
    g.add_argument("--fe", help="categorical column expanded into fixed-effect dummies")
    g.add_argument("--no-intercept", action="store_true", help="omit the constant")
    g.add_argument("--weight-clusters", action="store_true",
                   help="scale rows by N_g^-1/2 so every cluster carries equal weight")
    o = common.add_argument_group("inference")
    o.add_argument("--coef", help="coefficient tested (default: treatment, else first regressor)")
    o.add_argument("--beta0", type=float, default=0.0, help="null value of the coefficient")
    lv = o.add_mutually_exclusive_group()
    lv.add_argument("--alpha", type=float, default=0.05, help="test level; intervals cover 1-alpha")
    lv.add_argument("--level", dest="alpha", type=_level, metavar="LEVEL",
                    help="interval coverage, same as --alpha 1-LEVEL")
    o.add_argument("--dof", type=float, help="override the t degrees of freedom")
    r = common.add_argument_group("run")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--threads", type=int, help="worker threads (default $CLUSTERKIT_THREADS or 1)")
    r.add_argument("--format", choices=("text", "json"), default="text")
    r.add_argument("--config", help="key=value file of defaults; flags override it")
    r.add_argument("-v", "--verbose", action="store_true", help="progress and timing on stderr")

    p = _Parser(prog="clusterkit", description="Cluster-robust inference for linear regression.")
    p.add_argument("--version", action="version", version=f"clusterkit {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("fit", parents=[common], help="OLS with CV1 and CV3 standard errors")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("vcov", parents=[common], help="one variance estimator in full")
    s.add_argument("--kind", type=str.lower, default="cv1",
                   choices=("cv1", "cv2", "cv3", "hc1", "hc2", "hc3"))
    s.set_defaults(func=cmd_vcov)

    s = sub.add_parser("boot", parents=[common], help="pairs or wild cluster bootstrap")
    s.add_argument("--variant", type=str.lower, default="wcr-c",
                   choices=("pairs", "wcu-c", "wcu-s", "wcr-c", "wcr-s"))
    s.add_argument("--B", type=int, default=9999, dest="B")
    s.add_argument("--weights", choices=("rademacher", "webb6"),
                   help="auxiliary weights (default: rademacher if G >= 10, else webb6)")
    s.add_argument("--enumerate", action="store_true", help="all 2^G Rademacher sign vectors")
    s.add_argument("--no-ci", action="store_true", help="skip the confidence interval")
    s.set_defaults(func=cmd_boot)

    s = sub.add_parser("svtest", parents=[common],
                       help="score-variance test of fine (--fine) against coarse (--cluster) clusters")
    s.add_argument("--fine", required=True, help="fine cluster column nested in --cluster")
    s.add_argument("--B", "--boot", type=int, default=0, dest="B", help="bootstrap replicates (0: none)")
    s.set_defaults(func=cmd_svtest)

    s = sub.add_parser("twoway", parents=[common], help="two-way clustering and the max-se rule")
    s.set_defaults(func=cmd_twoway)

    s = sub.add_parser("diagnose", parents=[common], help="cluster heterogeneity red flags")
    s.set_defaults(func=cmd_diagnose)

    sim = _Parser(add_help=False)
    sim.add_argument("--R", type=int, default=1000, dest="R", help="replications")
    sim.add_argument("--methods", type=_csv_list, default=["cv1", "cv3"],
                     help=f"comma-separated subset of {','.join(METHODS)}")
    sim.add_argument("--boot-B", type=int, default=399, help="replicates inside bootstrap methods")
    sim.add_argument("--weights", choices=("rademacher", "webb6"))
    sim.add_argument("--band", type=_float_list, help="reliability band lo,hi (default 0.9a,1.1a)")

    s = sub.add_parser("mc", parents=[common, sim], help="targeted Monte Carlo on the real design")
    s.add_argument("--rho", type=_float_list, default=[0.0], help="comma-separated rho grid")
    s.add_argument("--sigma2", type=float, default=1.0, help="total disturbance variance")
    s.add_argument("--outcome", choices=("continuous", "binary"), default="continuous")
    s.add_argument("--dgp-beta", choices=("restricted", "zero", "hat"), default="restricted",
                   help="coefficients generating y")
    s.set_defaults(func=cmd_mc)

    s = sub.add_parser("placebo", parents=[common, sim], help="placebo regressions")
    s.add_argument("--mode", choices=("add", "replace", "both"), default="both")
    s.add_argument("--strategy", default="cluster",
                   help="cluster[:G1], within, or enumerate[:G1]")
    s.set_defaults(func=cmd_placebo)
    return p


# --------------------------------------------------------------------------
# Config handling
# --------------------------------------------------------------------------

def read_config(path: str) -> dict:
    cfg = {}
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            key, value = line.split("=", 1)
            cfg[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return cfg


def _subparser(parser: _Parser, name: str) -> _Parser | None:
    for act in parser._actions:
        if isinstance(act, argparse._SubParsersAction):
            return act.choices.get(name)
    return None


def _level(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError("level must lie strictly between 0 and 1")
    return 1.0 - value


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        command = next((a for a in argv if not a.startswith("-")), None)
        sp = _subparser(parser, command) if command else None
        if sp is not None:
            try:
                cfg = read_config(known.config)
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from None
            dests = {a.dest: a for a in sp._actions}
            defaults = {}
            for key, value in cfg.items():
                act = dests.get(key)
                if act is None or key in ("config", "help"):
                    raise UsageError(f"unknown config key {key!r} for {command}")
                if isinstance(act, argparse._StoreTrueAction):
                    defaults[key] = _flag(value)
                else:
                    defaults[key] = value
                    act.required = False
            sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def resolved_config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}


# --------------------------------------------------------------------------
# Shared pipeline pieces
# --------------------------------------------------------------------------

def load(args, cluster2: str | None = None):
    columns = ColumnSpec(y=args.y, x=list(args.x), cluster=args.cluster,
                      cluster2=cluster2 if cluster2 is not None else args.cluster2,
                      treatment=args.treatment, fe=args.fe, intercept=not args.no_intercept)
    try:
        d = load_dataset(args.data, columns)
    except OSError as exc:
        raise DataError(f"cannot read {args.data}: {exc.strerror or exc}") from None
    if d.k == 0:
        raise UsageError("no regressors given")
    if args.weight_clusters:
        d = weight_by_cluster_size(d)
    return d


def coef_of(args, d) -> int:
    if args.coef is not None:
        return d.coef_index(args.coef)
    if d.treatment_col is not None:
        return d.treatment_col
    for i, name in enumerate(d.column_names):
        if name != INTERCEPT_NAME:
            return i
    return 0


def clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def test_dict(res) -> dict:
    return {"coef": res.coef, "se": res.se, "t": res.t_stat, "p": res.p_value,
            "ci": [res.ci_lower, res.ci_upper], "method": res.method, "dof": res.dof,
            **res.extra}


def _g(x, width=12) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "NA".rjust(width)
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(x).rjust(width)
    if isinstance(x, float):
        return f"{x:.6g}".rjust(width)
    return str(x).rjust(width)


def table(header: list[str], rows: list[list], first: int = 12) -> str:
    widths = [max(first, *(len(str(r[0])) for r in rows), len(header[0]))] + [12] * (len(header) - 1)
    out = [header[0].ljust(widths[0]) + "".join(h.rjust(w + 1) for h, w in zip(header[1:], widths[1:]))]
    out.append("-" * len(out[0]))
    for r in rows:
        out.append(str(r[0]).ljust(widths[0]) + "".join(" " + _g(v, w) for v, w in zip(r[1:], widths[1:])))
    return "\n".join(out)


def _test_lines(t: dict, level: float) -> list[str]:
    return [f"{t['method']}: estimate {_g(t['coef'], 0)}  se {_g(t['se'], 0)}  t {_g(t['t'], 0)}  "
            f"p {_g(t['p'], 0)}  dof {_g(t['dof'], 0)}",
            f"{_g(level, 0)} interval [{_g(t['ci'][0], 0)}, {_g(t['ci'][1], 0)}]"]


# --------------------------------------------------------------------------
# Subcommands; each returns (result dict, seeds dict, text renderer)
# --------------------------------------------------------------------------

def cmd_fit(args):
    d = load(args)
    b = build_blocks(d)
    f = ols_fit(b)
    v1 = cv1(b, f)
    res = {"N": d.N, "G": d.G, "k": d.k, "coefficients": []}
    v3, cv3_error = None, None
    try:
        v3 = cv3(jackknife_estimates(b, f), f)
        res["cv3_computable_deletions"] = v3.effective_G
    except MethodError as exc:
        cv3_error = str(exc)
        res["cv3_error"] = cv3_error
    for i, name in enumerate(d.column_names):
        row = {"name": name, "estimate": float(f.beta_hat[i])}
        for tag, ve in (("cv1", v1), ("cv3", v3)):
            if ve is None:
                row.update({f"se_{tag}": None, f"t_{tag}": None, f"p_{tag}": None})
                continue
            try:
                t = t_test(ve, f, i, args.beta0, args.alpha, args.dof)
                row.update({f"se_{tag}": t.se, f"t_{tag}": t.t_stat, f"p_{tag}": t.p_value})
            except MethodError:
                row.update({f"se_{tag}": ve.se(i), f"t_{tag}": None, f"p_{tag}": None})
        res["coefficients"].append(row)
    res["dof_cv1"] = args.dof if args.dof is not None else v1.dof
    res["dof_cv3"] = (args.dof if args.dof is not None else v3.dof) if v3 is not None else None

    def text(r):
        rows = [[c["name"], c["estimate"], c["se_cv1"], c["t_cv1"], c["p_cv1"], c["se_cv3"],
                 c["t_cv3"], c["p_cv3"]] for c in r["coefficients"]]
        lines = [f"N = {r['N']}  G = {r['G']}  k = {r['k']}",
                 table(["", "estimate", "se(CV1)", "t(CV1)", "p(CV1)", "se(CV3)", "t(CV3)", "p(CV3)"], rows),
                 f"t reference: CV1 dof {_g(r['dof_cv1'], 0)}, CV3 dof {_g(r['dof_cv3'], 0)}"]
        if "cv3_error" in r:
            lines.append(f"CV3 unavailable: {r['cv3_error']}")
        return "\n".join(lines)

    return res, {}, text


def cmd_vcov(args):
    d = load(args)
    b = build_blocks(d)
    f = ols_fit(b)
    kind = args.kind
    if kind == "cv1":
        ve = cv1(b, f)
    elif kind == "cv2":
        ve = cv2(b, f)
    elif kind == "cv3":
        ve = cv3(jackknife_estimates(b, f), f)
    else:
        ve = hc(d, f, kind.upper())
    j = coef_of(args, d)
    t = t_test(ve, f, j, args.beta0, args.alpha, args.dof)
    res = {"kind": ve.kind, "names": list(d.column_names), "matrix": ve.matrix,
           "se": [ve.se(i) for i in range(d.k)], "dof": ve.dof, "effective_G": ve.effective_G,
           "flagged_clusters": list(ve.flagged_clusters), "test": test_dict(t),
           "coef_name": d.column_names[j], "level": 1 - args.alpha}

    def text(r):
        rows = [[n] + list(row) for n, row in zip(r["names"], r["matrix"])]
        lines = [f"{r['kind']} variance matrix (dof {_g(r['dof'], 0)})",
                 table([""] + r["names"], rows),
                 table(["", "se"], [[n, s] for n, s in zip(r["names"], r["se"])]),
                 f"test of {r['coef_name']} = {_g(args.beta0, 0)}"]
        lines += _test_lines(r["test"], r["level"])
        if r["flagged_clusters"]:
            lines.append(f"flagged clusters: {r['flagged_clusters']}")
        return "\n".join(lines)

    return res, {}, text


def cmd_boot(args):
    d = load(args)
    b = build_blocks(d)
    j = coef_of(args, d)
    weights = args.weights or default_weights(d.G)
    plan = BootstrapPlan(args.variant, B=args.B, weights=weights, seed=args.seed,
                         enumerate=args.enumerate, threads=args.threads)
    out = run_bootstrap(plan, b, j, args.beta0, args.alpha, ci=not args.no_ci)
    res = {"variant": out.variant, "coef_name": d.column_names[j],
           "estimate": float(ols_fit(b).beta_hat[j]), "beta0": args.beta0,
           "se_cv1": out.extra.get("se_cv1"), "t_obs": out.t_obs, "p_sym": out.p_sym,
           "p_equal_tail": out.p_equal_tail, "boot_se": out.boot_se,
           "ci": list(out.ci) if out.ci is not None else None,
           "B": out.B, "replicates_used": out.replicates_used, "dropped": out.dropped,
           "weights": out.weights, "enumerated": out.enumerated, "G": d.G,
           "level": 1 - args.alpha}

    def text(r):
        lines = [f"{r['variant']} bootstrap for {r['coef_name']} = {_g(r['beta0'], 0)}"
                 f" ({'full enumeration' if r['enumerated'] else r['weights'] + ' weights'},"
                 f" B = {r['B']}, used {r['replicates_used']})",
                 table(["", "value"], [["estimate", r["estimate"]], ["se(CV1)", r["se_cv1"]],
                                       ["t", r["t_obs"]], ["p symmetric", r["p_sym"]],
                                       ["p equal-tail", r["p_equal_tail"]],
                                       ["bootstrap se", r["boot_se"]]])]
        if r["ci"] is not None:
            lines.append(f"{_g(r['level'], 0)} interval [{_g(r['ci'][0], 0)}, {_g(r['ci'][1], 0)}]")
        return "\n".join(lines)

    return res, {"bootstrap": args.seed}, text


def cmd_svtest(args):
    d = load(args, cluster2=args.fine)
    j = coef_of(args, d)
    nesting = nest(d.cluster_id, d.cluster_id2)
    if args.B > 0:
        sv = score_variance_bootstrap(d, nesting, j, B=args.B, seed=args.seed, threads=args.threads)
    else:
        sv = score_variance_test(d, nesting, j)
    res = {"coef_name": d.column_names[j], "theta_hat": sv.theta_hat, "statistic": sv.sv_stat,
           "p_asymptotic": sv.p_asymptotic, "p_bootstrap": sv.p_bootstrap,
           "theta_g": sv.theta_g, "degenerate": sv.degenerate, "B": sv.B,
           "G_coarse": nesting.n_coarse, "H_fine": nesting.n_fine}

    def text(r):
        lines = [f"score-variance test for {r['coef_name']}: {r['H_fine']} fine clusters "
                 f"in {r['G_coarse']} coarse clusters",
                 table(["", "value"], [["theta", r["theta_hat"]], ["statistic", r["statistic"]],
                                       ["p asymptotic", r["p_asymptotic"]],
                                       ["p bootstrap", r["p_bootstrap"]]])]
        if r["degenerate"]:
            lines.append("every coarse cluster holds one fine cluster; the test is undefined")
        return "\n".join(lines)

    return res, ({"svboot": args.seed} if args.B > 0 else {}), text


def cmd_twoway(args):
    if not args.cluster2:
        raise UsageError("twoway needs --cluster2")
    d = load(args)
    b = build_blocks(d)
    f = ols_fit(b)
    j = coef_of(args, d)
    tw = twoway_variance(d, f)
    t = robust_max_se(d, f, j, args.beta0, args.alpha, tw)
    res = {"coef_name": d.column_names[j], "names": list(d.column_names), "G": tw.G, "H": tw.H,
           "n_intersections": tw.n_intersections, "matrix": tw.matrix, "psd": tw.psd_flag,
           "min_eigenvalue": tw.min_eigenvalue, "test": test_dict(t), "level": 1 - args.alpha,
           "dimensions": [args.cluster, args.cluster2]}

    def text(r):
        tt = r["test"]
        dim1, dim2 = r["dimensions"]
        lines = [f"two-way clustering: G = {r['G']}, H = {r['H']}, intersections = {r['n_intersections']}",
                 table(["se for " + r["coef_name"], "value"],
                       [["one-way " + dim1, tt["se_oneway_dim1"]], ["one-way " + dim2, tt["se_oneway_dim2"]],
                        ["two-way", tt["se_twoway"]]]),
                 f"chosen: {tt['source']}"]
        lines += _test_lines(tt, r["level"])
        if not r["psd"]:
            lines.append(f"two-way filling is not positive semidefinite (min eigenvalue {_g(r['min_eigenvalue'], 0)})")
        return "\n".join(lines)

    return res, {}, text


def cmd_diagnose(args):
    d = load(args)
    b = build_blocks(d)
    f = ols_fit(b)
    j = coef_of(args, d)
    rep = red_flag_report(d, f, j)
    res = {"coef_name": d.column_names[j], "G": rep.G, "N": rep.N, "cluster_sizes": rep.cluster_sizes,
           "G1": rep.G1, "G0": rep.G0, "flags": rep.flags, "thresholds": rep.thresholds_dict(),
           "notes": rep.notes, "missing": rep.missing}
    if rep.leverage is not None:
        res["leverage"] = {"L": rep.leverage.L, "V_s": rep.leverage.V_s,
                           "G_star0": rep.leverage.G_star0, "convention": rep.leverage.convention}
    if rep.variance is not None:
        res["residual_variance"] = {"sigma2": rep.variance.sigma2, "cv": rep.variance.cv}
    if rep.treatment_test is not None:
        res["treatment_variance"] = test_dict(rep.treatment_test)
    if rep.omit_one is not None:
        res["omit_one"] = {"deltas": rep.omit_one.deltas, "iqr": rep.omit_one.iqr,
                           "flagged": list(rep.omit_one.flagged),
                           "max_cluster": rep.omit_one.max_cluster}

    def text(r):
        cs = r["cluster_sizes"]
        rows = [["clusters", r["G"]], ["observations", r["N"]], ["smallest cluster", cs["min"]],
                ["median cluster", cs["median"]], ["largest cluster", cs["max"]],
                ["largest share", cs["largest_share"]], ["treated clusters", r["G1"]],
                ["control clusters", r["G0"]]]
        if "leverage" in r:
            rows += [["V_s", r["leverage"]["V_s"]], ["G_star0", r["leverage"]["G_star0"]]]
        if "residual_variance" in r:
            rows.append(["variance cv", r["residual_variance"]["cv"]])
        if "treatment_variance" in r:
            tv = r["treatment_variance"]
            rows += [["eta2/eta1", tv["ratio"]], ["eta2 p", tv["p"]]]
        if "omit_one" in r:
            rows.append(["omit-one IQR", r["omit_one"]["iqr"]])
        lines = [f"diagnostics for {r['coef_name']}", table(["", "value"], rows, first=18),
                 "flags: " + (", ".join(r["flags"]) if r["flags"] else "none")]
        lines += [f"not computed: {k} ({v})" for k, v in r["missing"].items()]
        lines += [f"note: {n}" for n in r["notes"]]
        return "\n".join(lines)

    return res, {}, text


def _band(args):
    if args.band is None:
        return None
    if len(args.band) != 2 or not args.band[0] <= args.band[1]:
        raise UsageError("--band takes lo,hi with lo <= hi")
    return tuple(args.band)


def _sim_text(report):
    def text(_):
        lines = [report.to_text()]
        for p in report.points:
            if p.get("realized_within_corr") is not None:
                lines.append(f"{p['label']}: realized within-cluster residual correlation "
                             f"{_g(p['realized_within_corr'], 0)}")
            if "mean_y" in p:
                lines.append(f"{p['label']}: mean of simulated y {_g(p['mean_y'], 0)}")
        fails = [(r.method, r.point, r.failures) for r in report.rows if r.failures]
        lines += [f"{m} at {pt}: {n} replications failed" for m, pt, n in fails]
        return "\n".join(lines)
    return text


def _report_dict(report) -> dict:
    return {"kind": report.kind, "alpha": report.alpha, "band": list(report.band),
            "rows": [asdict(r) for r in report.rows], "points": report.points, "info": report.info}


def cmd_mc(args):
    d = load(args)
    j = coef_of(args, d)
    design = McDesign(coef=j, rhos=args.rho, R=args.R, sigma_total=args.sigma2,
                      methods=args.methods, beta0=args.dgp_beta, null_value=args.beta0,
                      outcome=args.outcome, alpha=args.alpha, band=_band(args), seed=args.seed,
                      boot_B=args.boot_B, boot_weights=args.weights, threads=args.threads)
    report = run_monte_carlo(d, design)
    return _report_dict(report), {"monte_carlo": args.seed}, _sim_text(report)


def _strategy(text: str):
    name, _, n = text.partition(":")
    name = name.strip().lower()
    if name not in ("cluster", "within", "enumerate"):
        raise UsageError(f"unknown placebo strategy {text!r}")
    if n and name == "within":
        raise UsageError("the within strategy takes no cluster count")
    try:
        return name, int(n) if n else None
    except ValueError:
        raise UsageError(f"bad cluster count in {text!r}") from None


def cmd_placebo(args):
    d = load(args)
    j = coef_of(args, d)
    strategy, n_treated = _strategy(args.strategy)
    design = PlaceboDesign(coef=j, strategy=strategy, n_treated=n_treated, mode=args.mode,
                           R=args.R, methods=args.methods, alpha=args.alpha, band=_band(args),
                           seed=args.seed, boot_B=args.boot_B, boot_weights=args.weights,
                           threads=args.threads)
    report = run_placebo_study(d, design)
    return _report_dict(report), {"placebo": args.seed}, _sim_text(report)


# --------------------------------------------------------------------------

def run_command(argv: list[str], out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=err)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result, seeds, render = args.func(args)
    except UsageError as exc:
        print(f"clusterkit: error: {exc}", file=err)
        return EXIT_USAGE
    except DataError as exc:
        print(f"clusterkit: data error: {exc}", file=err)
        return EXIT_DATA
    except MethodError as exc:
        print(f"clusterkit: method error: {exc}", file=err)
        return EXIT_METHOD
    except ValueError as exc:
        print(f"clusterkit: error: {exc}", file=err)
        return EXIT_USAGE
    notes = sorted({str(w.message) for w in caught})
    if args.verbose:
        print(f"clusterkit {args.command}: {time.perf_counter() - t0:.3f}s", file=err)
    for n in notes:
        print(f"warning: {n}", file=err)
    if args.format == "json":
        doc = {"tool": "clusterkit", "version": __version__, "command": args.command,
               "config": resolved_config(args), "seeds": seeds, "warnings": notes,
               "result": result}
        out.write(json.dumps(clean(doc), sort_keys=True, indent=2) + "\n")
    else:
        out.write(render(clean(result)) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    return run_command(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":
    sys.exit(main())
