"""Command line entry point: assocsip <subcommand> [options].

Exit status 0 on success with every check passing, 1 when a check fails,
2 on configuration or I/O errors.
"""
from __future__ import annotations

import argparse
import glob
import json
import math
import os
import sys
from itertools import combinations

import numpy as np

from . import __version__
from .config import CHECK_NAMES, ConfigError, LabConfig, model_shorthand
from .coupling import SCALE_STATS, e_window_shrinkage, run_coupling_experiment
from .covariance import (block_sum_covariance, check_block_variance, exact_sigma2, susceptibility_gap_fit)
from .fields import dump_grid, simulate_field
from .geometry import BlockGeometry, block_distance, validate_parameters
from .lattice import Rect, checked_prod
from .output import index_columns, read_csv, write_csv, write_json
from .verify import (clt_rate_check, lil_tracker, maximal_inequality_check, moment_bound_check,
                     profile_growth_check, term_bound_suite)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(" ", "").split(",") if x]


def _scales(text: str) -> list[list[int]]:
    return [_int_list(part) for part in text.split(";") if part.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON configuration file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--model", help="field model shorthand, e.g. iid-gaussian or ma-exponential")
    p.add_argument("--d", type=int, help="dimension")
    p.add_argument("--alpha", type=int)
    p.add_argument("--beta", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--no-lam", action="store_true", help="drop the exponential decay assumption")
    p.add_argument("--extent", type=_int_list, help="comma separated, e.g. 532,532")
    p.add_argument("--kmax", type=_int_list, help="comma separated block range")
    p.add_argument("--replicates", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--scales", type=_scales, help="semicolon separated block indices, e.g. '3,3;4,4;5,5'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="assocsip", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"assocsip {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("validate-params", "check blocking parameters against every hypothesis"),
        ("geometry", "boundary sequence, blocks, good set, psi and core rectangles"),
        ("covariance", "sigma^2, u(n), sigma^2(V), gap fits and block covariances"),
        ("simulate", "simulate fields and write summaries"),
        ("couple", "run the coupling pipeline"),
        ("verify", "run named Monte Carlo checks"),
        ("report", "merge prior JSON outputs into one summary"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _common(p)
        if name == "verify":
            p.add_argument("--check", default="all", help=f"one of {', '.join(CHECK_NAMES)} or all")
        if name == "couple":
            p.add_argument("--mode", choices=("surrogate", "identity"))
            p.add_argument("--calibration-replicates", type=int)
        if name == "simulate":
            p.add_argument("--dump", action="store_true", help="write raw grids as flat binary")
    return parser


def load_config(args) -> LabConfig:
    cfg = LabConfig.load(args.config) if args.config else LabConfig.from_mapping()
    changes = {}
    if args.d is not None:
        changes["d"] = args.d
        if args.extent is None and cfg.geometry["extent"] is not None:
            changes["geometry.extent"] = [cfg.geometry["extent"][0]] * args.d
        if args.scales is None:
            changes["experiment.scales"] = [[k[0]] * args.d for k in cfg.experiment["scales"]]
        kernel = cfg.data["model"].get("kernel")
        if kernel is not None and not isinstance(kernel, str):
            raise ConfigError("--d cannot reshape an explicit kernel; edit the config instead")
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.model is not None:
        changes["model"] = model_shorthand(args.model)
    for key in ("alpha", "beta", "tau", "r", "delta", "nu", "lam"):
        val = getattr(args, key)
        if val is not None:
            changes[f"geometry.{key}"] = val
    if args.no_lam:
        changes["geometry.lam"] = None
    if args.extent is not None:
        changes["geometry.extent"] = args.extent
    if args.kmax is not None:
        changes["geometry.kmax"] = args.kmax
    if args.replicates is not None:
        changes["experiment.replicates"] = args.replicates
    if args.epsilon is not None:
        changes["experiment.epsilon"] = args.epsilon
    if args.scales is not None:
        changes["experiment.scales"] = args.scales
    if getattr(args, "mode", None):
        changes["experiment.mode"] = args.mode
    if getattr(args, "calibration_replicates", None) is not None:
        changes["experiment.calibration_replicates"] = args.calibration_replicates
    if getattr(args, "dump", False):
        changes["experiment.dump_grid"] = True
    if getattr(args, "check", None) not in (None, "all"):
        changes["experiment.checks"] = [c.strip() for c in args.check.split(",")]
    if "d" in changes:
        # dimension first so the nested overrides validate against it
        cfg = LabConfig({**cfg.data, "d": changes.pop("d")})
    return cfg.override(**changes)


class Writer:
    """Output sink bound to one run: directory, provenance header and config."""

    def __init__(self, cfg: LabConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.dir = cfg.output_dir
        try:
            os.makedirs(self.dir, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {self.dir}: {exc}") from exc
        self.header = [f"artifact: assocsip {__version__}", f"command: {command}", f"seed: {cfg.seed}",
                       f"config: {cfg.canonical_json()}"]

    def csv(self, name, columns, rows):
        write_csv(os.path.join(self.dir, name), self.header, columns, rows)

    def json(self, name, data):
        write_json(os.path.join(self.dir, name), __version__, json.loads(self.cfg.canonical_json()),
                   self.cfg.seed, self.command, data)


def _kmax(cfg: LabConfig) -> tuple:
    k = cfg.geometry["kmax"]
    return tuple(k) if k else (6,) * cfg.d


def cmd_validate_params(cfg: LabConfig, out: Writer) -> int:
    report = validate_parameters(cfg.params())
    rows = report.rows()
    out.csv("validate_params.csv", ["hypothesis", "condition", "lhs", "rhs", "status", "note"],
            [[r["lemma"], r["condition"], r["lhs"], r["rhs"], r["status"], r["note"]] for r in rows])
    out.json("validate_params.json", {"passed": report.all_passed, "derived": report.derived, "checks": rows,
                                      "failures": [f"{c.lemma}: {c.condition} ({c.lhs} vs {c.rhs})"
                                                   for c in report.failures]})
    for c in report.failures:
        print(f"FAIL {c.lemma}: {c.condition}  lhs={c.lhs} rhs={c.rhs}")
    print("all hypotheses hold" if report.all_passed else f"{len(report.failures)} hypothesis violations")
    return EXIT_OK if report.all_passed else EXIT_FAIL


def cmd_geometry(cfg: LabConfig, out: Writer) -> int:
    d = cfg.d
    geo = BlockGeometry(cfg.params(), _kmax(cfg))
    out.csv("boundary.csv", ["l", "n_l"], [[l, geo.n(l)] for l in range(max(geo.kmax) + 1)])
    rows = []
    for k in geo.all_blocks():
        b = geo.block(k)
        rows.append(list(k) + list(b.B.lo) + list(b.B.hi) + list(b.H.hi)
                    + [b.B.volume, b.H.volume, b.I_volume, geo.is_good(k)])
    out.csv("blocks.csv", index_columns("k", d) + index_columns("N_k-1", d) + index_columns("N_k", d)
            + index_columns("H_k_hi", d) + ["|B_k|", "|H_k|", "|I_k|", "good"], rows)
    out.csv("good_set.csv", index_columns("i", d), [list(i) for i in geo.good_set])
    limit = cfg.experiment["psi_limit"]
    psi = geo.psi(limit=limit) if d >= 2 else geo.psi(m_max=limit)
    out.csv("psi.csv", ["m"] + index_columns("psi", d), [[m + 1] + list(i) for m, i in enumerate(psi)])
    cores, violations = [], 0
    for k in geo.good_set:
        c = geo.core(k)
        violations += len(c.violations)
        cores.append(list(k) + list(c.M) + [c.R.volume, len(c.L_k), "; ".join(c.violations)])
    out.csv("cores.csv", index_columns("k", d) + index_columns("M_k", d) + ["|R_k|", "|L_k|", "violations"], cores)
    k_star = {m: geo.k_star(m) for m in range(2, 8)} if d >= 2 else {}
    out.json("geometry.json", {"passed": violations == 0, "kmax": list(geo.kmax),
                               "boundary": list(geo.boundary), "good_blocks": len(geo.good_set),
                               "psi_length": len(psi), "k_star": k_star, "core_violations": violations})
    print(f"{len(geo.good_set)} good blocks up to {geo.kmax}; {violations} core violations")
    return EXIT_OK if violations == 0 else EXIT_FAIL


def cmd_covariance(cfg: LabConfig, out: Writer) -> int:
    d = cfg.d
    model = cfg.covariance_model()
    exp = cfg.experiment
    out.csv("u.csv", ["n", "u(n)"], [[n, model.u(n)] for n in range(exp["u_max"] + 1)])
    sides = exp["gap_sides"]
    fit = susceptibility_gap_fit(model, sides)
    out.csv("sigma2_V.csv", ["l", "|V|", "sigma^2(V)", "sigma^2(V)/|V|", "sigma^2 - sigma^2(V)/|V|"],
            [[l, v, model.sigma2 * v - g * v, model.sigma2 - g, g] for l, v, g in zip(sides, fit.volumes, fit.gaps)])
    geo = BlockGeometry(cfg.params(), _kmax(cfg))
    good = geo.good_set
    out.csv("block_variance.csv", index_columns("k", d) + ["lambda_k^2/[k]^alpha", "tau_k^2/|I_k|", "rho(0)",
                                                          "sigma^2", "within_bounds"],
            [list(k) + [s.lambda2_ratio.ratio, s.tau2_ratio.ratio, model.rho0, model.sigma2, s.ok]
             for k in good for s in [check_block_variance(model, geo, k)]])
    pairs = list(combinations(good[:12], 2))
    rows = []
    for i, j in pairs:
        exact, expo = block_sum_covariance(model, i, j, geo)
        dist, m_ij = block_distance(i, j, geo.params)
        rows.append(list(i) + list(j) + [dist, m_ij, exact, expo])
    out.csv("block_covariance.csv", index_columns("i", d) + index_columns("j", d)
            + ["dist(H_i,H_j)", "M_ij", "E(u_i u_j)", "lam M_ij^beta"], rows)
    sandwich_ok = all(check_block_variance(model, geo, k).ok for k in good)
    out.json("covariance.json", {"passed": sandwich_ok, "model": model.to_dict(), "sigma^2": model.sigma2,
                                 "rho(0)": model.rho0, "gap_fit": {"sides": list(fit.sides),
                                                                   "slope": fit.fitted_slope,
                                                                   "target": fit.target}})
    print(f"sigma^2 = {model.sigma2!r}; gap slope {fit.fitted_slope:.4f}")
    return EXIT_OK if sandwich_ok else EXIT_FAIL


def cmd_simulate(cfg: LabConfig, out: Writer) -> int:
    model = cfg.field_model()
    extent = cfg.extent()
    rows = []
    for rep in range(cfg.experiment["replicates"]):
        s = simulate_field(model, extent, cfg.seed, rep)
        rows.append([rep, float(s.cells.mean()), float(s.cells.var()), s.grid.total(),
                     float(s.cells.min()), float(s.cells.max())])
        if cfg.experiment["dump_grid"]:
            dump_grid(os.path.join(out.dir, f"grid_{rep:04d}.bin"), s.cells)
    out.csv("simulate.csv", ["replicate", "mean(X_j)", "var(X_j)", "S_N", "min(X_j)", "max(X_j)"], rows)
    cov = model.covariance()
    vol = checked_prod(extent)
    sn = np.array([r[3] for r in rows])
    out.json("simulate.json", {"passed": True, "model": model.to_dict(), "extent": list(extent),
                               "replicates": len(rows), "sigma^2(V)/|V|": exact_sigma2(cov, Rect.from_origin(extent)) / vol,
                               "empirical var(S_N)/|V|": float(sn.var()) / vol if len(sn) > 1 else None})
    print(f"simulated {len(rows)} replicates of extent {extent}")
    return EXIT_OK


def _experiment(cfg: LabConfig):
    exp = cfg.experiment
    return run_coupling_experiment(cfg.field_model(), cfg.params(), cfg.extent(), exp["scales"],
                                   exp["replicates"], cfg.seed, exp["epsilon"], exp["calibration_replicates"],
                                   exp["mode"])


def _suite_rows(results, d):
    rows = []
    for res in results:
        for k, med in zip(res.sizes, res.statistics["median"]):
            rows.append([res.name] + list(k) + [med, res.verdict])
    return rows


def cmd_couple(cfg: LabConfig, out: Writer) -> int:
    d = cfg.d
    exp = _experiment(cfg)
    stats_rows, term_rows, prof_rows, rem_rows, scale_rows = [], [], [], [], []
    for rec in exp.records:
        for i, s in rec.stats.items():
            stats_rows.append([rec.replicate] + list(i) + [s.u, s.v, s.lambda2, s.tau2, s.w, s.xi, s.eta, s.e])
        for k, t in rec.terms.items():
            term_rows.append([rec.replicate] + list(k) + [t.T1, t.T2, t.T3, t.T4, t.T5, t.S_R, t.residual,
                                                          t.tolerance, t.identity_holds])
        p = rec.profile
        for N, S, W, g, q in zip(p.probes, p.S, p.W, p.gap, p.ratio):
            prof_rows.append([rec.replicate] + list(N) + [checked_prod(N), S, W, g, q])
        for k, rem in p.remainders.items():
            for s, (a, b) in enumerate(zip(rem["D"], rem["D_hat"])):
                rem_rows.append([rec.replicate] + list(k) + [f"D_{s + 1}", a, b])
            for J, a in rem["M"].items():
                label = "M^(" + ",".join(str(x + 1) for x in J) + ")"
                rem_rows.append([rec.replicate] + list(k) + [label, a, rem["M_hat"][J]])
        for k, vals in rec.scale_stats.items():
            scale_rows.append([rec.replicate] + list(k) + [vals[n] for n in SCALE_STATS] + [rec.e2[k]])
    out.csv("block_stats.csv", ["replicate"] + index_columns("i", d)
            + ["u_i", "v_i", "lambda_i^2", "tau_i^2", "w_i", "xi_i", "eta_i", "e_i"], stats_rows)
    out.csv("decomposition.csv", ["replicate"] + index_columns("k", d)
            + ["T1", "T2", "T3", "T4", "T5", "S(R_k)", "residual", "tolerance", "identity_holds"], term_rows)
    out.csv("profile.csv", ["replicate"] + index_columns("N", d) + ["[N]", "S_N", "W_N", "|S_N-W_N|",
                                                                    "|S_N-W_N|/[N]^(1/2-eps)"], prof_rows)
    out.csv("remainders.csv", ["replicate"] + index_columns("k", d) + ["statistic", "field", "sheet"], rem_rows)
    out.csv("scale_stats.csv", ["replicate"] + index_columns("k", d) + list(SCALE_STATS) + ["e_k^2"], scale_rows)
    failures = exp.identity_failures()
    suite = term_bound_suite(exp) if len(exp.scales) >= 3 else []
    lo, hi = cfg.experiment["profile_range"]
    profile = profile_growth_check(exp, lo, hi) if d >= 2 else None
    p = cfg.params()
    K = 0.5 * math.sqrt(2 * p.r * p.beta / (2 + p.r))
    checks = {r.name: r.to_dict() for r in suite}
    if profile is not None:
        checks[profile.name] = profile.to_dict()
    passed = not failures and all(r.passed for r in suite) and (profile is None or profile.passed)
    out.json("couple.json", {"passed": passed, "identity_failures": len(failures), "checks": checks,
                             "transform_window_K": K,
                             "median_|eta-xi|_in_window": {",".join(map(str, k)): v
                                                          for k, v in e_window_shrinkage(exp, K).items()}})
    for r in suite + ([profile] if profile else []):
        print(f"{r.verdict.upper():5s} {r.name} {r.statistics['median']}")
    print(f"decomposition identity failures: {len(failures)}")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_verify(cfg: LabConfig, out: Writer) -> int:
    exp = cfg.experiment
    model = cfg.field_model()
    seed = cfg.seed
    results = []
    checks = exp["checks"]
    if "clt" in checks:
        res = clt_rate_check(model, exp["sizes"], exp["verify_replicates"], seed)
        out.csv("verify_clt.csv", ["l", "|V|", "sigma^2(V)", "KS"],
                [[l, l**cfg.d, s, k] for l, s, k in zip(res.sizes, res.details["sigma2_V"], res.statistics["ks"])])
        results.append(res)
    if "moment" in checks:
        res = moment_bound_check(model, exp["sizes"], cfg.geometry["r"], exp["verify_replicates"], seed)
        out.csv("verify_moment.csv", ["l", "|V|", "E|S(V)|^(2+r)/|V|^(1+r/2)"],
                [[l, l**cfg.d, q] for l, q in zip(res.sizes, res.statistics["ratio"])])
        results.append(res)
    if "maximal" in checks:
        res = maximal_inequality_check(model, exp["maximal_side"], exp["x_grid"], cfg.geometry["r"],
                                       exp["maximal_replicates"], exp["anchored_side"], exp["anchored_replicates"],
                                       seed)
        out.csv("verify_maximal.csv", ["x", "P(M(V) >= x|V|^1/2)"],
                [[x, t] for x, t in zip(res.details["x_grid"], res.statistics["tail"])])
        results.append(res)
    if "lil" in checks:
        if cfg.d < 2:
            raise ConfigError("the LIL tracker needs d >= 2 for G_tau probes")
        ext = exp["lil_extent"]
        if len(ext) != cfg.d:
            ext = [ext[0]] * cfg.d
        res = lil_tracker(model, cfg.geometry["tau"], ext, exp["lil_replicates"], seed)
        out.csv("verify_lil.csv", ["replicate", "max S_N/sqrt(2[N] loglog[N])/sigma"],
                list(enumerate(res.statistics["terminal_ratio"])))
        results.append(res)
    if "terms" in checks or "profile" in checks:
        cexp = _experiment(cfg)
        if "terms" in checks:
            suite = term_bound_suite(cexp)
            out.csv("verify_terms.csv", ["statistic"] + index_columns("k", cfg.d) + ["median", "verdict"],
                    _suite_rows(suite, cfg.d))
            results.extend(suite)
        if "profile" in checks:
            lo, hi = exp["profile_range"]
            res = profile_growth_check(cexp, lo, hi)
            out.csv("verify_profile.csv", ["half", "median max |S_N-W_N|/[N]^(1/2-eps)"],
                    [["lower", res.statistics["median"][0]], ["upper", res.statistics["median"][1]]])
            results.append(res)
    summary = {}
    for r in results:
        summary.setdefault(r.lemma, {})[r.name] = r.to_dict()
    passed = all(r.passed for r in results)
    out.json("verify.json", {"passed": passed, "checks": summary})
    for r in results:
        print(f"{r.verdict.upper():13s} {r.name}")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_report(cfg: LabConfig, out: Writer) -> int:
    merged, passed = {}, True
    for path in sorted(glob.glob(os.path.join(out.dir, "*.json"))):
        name = os.path.basename(path)
        if name == "report.json":
            continue
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        data = payload.get("data", {})
        merged[name] = {"command": payload.get("command"), "seed": payload.get("seed"), "data": data}
        if data.get("passed") is False:
            passed = False
    if not merged:
        raise ConfigError(f"no JSON outputs found in {out.dir}")
    out.json("report.json", {"passed": passed, "sources": merged})
    print(f"merged {len(merged)} outputs; {'all passed' if passed else 'some checks failed'}")
    return EXIT_OK if passed else EXIT_FAIL


COMMANDS = {
    "validate-params": cmd_validate_params,
    "geometry": cmd_geometry,
    "covariance": cmd_covariance,
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "verify": cmd_verify,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        out = Writer(cfg, args.command)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, OSError, OverflowError, ValueError) as exc:
        print(f"assocsip: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "build_parser", "load_config", "read_csv"]
