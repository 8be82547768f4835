"""Command line front end: ``crt-prune <group> <command> [options]``."""

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import crtfrag, csbp, gwprune, massflow
from .errors import CrtPruneError
from .harness import SimConfig, _clean, empirical_laplace, ks_test, run_suite, write_jsonl
from .mechanism import classify, load_mechanism
from .streams import stream


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _theta_grid(text):
    """``a:b:n`` (n points from a to b) or a comma separated list."""
    if ":" in text:
        a, b, n = text.split(":")
        return np.linspace(float(a), float(b), int(n))
    return np.array(_floats(text))


def _emit(obj, fh=None):
    (fh or sys.stdout).write(json.dumps(_clean(obj), sort_keys=True) + "\n")


def _write_csv(path, header, rows):
    if path is None:
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# --------------------------------------------------------------------------
# mech


def cmd_mech_inspect(args):
    m = load_mechanism(args.mech)
    _emit({"mechanism": m.describe(), "classification": classify(m).to_json()})
    return 0


# --------------------------------------------------------------------------
# csbp


def cmd_csbp_simulate(args):
    m = load_mechanism(args.mech)
    rng = stream(args.seed, "csbp", 0)
    steps = max(1, int(math.ceil(args.tmax / args.step)))
    grid = np.linspace(0.0, args.tmax, steps + 1)
    if m.is_quadratic:
        paths = csbp.sample_quadratic_paths(m, args.x, grid, args.n, rng)
    else:
        paths = csbp.sample_general_paths(m, args.x, grid, args.n, rng, eps=args.eps)
    ext = paths.extinction_times
    out = open(args.out, "w") if args.out else sys.stdout
    for i in range(len(paths)):
        v = paths.values[i]
        _emit({"path": i, "final": v[-1], "max": v.max(),
               "extinct_at": None if np.isnan(ext[i]) else ext[i]}, out)
    if args.out:
        out.close()
    rows = [(t, v.mean(), v.std(), (v == 0).mean()) for t, v in zip(grid, paths.values.T)]
    _write_csv(args.csv, ["t", "mean", "std", "p_zero"], rows)
    return 0


# --------------------------------------------------------------------------
# mass


def cmd_mass(args):
    m = load_mechanism(args.mech)
    rng = stream(args.seed, "mass", 0)
    summary = {"command": args.mass_cmd, "mechanism": m.describe(), "n": args.n}
    rows, header = [], []
    if args.mass_cmd == "simulate":
        thetas = _theta_grid(args.theta_grid)
        tr = massflow.sample_mass_trajectories(m, args.x, thetas, args.n, rng)
        header = ["theta", "p_finite", "mean_finite", "laplace_1", "laplace_1_se"]
        for k, th in enumerate(thetas):
            fin = tr.finite[:, k]
            vals = np.where(fin, tr.values[:, k], np.inf)
            est, se = (empirical_laplace(vals, [1.0]) if fin.any() else ([math.nan], [math.nan]))
            rows.append((th, fin.mean(), np.nanmean(tr.values[fin, k]) if fin.any() else math.nan,
                         est[0], se[0]))
        summary["A_finite_fraction"] = float(np.isfinite(tr.A).mean())
    elif args.mass_cmd == "lawA":
        vals, atom = massflow.sample_A_given_sigma0(m, args.sigma0, rng, args.n)
        qs = _theta_grid(args.theta_grid)
        header = ["q", "ecdf", "reference"]
        ref = massflow.A_cdf_given_sigma0(m, args.sigma0, qs)
        v = np.where(atom, classify(m).theta_inf if atom.any() else 0.0, vals)
        rows = [(q, np.mean(v <= q), r) for q, r in zip(qs, ref)]
        stat, thr, ok = ks_test(v, lambda q: massflow.A_cdf_given_sigma0(m, args.sigma0, q))
        summary.update(sigma0=args.sigma0, atom_fraction=float(atom.mean()),
                       ks=stat, ks_threshold=thr, ks_pass=ok)
    elif args.mass_cmd in ("sigmaA", "star"):
        thetas = _theta_grid(args.theta_grid)
        lam = 1.0
        header = ["theta", "mean", "laplace_1", "laplace_1_se", "reference"]
        for th in thetas:
            if args.mass_cmd == "sigmaA":
                x = massflow.sample_sigmaA_given_A(m, th, rng, args.n, method=args.method)
                ref = massflow.sigmaA_laplace(m, th, lam)
            else:
                x = massflow.sample_sigma_star(m, th, rng, args.n, method=args.method)
                ref = massflow.sigma_star_laplace(m, th, lam)
            est, se = empirical_laplace(x, [lam])
            rows.append((th, float(np.mean(x)), est[0], se[0], ref))
        summary["reference"] = "Laplace transform at lam = 1"
    elif args.mass_cmd == "postexplosion":
        s_grid = _theta_grid(args.theta_grid)
        tr = massflow.sample_post_explosion(m, args.A, s_grid, rng, args.n)
        header = ["theta", "mean", "median"]
        rows = [(th, v.mean(), np.median(v)) for th, v in zip(tr.thetas, tr.values.T)]
        summary["A"] = args.A
    _write_csv(args.csv, header, rows)
    summary["table"] = [dict(zip(header, r)) for r in rows]
    _emit(summary)
    return 0


# --------------------------------------------------------------------------
# gw


def cmd_gw_prune(args):
    law = gwprune.offspring_law(args.law, args.param)
    rng = stream(args.seed, "gw", 0)
    rep = gwprune.special_markov_check(law, args.p, args.n, rng, depth_cap=args.depth_cap)
    if args.csv:
        theta = -math.log(args.p)
        forest = gwprune.sample_gw_forest(law, args.n, stream(args.seed, "gw", 1),
                                          depth_cap=args.depth_cap)
        sizes = gwprune.component_sizes(forest, theta)
        direct = gwprune.total_progeny(gwprune.sample_gw_forest(
            gwprune.thinned_offspring_law(law, args.p), args.n, stream(args.seed, "gw", 2),
            depth_cap=args.depth_cap))
        top = int(max(sizes.max(), direct.max())) + 1
        a = np.bincount(sizes, minlength=top)
        b = np.bincount(direct, minlength=top)
        _write_csv(args.csv, ["size", "pruned", "thinned"],
                   [(k, a[k], b[k]) for k in range(1, top) if a[k] or b[k]])
    _emit(rep.__dict__)
    return 0 if rep.passed else 1


# --------------------------------------------------------------------------
# crt


def cmd_crt_fragment(args):
    thetas = np.array(_floats(args.theta))
    F = np.array([crtfrag.coupled_fragments([args.n_grid], args.leaves, thetas,
                                            stream(args.seed, "crt", r))[0]
                  for r in range(args.trees)])
    _write_csv(args.csv, ["tree"] + [f"theta_{t:g}" for t in thetas],
               [(r, *F[r]) for r in range(args.trees)])
    report = {"n_grid": args.n_grid, "leaves": args.leaves, "trees": args.trees, "ks": []}
    for k, th in enumerate(thetas):
        stat, thr, ok = ks_test(F[:, k], lambda y: crtfrag.fragment_reference_cdf(th, y))
        report["ks"].append({"theta": th, "statistic": stat, "threshold_0.01": thr,
                             "mean": F[:, k].mean()})
    _emit(report)
    return 0


# --------------------------------------------------------------------------
# validate


def cmd_validate(args):
    cfg = SimConfig(master_seed=args.seed, replicates=args.n, workers=args.workers,
                    mech_path=args.mech, crt_trees=args.crt_trees,
                    crt_grid=args.crt_grid, crt_leaves=args.crt_leaves)
    reports = run_suite(args.suite, cfg)
    if args.out:
        with open(args.out, "w") as fh:
            write_jsonl(reports, fh)
    else:
        write_jsonl(reports, sys.stdout)
    if args.csv_dir:
        os.makedirs(args.csv_dir, exist_ok=True)
        for r in reports:
            rows = [(k, v) for k, v in _clean({**r.reference_values, **r.details}).items()]
            rows += [("statistic", r.statistic), ("threshold", r.threshold), ("passed", r.passed)]
            _write_csv(os.path.join(args.csv_dir, f"{r.test_id}.csv"), ["field", "value"], rows)
    failed = [r.test_id for r in reports if not r.passed]
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
    return 0 if not failed else 1


def build_parser():
    p = argparse.ArgumentParser(prog="crt-prune", description=__doc__)
    sub = p.add_subparsers(dest="group", required=True)

    mech = sub.add_parser("mech").add_subparsers(dest="cmd", required=True)
    q = mech.add_parser("inspect", help="print the classification as JSON")
    q.add_argument("mech", help="mechanism file or preset name")
    q.set_defaults(func=cmd_mech_inspect)

    cs = sub.add_parser("csbp").add_subparsers(dest="cmd", required=True)
    q = cs.add_parser("simulate")
    q.add_argument("--mech", default="quadratic")
    q.add_argument("--x", type=float, default=1.0)
    q.add_argument("--tmax", type=float, default=1.0)
    q.add_argument("--step", type=float, default=0.01)
    q.add_argument("--n", type=int, default=1000)
    q.add_argument("--eps", type=float, default=csbp.DEFAULT_EPS)
    q.add_argument("--seed", type=int, default=42)
    q.add_argument("--out", help="JSON-lines path summaries (default stdout)")
    q.add_argument("--csv", help="marginal statistics per grid time")
    q.set_defaults(func=cmd_csbp_simulate)

    ms = sub.add_parser("mass").add_subparsers(dest="mass_cmd", required=True)
    for name in ("simulate", "lawA", "sigmaA", "star", "postexplosion"):
        q = ms.add_parser(name)
        q.add_argument("--mech", default="quadratic")
        q.add_argument("--n", type=int, default=10000)
        q.add_argument("--seed", type=int, default=42)
        q.add_argument("--csv")
        default = {"simulate": "-1:1:9", "lawA": "-2:0:21", "sigmaA": "-2:-0.5:4",
                   "star": "0.5:2:4", "postexplosion": "0:2:5"}[name]
        q.add_argument("--theta-grid", default=default,
                       help="a:b:n or a comma separated list")
        if name == "simulate":
            q.add_argument("--x", type=float, default=1.0)
        if name == "lawA":
            q.add_argument("--sigma0", type=float, default=1.0)
        if name in ("sigmaA", "star"):
            q.add_argument("--method", choices=("auto", "exact", "inversion"), default="auto")
        if name == "postexplosion":
            q.add_argument("--A", type=float, default=-1.0)
        q.set_defaults(func=cmd_mass)

    gw = sub.add_parser("gw").add_subparsers(dest="cmd", required=True)
    q = gw.add_parser("prune")
    q.add_argument("--law", default="binary-critical",
                   help="binary-critical, geometric or comma separated probabilities")
    q.add_argument("--param", type=float, default=None, help="geometric parameter")
    q.add_argument("--p", type=float, default=0.8)
    q.add_argument("--n", type=int, default=100000)
    q.add_argument("--depth-cap", type=int, default=gwprune.DEPTH_CAP)
    q.add_argument("--seed", type=int, default=42)
    q.add_argument("--csv", help="size histogram of pruned and thinned trees")
    q.set_defaults(func=cmd_gw_prune)

    cr = sub.add_parser("crt").add_subparsers(dest="cmd", required=True)
    q = cr.add_parser("fragment")
    q.add_argument("--n-grid", type=int, default=2 ** 14)
    q.add_argument("--leaves", type=int, default=1000)
    q.add_argument("--trees", type=int, default=2000)
    q.add_argument("--theta", default="0.5,1,2")
    q.add_argument("--seed", type=int, default=42)
    q.add_argument("--csv", help="per-tree fragment fractions")
    q.set_defaults(func=cmd_crt_fragment)

    q = sub.add_parser("validate")
    q.add_argument("--suite", default="all")
    q.add_argument("--mech", default=None)
    q.add_argument("--seed", type=int, default=42)
    q.add_argument("--n", type=int, default=100000)
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("--crt-trees", type=int, default=2000)
    q.add_argument("--crt-grid", type=int, default=2 ** 14)
    q.add_argument("--crt-leaves", type=int, default=1000)
    q.add_argument("--out")
    q.add_argument("--csv-dir")
    q.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "law", None) and "," in args.law:
        args.law = _floats(args.law)
    try:
        return args.func(args)
    except CrtPruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
