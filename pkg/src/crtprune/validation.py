"""Validation checks behind ``run_suite``; one function per acceptance item.

Every check takes a SimConfig and returns ValidationReport objects whose
``reference_values`` carry the closed-form numbers used.
"""

import math

import numpy as np
from scipy import stats

from . import crtfrag, csbp, gwprune, massflow
from .harness import (ValidationReport, ks_2samp_test, ks_statistic, ks_test,
                      mean_se, pmap, se_check)
from .mechanism import (bar_theta, classify, eval_psi, exp_jump_mechanism,
                        load_mechanism, log_mechanism, psi_inverse,
                        quadratic_mechanism, shift, stable_mechanism)
from .streams import batch_sizes, stream

# Theta = [theta_inf, inf) or (theta_inf, inf) for the four reference examples
THETA_TABLE = {
    "quadratic": (-math.inf, False),
    "stable": (0.0, True),
    "log": (-math.exp(-1.0), True),
    "exp-jumps": (-1.0, False),
}


def _examples():
    return {
        "quadratic": quadratic_mechanism(0.5),
        "stable": stable_mechanism(1.0, 1.5),
        "log": log_mechanism(),
        "exp-jumps": exp_jump_mechanism(),
    }


def _theta_points(lo, included, n=50):
    if lo == -math.inf:
        return np.linspace(-3.0, 3.0, n)
    start = lo if included else lo + 1e-2 * max(1.0, abs(lo))
    return np.linspace(start, 3.0, n)


# --------------------------------------------------------------------------
# criterion 1


def check_mechanism_algebra(cfg):
    out = []
    for name, m in _examples().items():
        lo, included = THETA_TABLE[name]
        c = classify(m)
        ths = _theta_points(lo, included)
        res = 0.0
        ident = True
        for th in ths:
            tb = bar_theta(m, float(th))
            res = max(res, abs(eval_psi(m, tb) - eval_psi(m, float(th))))
            if th >= 0:
                ident &= tb == th
        got_lo = c.theta_inf if c.theta_inf is not None else math.nan
        lo_ok = (got_lo == lo) if lo == -math.inf else abs(got_lo - lo) <= cfg.residual_tol
        inc_ok = bool(c.theta_inf_in_theta) == included
        passed = res <= cfg.residual_tol and ident and lo_ok and inc_ok
        out.append(ValidationReport(
            f"mechanism-algebra-{name}", 1, "psi(theta_bar) = psi(theta); Theta endpoints",
            res, cfg.residual_tol, passed, ths.size,
            {"theta_inf": lo, "theta_inf_in_Theta": included},
            {"theta_inf": got_lo, "theta_inf_in_Theta": c.theta_inf_in_theta,
             "identity_on_nonnegative": bool(ident)}))
    if cfg.mech_path:
        out.append(_check_mech_file(cfg))
    return out


def _check_mech_file(cfg):
    m = load_mechanism(cfg.mech_path)
    c = classify(m)
    if c.criticality == "critical":
        lo = c.theta_inf if c.theta_inf is not None else 0.0
        ths = _theta_points(lo, bool(c.theta_inf_in_domain))
        res = max(abs(eval_psi(m, bar_theta(m, float(t))) - eval_psi(m, float(t))) for t in ths)
        ref = "psi(theta_bar) = psi(theta)"
    else:
        lams = np.linspace(max(c.qstar, 0.0) + 0.1, 5.0, 50)
        res = max(abs(psi_inverse(m, eval_psi(m, float(l))) - l) for l in lams)
        ref = "psi^{-1}(psi(lam)) = lam"
    return ValidationReport("mechanism-file", 1, ref, res, cfg.residual_tol,
                            res <= cfg.residual_tol, 50, {},
                            {"path": str(cfg.mech_path), "classification": c.to_json()})


# --------------------------------------------------------------------------
# criterion 2


def check_u_closed_forms(cfg):
    a_grid = np.logspace(-2, 1, 20)
    lam_grid = np.logspace(-2, 2, 20)
    beta = 0.5
    mq = quadratic_mechanism(beta)
    ms = stable_mechanism(1.0, 1.5)
    forms = {
        "quadratic": (mq, lambda a, l: l / (1 + beta * a * l)),
        "stable": (ms, lambda a, l: (l ** -0.5 + 0.5 * a) ** -2.0),
    }
    out = []
    tol = 1e-8
    for name, (m, exact) in forms.items():
        err = 0.0
        for a in a_grid:
            for l in lam_grid:
                ref = exact(a, l)
                err = max(err, abs(csbp.solve_u(m, a, l) - ref) / ref)
        out.append(ValidationReport(
            f"u-closed-form-{name}", 2, "int_u^lam dr / psi(r) = a",
            err, tol, err <= tol, a_grid.size * lam_grid.size,
            {"formula": "lam/(1+beta a lam)" if name == "quadratic"
             else "(lam^-1/2 + a/2)^-2", "beta": beta}))
        flow = 0.0
        for a, b, l in zip(a_grid[::2], a_grid[1::2][::-1], lam_grid[::2]):
            lhs = csbp.solve_u(m, a + b, l)
            rhs = csbp.solve_u(m, a, csbp.solve_u(m, b, l))
            flow = max(flow, abs(lhs - rhs) / lhs)
        out.append(ValidationReport(
            f"u-flow-{name}", 2, "u(a+b, lam) = u(a, u(b, lam))",
            flow, tol, flow <= tol, 10, {}))
    return out


# --------------------------------------------------------------------------
# criterion 3


def _batch_quadratic_Z(args):
    seed, idx, size, beta, x, t, lams = args
    z = csbp.sample_quadratic_transition(beta, x, t, stream(seed, "csbp", idx), size=size)
    e = np.exp(-np.outer(lams, z))
    return e.sum(1), (e * e).sum(1), float((z == 0).sum())


def _sum_batches(parts, n):
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s1 / n
    var = (s2 - n * mean * mean) / (n - 1)
    return mean, np.sqrt(np.maximum(var, 0) / n)


def check_quadratic_sampler(cfg):
    beta, x, t = 1.0, 1.0, 1.0
    lams = np.array([0.1, 1.0, 10.0])
    n = cfg.replicates
    jobs = [(cfg.master_seed, 30000 + i, s, beta, x, t, lams)
            for i, s in enumerate(batch_sizes(n, cfg.batch))]
    parts = pmap(_batch_quadratic_Z, jobs, cfg.workers)
    est, se = _sum_batches(parts, n)
    out = []
    for l, e, s in zip(lams, est, se):
        ref = math.exp(-x * l / (1 + beta * t * l))
        z, ok = se_check(e, s, ref, cfg.se_mult)
        out.append(ValidationReport(
            f"quadratic-laplace-lam{l:g}", 3, "exp(-x u(a, lam)), u = lam/(1+beta a lam)",
            z, cfg.se_mult, ok, n, {"value": ref, "beta": beta, "x": x, "a": t, "lam": l},
            {"estimate": e, "se": s}))
    p0 = sum(p[2] for p in parts) / n
    se0 = math.sqrt(p0 * (1 - p0) / (n - 1))
    ref = math.exp(-x / (beta * t))
    z, ok = se_check(p0, se0, ref, cfg.se_mult)
    out.append(ValidationReport(
        "quadratic-extinction", 3, "P(Z_a = 0) = exp(-x / (beta a))", z, cfg.se_mult, ok, n,
        {"value": ref}, {"estimate": p0, "se": se0}))
    return out


# --------------------------------------------------------------------------
# criterion 4

MART_GRID = np.linspace(0.0, 1.0, 501)


def _martingale_cases():
    mq = quadratic_mechanism(1.0)
    mi = exp_jump_mechanism()
    return {
        "quadratic": (mq, [0.5, classify(shift(mq, -0.5)).q0]),
        "exp-jumps": (mi, [0.5, classify(shift(mi, -0.5)).q0]),
    }


def _batch_martingale(args):
    seed, idx, size, name = args
    m, qs = _martingale_cases()[name]
    rng = stream(seed, "csbp", idx)
    if m.is_quadratic:
        paths = csbp.sample_quadratic_paths(m, 1.0, MART_GRID, size, rng)
    else:
        paths = csbp.sample_general_paths(m, 1.0, MART_GRID, size, rng)
    w = np.array([csbp.girsanov_weights(paths, m, q)[0] for q in qs])
    return w.sum(1), (w * w).sum(1)


def check_martingale(cfg):
    out = []
    n = cfg.replicates
    for k, (name, (m, qs)) in enumerate(_martingale_cases().items()):
        jobs = [(cfg.master_seed, 40000 + 1000 * k + i, s, name)
                for i, s in enumerate(batch_sizes(n, cfg.batch))]
        est, se = _sum_batches(pmap(_batch_martingale, jobs, cfg.workers), n)
        for q, e, s in zip(qs, est, se):
            z, ok = se_check(e, s, 1.0, cfg.se_mult)
            out.append(ValidationReport(
                f"martingale-{name}-q{q:g}", 4, "E[M_a^{psi,q}] = 1", z, cfg.se_mult, ok, n,
                {"value": 1.0, "q": q, "a": 1.0, "x": 1.0, "step": float(MART_GRID[1])},
                {"estimate": e, "se": s,
                 "paths": "exact" if m.is_quadratic else "euler"}))
    return out


# --------------------------------------------------------------------------
# criterion 5


def _batch_sigma0(args):
    seed, idx, size, beta, x, lams = args
    s = massflow.sample_sigma0(quadratic_mechanism(beta), x, stream(seed, "mass", idx), size)
    e = np.exp(-np.outer(lams, s))
    return e.sum(1), (e * e).sum(1)


def check_total_mass(cfg):
    beta, x = 0.5, 1.0
    lams = np.array([0.1, 1.0, 10.0])
    n = cfg.replicates
    jobs = [(cfg.master_seed, 50000 + i, s, beta, x, lams)
            for i, s in enumerate(batch_sizes(n, cfg.batch))]
    est, se = _sum_batches(pmap(_batch_sigma0, jobs, cfg.workers), n)
    out = []
    for l, e, s in zip(lams, est, se):
        ref = math.exp(-x * math.sqrt(l / beta))
        z, ok = se_check(e, s, ref, cfg.se_mult)
        out.append(ValidationReport(
            f"total-mass-lam{l:g}", 5, "E[exp(-lam sigma)] = exp(-x sqrt(lam / beta))",
            z, cfg.se_mult, ok, n, {"value": ref, "beta": beta, "x": x, "lam": l},
            {"estimate": e, "se": s}))
    return out


# --------------------------------------------------------------------------
# criterion 6


def check_law_of_A(cfg):
    out = []
    n = cfg.small
    for k, (name, m) in enumerate([("quadratic", quadratic_mechanism(0.5)),
                                   ("exp-jumps", exp_jump_mechanism())]):
        for j, s0 in enumerate([0.5, 1.0, 2.0]):
            rng = stream(cfg.master_seed, "mass", 60000 + 10 * k + j)
            vals, atom = massflow.sample_A_given_sigma0(m, s0, rng, n)
            full = np.where(atom, classify(m).theta_inf if atom.any() else 0.0, vals)
            stat, thr, ok = ks_test(full, lambda q: massflow.A_cdf_given_sigma0(m, s0, q),
                                    cfg.ks_coef)
            out.append(ValidationReport(
                f"law-A-{name}-sigma0_{s0:g}", 6,
                "P(A <= q | sigma_0) = exp(-sigma_0 psi(q_bar - q))", stat, thr, ok, n,
                {"sigma0": s0, "cdf_at_-0.5": float(massflow.A_cdf_given_sigma0(m, s0, -0.5)[0])}))
    return out


# --------------------------------------------------------------------------
# criteria 7 to 9

THETAS_NEG = (-0.5, -1.0, -2.0)
THETAS_POS = (0.5, 1.0, 2.0)


def check_sigmaA(cfg):
    beta = 0.5
    m = quadratic_mechanism(beta)
    out = []
    n = cfg.small
    for k, th in enumerate(THETAS_NEG):
        ref = stats.gamma(0.5, scale=1.0 / (beta * th * th))
        for j, method in enumerate(("exact", "inversion")):
            rng = stream(cfg.master_seed, "mass", 70000 + 10 * k + j)
            x = massflow.sample_sigmaA_given_A(m, th, rng, n, method=method)
            stat, thr, ok = ks_test(x, ref.cdf, cfg.ks_coef)
            out.append(ValidationReport(
                f"sigmaA-gamma-theta{th:g}-{method}", 7,
                "sigma_A | A = theta ~ Gamma(1/2, rate beta theta^2)", stat, thr, ok, n,
                {"shape": 0.5, "rate": beta * th * th, "median": float(ref.median())}))
    return out


def check_sigma_star_equality(cfg):
    beta = 0.5
    m = quadratic_mechanism(beta)
    out = []
    n = cfg.small
    for k, th in enumerate(THETAS_NEG):
        tb = bar_theta(m, th)
        a = massflow.sample_sigma_star(m, tb, stream(cfg.master_seed, "mass", 80000 + 10 * k), n)
        b = massflow.sample_sigmaA_given_A(m, th, stream(cfg.master_seed, "mass", 80001 + 10 * k),
                                           n, method="inversion")
        stat, thr, ok = ks_2samp_test(a, b, cfg.ks_coef)
        out.append(ValidationReport(
            f"sigma-star-vs-sigmaA-theta{th:g}", 8,
            "sigma*_{theta_bar} has the law of sigma_A given A = theta", stat, thr, ok, n,
            {"theta_bar": tb}, {"sigma_star": "exact", "sigma_A": "inversion"}))
    return out


NOYAU_POINTS = [(-1.0, 0.0, 0.5, 1.0, 1.0), (-1.0, 0.5, 0.5, 1.0, 1.0),
                (-0.5, 1.0, 1.0, 0.5, 2.0), (-2.0, 0.2, 2.0, 2.0, 0.5),
                (-1.0, 0.0, 1.0, 5.0, 5.0)]


def check_star_and_post_explosion(cfg):
    beta = 0.5
    m = quadratic_mechanism(beta)
    out = []
    n = cfg.small
    for k, th in enumerate(THETAS_POS):
        x = 2 * beta * massflow.sample_sigma_star(
            m, th, stream(cfg.master_seed, "mass", 90000 + k), n, method="inversion")
        cdf = lambda y, th=th: 1.0 - massflow.tau_cdf(th, 1.0 / np.maximum(y, 1e-300))
        stat, thr, ok = ks_test(x, cdf, cfg.ks_coef)
        out.append(ValidationReport(
            f"sigma-star-stable-theta{th:g}", 9, "2 beta sigma*_theta ~ 1 / tau_theta",
            stat, thr, ok, n, {"theta": th, "cdf_at_1": float(cdf(1.0))},
            {"sampler": "inversion"}))
    N = cfg.replicates
    for k, (A, s, t, lam, kap) in enumerate(NOYAU_POINTS):
        rng = stream(cfg.master_seed, "mass", 91000 + k)
        tr = massflow.sample_post_explosion(m, A, [s, s + t], rng, N)
        est, se = mean_se(np.exp(-lam * tr.values[:, 0] - kap * tr.values[:, 1]))
        ref = massflow.noyau_laplace(beta, A, s, t, lam, kap)
        z, ok = se_check(est, se, ref, cfg.se_mult)
        out.append(ValidationReport(
            f"post-explosion-{k}", 9,
            "N[exp(-lam sigma_{A+s} - kappa sigma_{A+s+t}) | A]", z, cfg.se_mult, ok, N,
            {"value": ref, "A": A, "s": s, "t": t, "lam": lam, "kappa": kap},
            {"estimate": est, "se": se}))
    return out


# --------------------------------------------------------------------------
# criterion 10

CRT_THETAS = np.array([0.5, 1.0, 2.0])
CRT_KS_MAX = 0.05


def _batch_crt(args):
    seed, lo, hi, grids, m = args
    return np.array([crtfrag.coupled_fragments(grids, m, CRT_THETAS, stream(seed, "crt", r))
                     for r in range(lo, hi)])


def crt_fractions(cfg, grids):
    """Root-fragment fractions, shape (trees, len(grids), len(CRT_THETAS))."""
    chunk = 100
    jobs = [(cfg.master_seed, lo, min(lo + chunk, cfg.crt_trees), list(grids), cfg.crt_leaves)
            for lo in range(0, cfg.crt_trees, chunk)]
    return np.concatenate(pmap(_batch_crt, jobs, cfg.workers))


def check_fragmentation(cfg):
    grids = [cfg.crt_grid, 2 * cfg.crt_grid]
    F = crt_fractions(cfg, grids)
    out = []
    n = F.shape[0]
    for k, th in enumerate(CRT_THETAS):
        cdf = lambda y, th=th: crtfrag.fragment_reference_cdf(th, y)
        ks = [ks_statistic(F[:, g, k], cdf) for g in range(len(grids))]
        out.append(ValidationReport(
            f"fragment-ks-theta{th:g}", 10, "root fragment ~ 1 / (1 + tau_theta)",
            ks[0], CRT_KS_MAX, ks[0] <= CRT_KS_MAX, n,
            {"theta": th, "cdf_at_0.5": float(cdf(0.5))},
            {"n_grid": grids[0], "leaves": cfg.crt_leaves}))
        out.append(ValidationReport(
            f"fragment-ks-decrease-theta{th:g}", 10, "KS(2n) < KS(n)",
            ks[1] - ks[0], 0.0, ks[1] < ks[0], n, {"theta": th},
            {"ks_n": ks[0], "ks_2n": ks[1], "grids": grids}))
        # law of the leaf fraction itself: Binomial(m, 1/(1+tau)) mixture
        ref = crtfrag.fraction_reference_cdf(th, cfg.crt_leaves)
        d = crtfrag.ks_discrete(F[:, 0, k], ref)
        thr = cfg.ks_coef / math.sqrt(n)
        out.append(ValidationReport(
            f"fragment-count-law-theta{th:g}", 10,
            "connected leaves ~ Binomial(m, 1 / (1 + tau_theta))", d, thr, d <= thr, n,
            {"theta": th, "P(K=0)": float(ref[0])},
            {"supplementary": True, "n_grid": grids[0]}))
    return out


# --------------------------------------------------------------------------
# criterion 11


def check_special_markov(cfg):
    out = []
    rng = stream(cfg.master_seed, "gw", 110000)
    rep = gwprune.special_markov_check("binary-critical", 0.8, cfg.replicates, rng,
                                       alpha=cfg.chi2_alpha)
    out.append(ValidationReport(
        "special-markov-chi2-binary", 11, "pruned GW = GW with f(1 - p + p s)",
        rep.p_value, cfg.chi2_alpha, rep.p_value > cfg.chi2_alpha, rep.n,
        {"thinned_law": gwprune.thinned_offspring_law("binary-critical", 0.8).tolist()},
        {"chi2": rep.chi2, "dof": rep.dof, "p": 0.8}))
    for name, law, p in [("binary", "binary-critical", 0.8), ("trinomial", [0.3, 0.4, 0.3], 0.6)]:
        tv, count = gwprune.enumeration_tv(gwprune.offspring_law(law), p)
        out.append(ValidationReport(
            f"special-markov-tv-{name}", 11, "exact depth <= 3 enumeration",
            tv, 1e-12, tv <= 1e-12, count,
            {"law": gwprune.offspring_law(law).tolist(), "p": p}))
    return out


SUITES = {
    "mechanism": [check_mechanism_algebra],
    "csbp": [check_u_closed_forms, check_quadratic_sampler, check_martingale],
    "mass": [check_total_mass, check_law_of_A, check_sigmaA, check_sigma_star_equality,
             check_star_and_post_explosion],
    "gw": [check_special_markov],
    "crt": [check_fragmentation],
}
