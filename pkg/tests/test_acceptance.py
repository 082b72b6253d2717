"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS criterion N`` or ``FAIL criterion N`` line
with the measured quantities before asserting.
"""

import io
import time

import numpy as np
import pytest

from clusterkit import simulate
from clusterkit.bootstrap import BootstrapPlan, quantile_ranks, wild_bootstrap
from clusterkit.cli import run_command
from clusterkit.crve import cv1, cv2, cv3, hc
from clusterkit.design import build_blocks, from_arrays
from clusterkit.diagnostics import partial_leverage_profile
from clusterkit.errors import TooFewAssignments
from clusterkit.estimator import jackknife_estimates, ols_fit, restricted_fit, Restriction
from clusterkit.simulate import McDesign, PlaceboDesign, PlaceboSampler, run_monte_carlo, run_placebo_study
from clusterkit.svtest import nest, score_variance_test
from clusterkit.twoway import one_way, robust_max_se, twoway_variance

from conftest import ds1


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return emit


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def small_instance(rng, G_max=8, size_max=6, k_max=4):
    """Random design where every leave-one-cluster-out fit is identified."""
    while True:
        G = int(rng.integers(3, G_max + 1))
        k = int(rng.integers(1, k_max + 1))
        sizes = rng.integers(1, size_max + 1, size=G)
        cid = np.repeat(np.arange(G), sizes)
        N = cid.size
        X = np.column_stack([np.ones(N)] + [rng.normal(size=N) for _ in range(k - 1)])
        y = X @ rng.normal(size=k) + rng.normal(size=G)[cid] + rng.normal(size=N)
        ok = np.linalg.matrix_rank(X) == k
        for g in range(G):
            keep = cid != g
            ok = ok and np.linalg.matrix_rank(X[keep]) == k
            Mgg = np.eye(sizes[g]) - X[cid == g] @ np.linalg.pinv(X.T @ X) @ X[cid == g].T
            ok = ok and np.linalg.cond(Mgg) < 1e8
        if ok:
            return from_arrays(y, X, cid)


def test_criterion_1_hc_reduction(report):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    N, k = 60, 4
    X = np.column_stack([np.ones(N), rng.normal(size=(N, k - 1))])
    y = X @ rng.normal(size=k) + rng.normal(size=N) * (1 + np.abs(X[:, 1]))
    d = from_arrays(y, X, np.arange(N))
    b = build_blocks(d)
    f = ols_fit(b)

    # dense textbook formulas
    A = np.linalg.inv(X.T @ X)
    u = y - X @ (A @ X.T @ y)
    h = np.einsum("ij,jk,ik->i", X, A, X)

    def sand(w, scale):
        s = X * w[:, None]
        return scale * A @ s.T @ s @ A

    direct = {"HC1": sand(u, N / (N - k)), "HC2": sand(u / np.sqrt(1 - h), 1.0),
              "HC3": sand(u / (1 - h), (N - 1) / N)}
    pairs = {"HC1": cv1(b, f).matrix, "HC2": cv2(b, f).matrix,
             "HC3": cv3(jackknife_estimates(b, f), f).matrix}
    errs = {kind: max(rel_err(pairs[kind], direct[kind]), rel_err(hc(d, f, kind).matrix, direct[kind]))
            for kind in direct}
    elapsed = time.perf_counter() - start
    worst = max(errs.values())
    report(1, worst < 1e-10 and elapsed < 1.0,
           f"max rel error {worst:.2e} (CV1/2/3 vs HC1/2/3), {elapsed:.3f}s")


def test_criterion_2_jackknife_identity(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        d = small_instance(rng)
        X, y, cid = d.X, d.y, d.cluster_id
        A = np.linalg.inv(X.T @ X)
        beta = A @ X.T @ y
        u = y - X @ beta
        M = np.eye(d.N) - X @ A @ X.T
        b = build_blocks(d)
        jk = jackknife_estimates(b, ols_fit(b))
        for g in range(d.G):
            r = cid == g
            beta_g = np.linalg.lstsq(X[~r], y[~r], rcond=None)[0]
            lhs = X.T @ X @ (beta - beta_g)
            rhs = X[r].T @ np.linalg.solve(M[np.ix_(r, r)], u[r])
            scale = max(np.abs(rhs).max(), 1e-12)
            worst = max(worst, np.abs(lhs - rhs).max() / scale,
                        np.abs(jk.mod_scores[g] - rhs).max() / scale)
    elapsed = time.perf_counter() - start
    report(2, worst < 1e-8 and elapsed < 5.0,
           f"max rel error {worst:.2e} over 100 instances, {elapsed:.2f}s")


def test_criterion_3_all_plus_replicate(report):
    rng = np.random.default_rng(3)
    worst_r, worst_u = 0.0, 0.0
    wcu_s_gap = []
    for _ in range(50):
        d = small_instance(rng, G_max=8, k_max=3)
        if d.k < 2:
            continue
        b = build_blocks(d)
        f = ols_fit(b)
        beta0 = float(rng.normal())
        # row 0 of the enumeration is the all-plus vector
        out = wild_bootstrap(BootstrapPlan("WCR-C", enumerate=True), b, f, 1, beta0=beta0, ci=False)
        worst_r = max(worst_r, abs(out.t_star[0] - out.t_obs) / abs(out.t_obs))
        out = wild_bootstrap(BootstrapPlan("WCU-C", enumerate=True), b, f, 1, ci=False)
        worst_u = max(worst_u, abs(out.t_star[0]))
        # With jackknife scores the all-plus replicate moves by the sum of
        # the omit-one changes, which is not zero in general.
        jk = jackknife_estimates(b, f)
        wcu_s_gap.append(abs(np.sum(f.beta_hat[1] - jk.beta_g[:, 1])))
    ok = worst_r < 1e-10 and worst_u < 1e-8
    report(3, ok, f"WCR-C max rel error {worst_r:.2e}, WCU-C max |t*| {worst_u:.2e}; "
                  f"WCU-S all-plus numerator is sum of omit-one changes (median {np.median(wcu_s_gap):.3g})")


def test_criterion_4_enumeration_vs_sampling(report):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    G = 10
    sizes = rng.integers(5, 15, size=G)
    cid = np.repeat(np.arange(G), sizes)
    N = cid.size
    X = np.column_stack([np.ones(N), rng.normal(size=N) + rng.normal(size=G)[cid]])
    y = X @ np.array([1.0, 0.25]) + rng.normal(size=G)[cid] + rng.normal(size=N)
    d = from_arrays(y, X, cid)
    b = build_blocks(d)
    f = ols_fit(b)
    rf = restricted_fit(b, Restriction(1, 0.0))
    full = wild_bootstrap(BootstrapPlan("WCR-C", enumerate=True), b, f, 1, rf=rf, ci=False)
    B = 10 ** 6
    samp = wild_bootstrap(BootstrapPlan("WCR-C", B=B, seed=4), b, f, 1, rf=rf, ci=False)
    p, q = full.p_sym, samp.p_sym
    tol = 3 * np.sqrt(p * (1 - p) / B)
    elapsed = time.perf_counter() - start
    report(4, abs(p - q) <= tol and elapsed < 60 and 0 < p < 1,
           f"enumerated p {p:.6f}, sampled p {q:.6f}, |diff| {abs(p - q):.2e} <= {tol:.2e}, {elapsed:.1f}s")


def test_criterion_5_quantile_ranks(report):
    lo, hi = quantile_ranks(999, 0.05)
    report(5, (lo, hi) == (25, 975), f"B=999 alpha=0.05 order statistics {lo} and {hi}")


def lognormal_design(seed=12, G=12, treated=4):
    g = np.random.default_rng(seed)
    sizes = np.maximum(2, np.round(np.exp(g.normal(3.0, 1.0, G)))).astype(int)
    cid = np.repeat(np.arange(G), sizes)
    T = (cid < treated).astype(float)
    x = g.normal(size=cid.size)
    X = np.column_stack([np.ones(cid.size), T, x])
    y = X @ np.array([1.0, 0.0, 0.5]) + g.normal(size=cid.size)
    return from_arrays(y, X, cid, column_names=["_cons", "treat", "x"])


@pytest.mark.slow
def test_criterion_6_size_ordering(report):
    start = time.perf_counter()
    d = lognormal_design()
    rep = run_monte_carlo(d, McDesign(coef=1, rhos=(0.0, 0.25), R=10000,
                                      methods=("cv1", "cv3", "wcr-s"), seed=6))
    ok = True
    parts = []
    for point in ("rho=0", "rho=0.25"):
        c1, c3, ws = (rep.rejection(m, point) for m in ("cv1", "cv3", "wcr-s"))
        ok = ok and c1 > c3 and c1 > 0.07 and 0.03 <= ws <= 0.08
        parts.append(f"{point}: cv1 {c1:.4f} cv3 {c3:.4f} wcr-s {ws:.4f}")
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 600
    report(6, ok, f"sizes {d.sizes.tolist()}; " + "; ".join(parts) + f"; {elapsed:.0f}s")


def fine_design(gen, G=20, M=4, n=4, fine_rho=0.3):
    H = G * M
    fine = np.repeat(np.arange(H), n)
    coarse = fine // M
    N = fine.size
    x = gen.normal(size=N) + gen.normal(size=H)[fine]
    X = np.column_stack([np.ones(N), x, gen.normal(size=N)])
    u = np.sqrt(fine_rho) * gen.normal(size=H)[fine] + np.sqrt(1 - fine_rho) * gen.normal(size=N)
    y = X @ np.array([1.0, 0.5, -0.2]) + u
    d = from_arrays(y, X, coarse, cluster2=fine)
    return d, nest(d.cluster_id, d.cluster_id2)


@pytest.mark.slow
def test_criterion_7_score_variance_size(report):
    start = time.perf_counter()
    R = 5000
    rej = 0
    for r in range(R):
        d, ns = fine_design(np.random.default_rng([7, r]))
        rej += score_variance_test(d, ns, 1).p_asymptotic < 0.05
    freq = rej / R
    # one fine cluster per coarse cluster
    d, _ = fine_design(np.random.default_rng(7), G=30, M=1)
    degenerate = score_variance_test(d, nest(d.cluster_id, d.cluster_id2), 1)
    zero = degenerate.theta_hat == 0.0 and np.all(degenerate.theta_g == 0.0)
    elapsed = time.perf_counter() - start
    report(7, 0.02 <= freq <= 0.09 and zero and elapsed < 300,
           f"rejection {freq:.4f} (mc se {np.sqrt(freq * (1 - freq) / R):.4f}) at 20x4; "
           f"theta identically zero with M_g=1: {zero}; {elapsed:.0f}s")


def test_criterion_8_twoway(report):
    rng = np.random.default_rng(8)
    exact = True
    violations = 0
    for i in range(1000):
        G = int(rng.integers(3, 12))
        H = int(rng.integers(3, 9))
        N = int(rng.integers(max(G, H) + 5, 80))
        c1 = rng.integers(0, G, size=N)
        c2 = rng.integers(0, H, size=N)
        X = np.column_stack([np.ones(N), rng.normal(size=(N, 2))])
        y = X @ rng.normal(size=3) + rng.normal(size=G)[c1] + rng.normal(size=H)[c2] + rng.normal(size=N)
        if len(set(c1)) < 2 or len(set(c2)) < 2:
            continue
        d = from_arrays(y, X, c1, cluster2=c2)
        f = ols_fit(build_blocks(d))
        if i < 200:
            same = from_arrays(y, X, c1, cluster2=c1)
            fs = ols_fit(build_blocks(same))
            tw = twoway_variance(same, fs)
            exact = exact and np.array_equal(tw.combined, tw.sigma_g)
            exact = exact and np.array_equal(tw.matrix, one_way(same, fs, 1).matrix)
        res = robust_max_se(d, f, 1)
        s1 = np.sqrt(one_way(d, f, 1).matrix[1, 1])
        s2 = np.sqrt(one_way(d, f, 2).matrix[1, 1])
        violations += not (res.se >= s1 and res.se >= s2)
    report(8, exact and violations == 0,
           f"coincident partitions exact: {exact}; max-rule violations {violations} of 1000")


def test_criterion_9_ds1_diagnostics(report):
    p = partial_leverage_profile(ds1(), 1)
    ok = (np.allclose(p.L, [0.3571, 0.1429, 0.5000], atol=1e-4) and abs(p.V_s - 0.2908) <= 1e-4
          and abs(p.G_star0 - 2.324) <= 1e-3)
    report(9, ok, f"L {np.round(p.L, 4).tolist()}, V_s {p.V_s:.4f}, G*(0) {p.G_star0:.4f}")


def write_fine_csv(path):
    gen = np.random.default_rng(10)
    lines = ["state,county,treat,x,y"]
    for g in range(14):
        for h in range(3):
            v = gen.normal()
            for _ in range(int(gen.integers(2, 6))):
                x = gen.normal()
                lines.append(f"s{g},s{g}c{h},{int(g < 5)},{x!r},{1 + 0.3 * x + v + gen.normal()!r}")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.mark.slow
def test_criterion_10_determinism(report, tmp_path):
    data = write_fine_csv(tmp_path / "fine.csv")
    base = ["--y", "y", "--x", "treat,x", "--cluster", "state", "--treatment", "treat",
            "--seed", "11", "--format", "json", data]
    commands = {
        "boot": ["boot", "--B", "4999", "--variant", "wcr-s"],
        "boot-pairs": ["boot", "--B", "1999", "--variant", "pairs"],
        "svtest": ["svtest", "--fine", "county", "--B", "999"],
        "mc": ["mc", "--R", "60", "--rho", "0,0.2", "--methods", "cv1,cv3,wcr-c", "--boot-B", "99"],
        "placebo": ["placebo", "--R", "60", "--methods", "cv1,wcu-s", "--boot-B", "99"],
    }
    bad = []
    for name, cmd in commands.items():
        outs = set()
        for threads in ("1", "4", "16", "1"):
            out, err = io.StringIO(), io.StringIO()
            code = run_command([*cmd, *base, "--threads", threads], out=out, err=err)
            if code != 0:
                bad.append(f"{name} exit {code}: {err.getvalue().strip()}")
            outs.add(out.getvalue())
        if len(outs) != 1:
            bad.append(f"{name} differs across runs/threads")
    report(10, not bad, "; ".join(bad) or
           f"byte-identical JSON over repeated runs and threads 1/4/16 for {', '.join(commands)}")


def placebo_data(G, treated, seed=11):
    gen = np.random.default_rng(seed)
    sizes = gen.integers(3, 8, size=G)
    cid = np.repeat(np.arange(G), sizes)
    T = (cid < treated).astype(float)
    X = np.column_stack([np.ones(cid.size), T, gen.normal(size=cid.size)])
    y = X @ np.array([1.0, 0.0, 0.3]) + gen.normal(size=G)[cid] + gen.normal(size=cid.size)
    return from_arrays(y, X, cid, column_names=["_cons", "treat", "x"], treatment_col=1)


def test_criterion_11_placebo_guard(report):
    small = placebo_data(10, 1)  # 10 ways to treat one cluster, one is the actual
    refused, message = False, ""
    try:
        PlaceboSampler(small, PlaceboDesign(coef=1))
    except TooFewAssignments as exc:
        refused, message = True, str(exc)
    big = placebo_data(42, 20)
    rep = run_placebo_study(big, PlaceboDesign(coef=1, R=200, methods=("cv1",), seed=11))
    space_ok = rep.info["assignment_space"] == str(simulate.math.comb(42, 20))
    sampled = rep.info["sampling"] == "with replacement" and rep.info["R"] == 200
    ok = refused and "only 9 placebo assignments" in message and space_ok and sampled
    report(11, ok, f"9-assignment design refused: {message!r}; 42C20 = {rep.info['assignment_space']} "
                   f"sampled {rep.info['sampling']}, R={rep.info['R']}, "
                   f"cv1 placebo-A {rep.rejection('cv1', 'placebo-A'):.3f}")
