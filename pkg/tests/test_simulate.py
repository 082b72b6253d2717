import math

import numpy as np
import pytest

from clusterkit import simulate
from clusterkit.design import from_arrays
from clusterkit.errors import TooFewAssignments
from clusterkit.simulate import (McDesign, PlaceboDesign, PlaceboSampler, binary_transform,
                                 enumerate_assignments, generate_placebo, generate_re_disturbances,
                                 run_monte_carlo, run_placebo_study, verdict,
                                 within_cluster_correlation)

from conftest import random_dataset


def treated_design(G, G1, size=3, seed=0, rho=0.0):
    r = np.random.default_rng(seed)
    cid = np.repeat(np.arange(G), size)
    T = (cid < G1).astype(float)
    x = r.normal(size=cid.size)
    X = np.column_stack([np.ones(cid.size), T, x])
    u = np.sqrt(rho) * r.normal(size=G)[cid] + np.sqrt(1 - rho) * r.normal(size=cid.size)
    return from_arrays(1 + 0.5 * x + u, X, cid, column_names=["_cons", "treat", "x"],
                       treatment_col=1)


class TestDisturbances:
    def test_independent_when_rho_zero(self):
        sizes = np.full(20, 5)
        off = np.concatenate([[0], np.cumsum(sizes)])
        corr = [within_cluster_correlation(generate_re_disturbances(sizes, 0.0, 1, r), off)
                for r in range(10000)]
        assert abs(np.mean(corr)) < 0.02

    def test_correlation_recovered(self):
        sizes = np.full(200, 10)
        off = np.concatenate([[0], np.cumsum(sizes)])
        corr = [within_cluster_correlation(generate_re_disturbances(sizes, 0.5, 2, r), off)
                for r in range(200)]
        assert np.mean(corr) == pytest.approx(0.5, abs=0.02)

    def test_unit_total_variance(self):
        u = generate_re_disturbances(np.full(2000, 5), 0.3, 3, 0)
        assert u.var() == pytest.approx(1.0, abs=0.05)
        u2 = generate_re_disturbances(np.full(2000, 5), 0.3, 3, 0, sigma2=4.0)
        np.testing.assert_allclose(u2, 2 * u)

    def test_high_rho_is_mostly_between(self):
        sizes = np.full(500, 6)
        u = generate_re_disturbances(sizes, 0.99, 4, 0)
        cid = np.repeat(np.arange(500), 6)
        means = np.bincount(cid, weights=u) / 6
        within = np.mean((u - means[cid]) ** 2)
        assert within < 0.05 * means.var()

    def test_rho_out_of_range(self):
        with pytest.raises(ValueError):
            generate_re_disturbances(np.array([2, 2]), 1.0, 0, 0)
        with pytest.raises(ValueError):
            McDesign(coef=1, rhos=(-0.1,))

    def test_reproducible(self):
        a = generate_re_disturbances(np.array([3, 4]), 0.2, 9, 7, point=1)
        b = generate_re_disturbances(np.array([3, 4]), 0.2, 9, 7, point=1)
        np.testing.assert_array_equal(a, b)


class TestBinary:
    def test_half(self):
        u = np.random.default_rng(0).normal(size=200000)
        assert binary_transform(u, np.full(u.size, 0.5)).mean() == pytest.approx(0.5, abs=0.005)

    def test_above_one(self):
        u = np.random.default_rng(1).normal(size=1000)
        assert np.all(binary_transform(u, np.full(1000, 1.5)) == 1)

    def test_rule(self):
        from scipy.stats import norm
        u = np.array([-1.0, 0.0, 1.0])
        np.testing.assert_array_equal(binary_transform(u, np.full(3, norm.cdf(0.0))), [1, 0, 0])

    def test_mean_close_to_observed_rate(self):
        # linear probability model fitted to a binary outcome, then simulated
        r = np.random.default_rng(6)
        G = 40
        cid = np.repeat(np.arange(G), 25)
        T = (cid % 3 == 0).astype(float)
        y = (r.random(cid.size) < 0.2 + 0.05 * T).astype(float)
        d = from_arrays(y, np.column_stack([np.ones(cid.size), T]), cid, treatment_col=1)
        rep = run_monte_carlo(d, McDesign(coef=1, R=200, outcome="binary", methods=("cv1",)))
        assert rep.points[0]["mean_y"] == pytest.approx(y.mean(), abs=0.01)


class TestMonteCarlo:
    @pytest.mark.slow
    def test_classical_size(self):
        # HC1 is only asymptotically exact; N = 200 keeps the small-sample
        # over-rejection well inside the band
        r = np.random.default_rng(0)
        N = 200
        X = np.column_stack([np.ones(N), r.normal(size=N), r.normal(size=N)])
        d = from_arrays(r.normal(size=N), X, np.arange(N))
        rep = run_monte_carlo(d, McDesign(coef=1, R=10000, methods=("hc1",), seed=1))
        assert 0.04 <= rep.rejection("hc1", "rho=0") <= 0.06

    def test_single_replication(self):
        d = treated_design(10, 4)
        rep = run_monte_carlo(d, McDesign(coef=1, R=1, methods=("cv1", "cv3", "hc1")))
        for row in rep.rows:
            assert row.rejection in (0.0, 1.0)
            assert row.replications == 1

    def test_thread_count_does_not_matter(self):
        d = treated_design(12, 4, size=4)
        kw = dict(coef=1, rhos=(0.0, 0.3), R=150, methods=("cv1", "wcr-s", "wcu-c", "pairs"),
                  boot_B=49, seed=5)
        a = run_monte_carlo(d, McDesign(threads=1, **kw))
        b = run_monte_carlo(d, McDesign(threads=4, **kw))
        assert a.rows == b.rows
        assert a.points == b.points

    def test_location_invariance(self):
        d = treated_design(12, 4, size=5)
        kw = dict(coef=1, R=2000, methods=("cv1", "cv3"), seed=2)
        zero = run_monte_carlo(d, McDesign(beta0="zero", **kw))
        hat = run_monte_carlo(d, McDesign(beta0="hat", null_value=0.0, **kw))
        for m in ("cv1", "cv3"):
            # with beta0 = beta_hat the tested null is beta_hat_j
            p0 = zero.rejection(m, "rho=0")
            p1 = hat.rejection(m, "rho=0")
            se = math.sqrt(p0 * (1 - p0) / 2000)
            assert abs(p0 - p1) <= 2 * se

    def test_failures_are_counted(self):
        # a dummy identified by one cluster makes modified scores undefined
        d = treated_design(8, 1, size=4)
        rep = run_monte_carlo(d, McDesign(coef=1, R=20, methods=("cv1", "wcu-s"), boot_B=19))
        rows = {r.method: r for r in rep.rows}
        assert rows["wcu-s"].failures == 20 and rows["wcu-s"].replications == 0
        assert rows["cv1"].failures == 0
        assert np.isnan(rows["wcu-s"].rejection)

    def test_report_fields(self):
        d = treated_design(10, 5)
        rep = run_monte_carlo(d, McDesign(coef=1, R=100, methods=("cv1",), alpha=0.1))
        row = rep.rows[0]
        assert rep.band == pytest.approx((0.09, 0.11))
        assert row.mc_se == pytest.approx(math.sqrt(row.rejection * (1 - row.rejection) / 100))
        assert row.verdict == verdict(row.rejection, rep.band)
        assert "cv1" in rep.to_text()

    def test_verdict(self):
        assert verdict(0.05, (0.045, 0.055)) == "reliable"
        assert verdict(0.06, (0.045, 0.055)) == "over"
        assert verdict(0.01, (0.045, 0.055)) == "under"

    def test_custom_disturbance(self):
        d = treated_design(10, 5)
        calls = []

        def heavy(sizes, rho, gen, sigma2):
            calls.append(rho)
            return gen.standard_t(5, size=int(sizes.sum()))

        run_monte_carlo(d, McDesign(coef=1, R=5, methods=("cv1",), disturbance=heavy))
        assert calls == [0.0] * 5

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            run_monte_carlo(treated_design(10, 5), McDesign(coef=1, R=2, methods=("cv9",)))


class TestPlacebo:
    def test_nine_assignments_refused(self):
        # 10 clusters, 1 treated: nine other ways to pick the treated cluster
        d = treated_design(10, 1)
        with pytest.raises(TooFewAssignments, match="only 9"):
            run_placebo_study(d, PlaceboDesign(coef=1, R=100))

    def test_large_space_sampled(self):
        d = treated_design(42, 20, size=2)
        s = PlaceboSampler(d, PlaceboDesign(coef=1, R=50))
        assert s.space == math.comb(42, 20)
        assert s.space == pytest.approx(5.14e11, rel=1e-3)
        for r in range(50):
            z = s.draw(r)
            per = np.bincount(d.cluster_id, weights=z)
            assert np.count_nonzero(per) == 20
            assert set(np.unique(per)) <= {0.0, 2.0}

    def test_within_preserves_counts(self):
        r = np.random.default_rng(3)
        cid = np.repeat(np.arange(12), 6)
        T = np.zeros(cid.size)
        for g in range(12):
            T[g * 6: g * 6 + (g % 4)] = 1.0
        X = np.column_stack([np.ones(cid.size), T])
        d = from_arrays(r.normal(size=cid.size), X, cid, treatment_col=1)
        counts = np.bincount(d.cluster_id, weights=T)
        for rep in range(20):
            z = generate_placebo(d, PlaceboDesign(coef=1, strategy="within"), rep)
            np.testing.assert_array_equal(np.bincount(d.cluster_id, weights=z), counts)

    def test_enumerate_three_choose_one(self):
        d = treated_design(3, 1, size=2)
        cols = list(enumerate_assignments(d, PlaceboDesign(coef=1, strategy="enumerate")))
        assert len(cols) == 3
        treated = [tuple(np.bincount(d.cluster_id, weights=z).tolist()) for z in cols]
        assert sorted(treated) == sorted(set(treated))

    def test_small_space_without_replacement_excludes_actual(self):
        d = treated_design(9, 4)  # 126 assignments
        s = PlaceboSampler(d, PlaceboDesign(coef=1, R=1000))
        assert s.R == 125
        cols = {tuple(s.draw(r)) for r in range(s.R)}
        assert len(cols) == 125
        assert tuple(d.X[:, 1]) not in cols

    def test_redraw_when_sampling_with_replacement(self, monkeypatch):
        monkeypatch.setattr(simulate, "MAX_ENUMERATION", 10)
        d = treated_design(9, 4)
        s = PlaceboSampler(d, PlaceboDesign(coef=1, R=600))
        assert s._ranks is None and s.R == 600
        actual = d.X[:, 1]
        assert not any(np.array_equal(s.draw(r), actual) for r in range(600))

    def test_enumerate_strategy_visits_each_once(self):
        d = treated_design(12, 3)
        s = PlaceboSampler(d, PlaceboDesign(coef=1, strategy="enumerate"))
        assert s.R == math.comb(12, 3) - 1
        cols = {tuple(s.draw(r)) for r in range(s.R)}
        assert len(cols) == s.R

    @pytest.mark.slow
    def test_size_on_clean_data(self):
        # For one fixed y the placebo rejection rate depends on the realized
        # cluster means of y, so average over several independent datasets.
        rej = {"placebo-A": [], "placebo-R": []}
        for seed in range(20):
            r = np.random.default_rng(seed)
            G = 40
            cid = np.repeat(np.arange(G), 10)
            T = (cid < 20).astype(float)
            X = np.column_stack([np.ones(cid.size), T, r.normal(size=cid.size)])
            d = from_arrays(r.normal(size=cid.size), X, cid, treatment_col=1)
            rep = run_placebo_study(d, PlaceboDesign(coef=1, R=250, methods=("hc1",), seed=seed))
            for point in rej:
                rej[point].append(rep.rejection("hc1", point))
        for point, values in rej.items():
            assert 0.035 <= np.mean(values) <= 0.065

    def test_modes_and_determinism(self):
        d = treated_design(14, 6, size=3)
        kw = dict(coef=1, R=80, methods=("cv1", "wcr-c"), boot_B=19, seed=3)
        a = run_placebo_study(d, PlaceboDesign(threads=1, **kw))
        b = run_placebo_study(d, PlaceboDesign(threads=3, **kw))
        assert a.rows == b.rows
        assert {p["mode"] for p in a.points} == {"add", "replace"}
        only = run_placebo_study(d, PlaceboDesign(mode="replace", **kw))
        assert [p["mode"] for p in only.points] == ["replace"]
