"""Targeted Monte Carlo and placebo-regression experiments.

Both experiments hold part of the real data fixed (``X`` and the clusters for
Monte Carlo, ``y`` for placebo regressions), regenerate the rest, and tally how
often each inferential method rejects a true null at level ``alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import special

from . import rng
from .bootstrap import BootstrapPlan, default_weights, pairs_bootstrap, wild_bootstrap
from .crve import cv1, cv2, cv3, hc, t_test
from .design import ClusterBlocks, ClusteredDataset, build_blocks
from .errors import ClusterKitError, DataError, TooFewAssignments
from .estimator import (Restriction, jackknife_estimates, modified_scores, ols_fit,
                        restricted_fit)

METHODS = ("hc1", "hc2", "hc3", "cv1", "cv2", "cv3", "wcu-c", "wcu-s", "wcr-c", "wcr-s", "pairs")
MAX_ENUMERATION = 10 ** 6
MIN_ASSIGNMENTS = 100


# --------------------------------------------------------------------------
# Disturbances and outcomes
# --------------------------------------------------------------------------

def re_disturbances(sizes: np.ndarray, rho: float, gen: np.random.Generator,
                    sigma2: float = 1.0) -> np.ndarray:
    """Random-effects draws ``v_g + e_gi`` with variance ``sigma2`` and intra-cluster
    correlation ``rho``."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    sizes = np.asarray(sizes)
    v = gen.standard_normal(sizes.shape[0]) * math.sqrt(rho * sigma2)
    e = gen.standard_normal(int(sizes.sum())) * math.sqrt((1.0 - rho) * sigma2)
    return np.repeat(v, sizes) + e


def generate_re_disturbances(sizes, rho: float, seed: int, replicate: int, point: int = 0,
                             sigma2: float = 1.0) -> np.ndarray:
    return re_disturbances(sizes, rho, rng.generator(seed, rng.STREAM_MC, point, replicate), sigma2)


def binary_transform(u: np.ndarray, fitted: np.ndarray) -> np.ndarray:
    """1 where ``Phi(u) < fitted``, else 0; with N(0,1) draws P(y=1) = fitted."""
    return np.where(special.ndtr(u) >= fitted, 0.0, 1.0)


def within_cluster_correlation(u: np.ndarray, offsets: np.ndarray) -> float:
    """Average pairwise within-cluster product over the average square."""
    sums = np.add.reduceat(u, offsets[:-1])
    sq = np.add.reduceat(u * u, offsets[:-1])
    sizes = np.diff(offsets)
    pairs = float(np.sum(sizes * (sizes - 1)))
    if pairs == 0:
        return float("nan")
    cross = float(np.sum(sums * sums - sq)) / pairs
    return cross / (float(np.sum(sq)) / u.size)


# --------------------------------------------------------------------------
# Method evaluation
# --------------------------------------------------------------------------

@dataclass
class MethodConfig:
    alpha: float = 0.05
    boot_B: int = 399
    boot_weights: str | None = None
    seed: int = 0


class _Replicate:
    """Lazily shared fits for one simulated dataset."""

    def __init__(self, b: ClusterBlocks, j: int, beta0: float, cfg: MethodConfig, key: tuple):
        self.b, self.j, self.beta0, self.cfg, self.key = b, j, beta0, cfg, key

    @cached_property
    def fit(self):
        return ols_fit(self.b)

    @cached_property
    def jack(self):
        return jackknife_estimates(self.b, self.fit)

    @cached_property
    def rfit(self):
        return restricted_fit(self.b, Restriction(self.j, self.beta0))

    def plan(self, variant: str, stream: int) -> BootstrapPlan:
        w = self.cfg.boot_weights or default_weights(self.b.G)
        return BootstrapPlan(variant, B=self.cfg.boot_B, weights=w, seed=self.cfg.seed,
                             threads=1, stream_key=(stream,) + self.key)

    def pvalue(self, method: str) -> float:
        m = method.lower()
        d, f, j = self.b.data, self.fit, self.j
        if m in ("hc1", "hc2", "hc3"):
            return t_test(hc(d, f, m.upper()), f, j, self.beta0).p_value
        if m == "cv1":
            return t_test(cv1(self.b, f), f, j, self.beta0).p_value
        if m == "cv2":
            return t_test(cv2(self.b, f), f, j, self.beta0).p_value
        if m == "cv3":
            return t_test(cv3(self.jack, f), f, j, self.beta0).p_value
        if m in ("wcu-c", "wcu-s", "wcr-c", "wcr-s"):
            plan = self.plan(m, METHODS.index(m))
            rf = self.rfit if plan.restricted else None
            ms = modified_scores(self.b, f, self.jack) if m == "wcu-s" else None
            return wild_bootstrap(plan, self.b, f, j, beta0=self.beta0, rf=rf, ms=ms,
                                  ci=False).p_sym
        if m == "pairs":
            return pairs_bootstrap(self.plan("pairs", METHODS.index(m)), self.b, f, j,
                                   self.beta0).p_sym
        raise ValueError(f"unknown method {method!r}")


def _evaluate(b: ClusterBlocks, j: int, beta0: float, methods: Sequence[str],
              cfg: MethodConfig, key: tuple) -> np.ndarray:
    """P values for each method; NaN marks a method failure on this replicate."""
    rep = _Replicate(b, j, beta0, cfg, key)
    out = np.full(len(methods), np.nan)
    for i, m in enumerate(methods):
        try:
            out[i] = rep.pvalue(m)
        except (ClusterKitError, np.linalg.LinAlgError, FloatingPointError):
            pass
    return out


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

@dataclass
class SimRow:
    method: str
    point: str
    rejection: float
    mc_se: float
    verdict: str
    replications: int
    failures: int


@dataclass
class SimReport:
    kind: str
    alpha: float
    band: tuple[float, float]
    rows: list[SimRow]
    points: list[dict] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def rejection(self, method: str, point: str) -> float:
        for r in self.rows:
            if r.method == method and r.point == point:
                return r.rejection
        raise KeyError((method, point))

    def to_text(self) -> str:
        labels = [p["label"] for p in self.points]
        methods = list(dict.fromkeys(r.method for r in self.rows))
        width = max([len(m) for m in methods] + [6])
        cell = 19
        head = "Method".ljust(width) + "".join(lab.rjust(cell) for lab in labels)
        lines = [head, "-" * len(head)]
        for m in methods:
            cells = []
            for lab in labels:
                r = next(r for r in self.rows if r.method == m and r.point == lab)
                mark = {"reliable": " ", "over": "+", "under": "-"}.get(r.verdict, "?")
                cells.append(f"{r.rejection:.4f} ({r.mc_se:.4f}){mark}".rjust(cell))
            lines.append(m.ljust(width) + "".join(cells))
        lo, hi = self.band
        lines.append(f"band [{lo:.4f}, {hi:.4f}] at alpha={self.alpha}; '+' over-rejects, "
                     "'-' under-rejects")
        return "\n".join(lines)


def verdict(freq: float, band: tuple[float, float]) -> str:
    if not np.isfinite(freq):
        return "undefined"
    if freq > band[1]:
        return "over"
    if freq < band[0]:
        return "under"
    return "reliable"


def _tally(pvals: np.ndarray, methods, label, alpha, band) -> list[SimRow]:
    rows = []
    for i, m in enumerate(methods):
        p = pvals[:, i]
        ok = np.isfinite(p)
        n = int(ok.sum())
        freq = float(np.mean(p[ok] < alpha)) if n else float("nan")
        se = math.sqrt(freq * (1 - freq) / n) if n else float("nan")
        rows.append(SimRow(m, label, freq, se, verdict(freq, band), n, int(p.size - n)))
    return rows


# --------------------------------------------------------------------------
# Targeted Monte Carlo
# --------------------------------------------------------------------------

@dataclass
class McDesign:
    coef: int
    rhos: Sequence[float] = (0.0,)
    R: int = 1000
    sigma_total: float = 1.0
    methods: Sequence[str] = ("cv1", "cv3")
    beta0: str | Sequence[float] = "restricted"
    null_value: float = 0.0
    outcome: str = "continuous"
    alpha: float = 0.05
    band: tuple[float, float] | None = None
    seed: int = 0
    boot_B: int = 399
    boot_weights: str | None = None
    threads: int | None = None
    # called as disturbance(sizes, rho, generator, sigma_total)
    disturbance: Callable[..., np.ndarray] = re_disturbances

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be at least 1")
        for r in self.rhos:
            if not 0.0 <= r < 1.0:
                raise ValueError("every rho must lie in [0, 1)")
        if not self.sigma_total > 0:
            raise ValueError("sigma_total must be positive")
        if self.outcome not in ("continuous", "binary"):
            raise ValueError("outcome must be 'continuous' or 'binary'")
        if self.band is None:
            self.band = (0.9 * self.alpha, 1.1 * self.alpha)


def _dgp_beta(d: ClusteredDataset, b: ClusterBlocks, design: McDesign) -> tuple[np.ndarray, float]:
    """Coefficients used to build y and the value of beta_j that is then true."""
    j = design.coef
    if isinstance(design.beta0, str):
        if design.beta0 == "restricted":
            beta = restricted_fit(b, Restriction(j, design.null_value)).beta_tilde
        elif design.beta0 == "zero":
            beta = np.zeros(d.k)
        elif design.beta0 == "hat":
            beta = ols_fit(b).beta_hat
        else:
            raise ValueError(f"unknown beta0 rule {design.beta0!r}")
    else:
        beta = np.asarray(design.beta0, dtype=float)
    return beta, float(beta[j])


def run_monte_carlo(d: ClusteredDataset, design: McDesign) -> SimReport:
    """Rejection frequencies of every method under a true null on the real design.

    ``X`` and the blocks are built once; every replicate draws fresh
    disturbances from a stream keyed by ``(seed, design point, replicate)``.
    """
    b = build_blocks(d)
    beta, null = _dgp_beta(d, b, design)
    fitted = d.X @ beta
    methods = [m.lower() for m in design.methods]
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    cfg = MethodConfig(design.alpha, design.boot_B, design.boot_weights, design.seed)
    sizes = d.sizes
    rows, points = [], []
    for p, rho in enumerate(design.rhos):
        def work(item, p=p, rho=rho):
            _, start, stop = item
            pv = np.empty((stop - start, len(methods)))
            corr = np.empty(stop - start)
            ybar = np.empty(stop - start)
            for i, r in enumerate(range(start, stop)):
                gen = rng.generator(design.seed, rng.STREAM_MC, p, r)
                u = design.disturbance(sizes, rho, gen, design.sigma_total)
                y = fitted + u if design.outcome == "continuous" else binary_transform(u, fitted)
                ybar[i] = y.mean()
                br = b.with_y(y)
                pv[i] = _evaluate(br, design.coef, null, methods, cfg, (p, r))
                try:
                    corr[i] = within_cluster_correlation(ols_fit(br).residuals, d.offsets)
                except ClusterKitError:
                    corr[i] = np.nan
            return pv, corr, ybar

        parts = rng.pmap(work, rng.chunk_bounds(design.R, 64), design.threads)
        pv = np.concatenate([x[0] for x in parts])
        corr = np.concatenate([x[1] for x in parts])
        label = f"rho={rho:g}"
        rows += _tally(pv, methods, label, design.alpha, design.band)
        point = {"label": label, "rho": float(rho),
                 "realized_within_corr": float(np.nanmean(corr)) if np.isfinite(corr).any() else None}
        if design.outcome == "binary":
            point["mean_y"] = float(np.concatenate([x[2] for x in parts]).mean())
        points.append(point)
    info = {"R": design.R, "sigma_total": design.sigma_total, "outcome": design.outcome, "beta_dgp": beta.tolist(),
            "null_value": null, "coef": d.column_names[design.coef], "seed": design.seed,
            "boot_B": design.boot_B,
            "boot_weights": design.boot_weights or default_weights(d.G)}
    if design.outcome == "binary":
        info["fitted_mean"] = float(fitted.mean())
    return SimReport("monte_carlo", design.alpha, tuple(design.band), rows, points, info)


# --------------------------------------------------------------------------
# Placebo regressions
# --------------------------------------------------------------------------

@dataclass
class PlaceboDesign:
    coef: int
    strategy: str = "cluster"  # cluster | within | enumerate
    n_treated: int | None = None  # clusters to treat for cluster/enumerate strategies
    mode: str = "both"  # add | replace | both
    R: int = 1000
    methods: Sequence[str] = ("cv1", "cv3")
    alpha: float = 0.05
    band: tuple[float, float] | None = None
    seed: int = 0
    boot_B: int = 399
    boot_weights: str | None = None
    threads: int | None = None

    def __post_init__(self):
        if self.strategy not in ("cluster", "within", "enumerate"):
            raise ValueError(f"unknown placebo strategy {self.strategy!r}")
        if self.mode not in ("add", "replace", "both"):
            raise ValueError(f"unknown placebo mode {self.mode!r}")
        if self.band is None:
            self.band = (0.9 * self.alpha, 1.1 * self.alpha)


def _unrank_combination(rank: int, n: int, r: int) -> list[int]:
    """Lexicographic ``rank``-th r-subset of ``range(n)``."""
    out, x = [], 0
    for slot in range(r, 0, -1):
        while True:
            c = math.comb(n - x - 1, slot - 1)
            if rank < c:
                out.append(x)
                x += 1
                break
            rank -= c
            x += 1
    return out


def _rank_combination(subset: Sequence[int], n: int) -> int:
    rank, prev, r = 0, -1, len(subset)
    for i, x in enumerate(subset):
        for y in range(prev + 1, x):
            rank += math.comb(n - y - 1, r - i - 1)
        prev = x
    return rank


class PlaceboSampler:
    """Draws placebo treatment columns shaped like the actual treatment.

    ``cluster``: treat all rows of ``n_treated`` randomly chosen clusters.
    ``within``: keep each cluster's number of treated rows, choose which rows.
    ``enumerate``: visit every cluster-level assignment once, in rank order.
    The actual assignment is never returned. When the number of assignments is
    at most ``MAX_ENUMERATION`` they are sampled without replacement.
    """

    def __init__(self, d: ClusteredDataset, design: PlaceboDesign,
                 min_assignments: int = MIN_ASSIGNMENTS):
        self.d, self.design = d, design
        T = d.X[:, design.coef]
        if not np.all((T == 0) | (T == 1)):
            raise DataError("placebo regressions need a 0/1 treatment column")
        self.actual = T.copy()
        sizes = d.sizes
        if design.strategy in ("cluster", "enumerate"):
            treated = np.bincount(d.cluster_id, weights=T, minlength=d.G) > 0
            self.n_treated = design.n_treated if design.n_treated is not None else int(treated.sum())
            if not 0 < self.n_treated < d.G:
                raise DataError("number of treated clusters must lie strictly between 0 and G")
            self.parts = [(d.G, self.n_treated)]
            self.space = math.comb(d.G, self.n_treated)
        else:
            counts = np.bincount(d.cluster_id, weights=T, minlength=d.G).astype(int)
            self.counts = counts
            self.parts = [(int(n), int(c)) for n, c in zip(sizes, counts)]
            self.space = math.prod(math.comb(n, c) for n, c in self.parts)
        self.actual_rank = self._rank_of(T)
        self.available = self.space - (1 if self.actual_rank is not None else 0)
        if self.available < min_assignments:
            raise TooFewAssignments(
                f"only {self.available} placebo assignments differ from the actual treatment; "
                f"at least {min_assignments} are needed")
        if design.strategy == "enumerate":
            if self.space > MAX_ENUMERATION:
                raise ValueError(f"{self.space} assignments are too many to enumerate")
            self.R = self.available
        else:
            self.R = design.R if self.space > MAX_ENUMERATION else min(design.R, self.available)
        self._ranks = None
        if self.space <= MAX_ENUMERATION:
            if design.strategy == "enumerate":
                ranks = np.arange(self.available, dtype=np.int64)
            else:
                gen = rng.generator(design.seed, rng.STREAM_PLACEBO, 0)
                ranks = gen.choice(self.available, size=self.R, replace=False).astype(np.int64)
            if self.actual_rank is not None:
                ranks = ranks + (ranks >= self.actual_rank)
            self._ranks = ranks

    # assignments are encoded as one subset per part
    def _column(self, subsets) -> np.ndarray:
        d = self.d
        z = np.zeros(d.N)
        if self.design.strategy in ("cluster", "enumerate"):
            for g in subsets[0]:
                z[d.rows(g)] = 1.0
        else:
            for g, sub in enumerate(subsets):
                if sub:
                    z[d.offsets[g] + np.asarray(sub)] = 1.0
        return z

    def _rank_of(self, T: np.ndarray) -> int | None:
        """Rank of the actual column in the sampler's space, if it belongs to it."""
        d = self.d
        if self.design.strategy in ("cluster", "enumerate"):
            per = np.bincount(d.cluster_id, weights=T, minlength=d.G)
            full = np.all((per == 0) | (per == d.sizes))
            chosen = np.flatnonzero(per > 0).tolist()
            if not full or len(chosen) != self.n_treated:
                return None
            return _rank_combination(chosen, d.G)
        rank = 0
        for g, (n, c) in enumerate(self.parts):
            sub = np.flatnonzero(T[d.rows(g)]).tolist()
            rank = rank * math.comb(n, c) + _rank_combination(sub, n)
        return rank

    def _from_rank(self, rank: int) -> np.ndarray:
        subsets = []
        for n, c in reversed(self.parts):
            space = math.comb(n, c)
            rank, r = divmod(rank, space)
            subsets.append(_unrank_combination(r, n, c))
        return self._column(subsets[::-1])

    def draw(self, replicate: int) -> np.ndarray:
        if self._ranks is not None:
            return self._from_rank(int(self._ranks[replicate]))
        attempt = 0
        while True:
            gen = rng.generator(self.design.seed, rng.STREAM_PLACEBO, 1, replicate, attempt)
            subsets = [sorted(gen.choice(n, size=c, replace=False).tolist()) if c else []
                       for n, c in self.parts]
            z = self._column(subsets)
            if not np.array_equal(z, self.actual):
                return z
            attempt += 1


def generate_placebo(d: ClusteredDataset, design: PlaceboDesign, replicate: int) -> np.ndarray:
    return PlaceboSampler(d, design).draw(replicate)


def enumerate_assignments(d: ClusteredDataset, design: PlaceboDesign):
    """Every assignment of the design's strategy in rank order, the actual one
    included; no minimum-count check."""
    s = PlaceboSampler(d, replace(design, strategy="within" if design.strategy == "within"
                                  else "cluster"), min_assignments=0)
    if s.space > MAX_ENUMERATION:
        raise ValueError(f"{s.space} assignments are too many to enumerate")
    for rank in range(s.space):
        yield s._from_rank(rank)


def run_placebo_study(d: ClusteredDataset, design: PlaceboDesign) -> SimReport:
    """Rejection frequencies for a zero coefficient on random placebo regressors.

    In ``add`` mode the placebo joins the full regressor set; in ``replace``
    mode it takes the place of the actual treatment column.
    """
    sampler = PlaceboSampler(d, design)
    methods = [m.lower() for m in design.methods]
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    modes = ["add", "replace"] if design.mode == "both" else [design.mode]
    cfg = MethodConfig(design.alpha, design.boot_B, design.boot_weights, design.seed)
    j = design.coef
    names = list(d.column_names)
    rows, points = [], []
    for p, mode in enumerate(modes):
        def work(item, p=p, mode=mode):
            _, start, stop = item
            pv = np.empty((stop - start, len(methods)))
            for i, r in enumerate(range(start, stop)):
                z = sampler.draw(r)
                if mode == "add":
                    X = np.column_stack([d.X, z])
                    dz = d.with_X(X, names + ["placebo"])
                    jz = d.k
                else:
                    X = d.X.copy()
                    X[:, j] = z
                    dz = d.with_X(X, names)
                    jz = j
                pv[i] = _evaluate(build_blocks(dz), jz, 0.0, methods, cfg, (p, r))
            return pv

        parts = rng.pmap(work, rng.chunk_bounds(sampler.R, 64), design.threads)
        pv = np.concatenate(parts)
        label = f"placebo-{mode[0].upper()}"
        rows += _tally(pv, methods, label, design.alpha, design.band)
        points.append({"label": label, "mode": mode})
    info = {"R": sampler.R, "strategy": design.strategy, "assignment_space": str(sampler.space),
            "sampling": ("enumerated" if design.strategy == "enumerate" else
                         "without replacement" if sampler.space <= MAX_ENUMERATION else
                         "with replacement"),
            "coef": d.column_names[j], "seed": design.seed, "boot_B": design.boot_B,
            "boot_weights": design.boot_weights or default_weights(d.G)}
    return SimReport("placebo", design.alpha, tuple(design.band), rows, points, info)
