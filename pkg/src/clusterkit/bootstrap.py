"""Pairs cluster bootstrap and the WCU/WCR, classic/score wild cluster bootstraps."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .crve import cv1, cv1_scalar, t_quantile
from .design import ClusterBlocks
from .errors import NoBracket, TooManyDegenerate, ZeroVariance
from .estimator import (FitResult, Restriction, RestrictedFit, jackknife_estimates,
                        modified_scores, ols_fit, restricted_fit)

WILD_VARIANTS = ("WCU-C", "WCU-S", "WCR-C", "WCR-S")
VARIANTS = ("PAIRS",) + WILD_VARIANTS
MAX_ENUM_G = 30
MAX_DEGENERATE_SHARE = 0.10


def default_weights(G: int) -> str:
    return "rademacher" if G >= 10 else "webb6"


def normalize_variant(name: str) -> str:
    v = name.strip().upper()
    if v not in VARIANTS:
        raise ValueError(f"unknown bootstrap variant {name!r}; choose from {', '.join(VARIANTS)}")
    return v


@dataclass(frozen=True)
class BootstrapPlan:
    variant: str
    B: int = 9999
    weights: str = "rademacher"
    seed: int = 0
    enumerate: bool = False
    threads: int | None = None
    stream_key: tuple = ()  # extra spawn-key entries, e.g. (design point, replicate)

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        object.__setattr__(self, "weights", self.weights.lower())
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if self.weights not in ("rademacher", "webb6"):
            raise ValueError(f"unknown weights {self.weights!r}")
        if self.enumerate and (self.variant == "PAIRS" or self.weights != "rademacher"):
            raise ValueError("enumeration needs a wild variant with Rademacher weights")

    @property
    def restricted(self) -> bool:
        return self.variant.startswith("WCR")

    @property
    def score_variant(self) -> bool:
        return self.variant.endswith("-S")


@dataclass
class BootstrapOutcome:
    variant: str
    t_obs: float
    t_star: np.ndarray
    p_sym: float
    p_equal_tail: float
    boot_se: float
    ci: tuple[float, float] | None
    replicates_used: int
    dropped: int
    B: int
    weights: str
    enumerated: bool = False
    extra: dict = field(default_factory=dict)


def symmetric_pvalue(t_obs: float, t_star) -> float:
    t_star = np.asarray(t_star)
    if t_star.size == 0:
        raise ValueError("no bootstrap statistics")
    return float(np.count_nonzero(np.abs(t_star) > abs(t_obs)) / t_star.size)


def equal_tail_pvalue(t_obs: float, t_star) -> float:
    t_star = np.asarray(t_star)
    if t_star.size == 0:
        raise ValueError("no bootstrap statistics")
    lo = np.count_nonzero(t_star <= t_obs)
    hi = np.count_nonzero(t_star >= t_obs)
    return float(min(1.0, 2.0 * min(lo, hi) / t_star.size))


def quantile_ranks(B: int, alpha: float) -> tuple[int, int]:
    """1-based order statistics used for ``c*_{alpha/2}`` and ``c*_{1-alpha/2}``.

    B=999 and alpha=0.05 give 25 and 975.
    """
    lo = int(math.floor((B + 1) * alpha / 2.0 + 1e-9))
    hi = int(math.ceil((B + 1) * (1.0 - alpha / 2.0) - 1e-9))
    return min(max(lo, 1), B), min(max(hi, 1), B)


def studentized_ci(coef: float, se: float, t_star, alpha: float = 0.05) -> tuple[float, float]:
    t_sorted = np.sort(np.asarray(t_star))
    B = t_sorted.size
    if B < 1.0 / alpha - 1.0:
        warnings.warn(f"B={B} is small for a {1 - alpha:.0%} interval", RuntimeWarning, stacklevel=2)
    lo, hi = quantile_ranks(B, alpha)
    return float(coef - se * t_sorted[hi - 1]), float(coef - se * t_sorted[lo - 1])


# --------------------------------------------------------------------------
# Wild cluster bootstrap
# --------------------------------------------------------------------------

def _replicate_batches(plan: BootstrapPlan, G: int):
    """Work items ``(chunk, start, stop)``; ``_weights`` turns them into rows."""
    B = 2 ** G if plan.enumerate else plan.B
    return B, rng.chunk_bounds(B)


def _weights(plan: BootstrapPlan, G: int, item) -> np.ndarray:
    c, start, stop = item
    if plan.enumerate:
        return rng.rademacher_enumeration(G, start, stop)
    return rng.weight_rows(plan.weights, G, plan.seed, rng.STREAM_WILD, c, stop - start,
                           extra=plan.stream_key)


class _WildSetup:
    """Replicate-independent pieces of the wild bootstrap for one coefficient."""

    def __init__(self, b: ClusterBlocks, f: FitResult, j: int):
        self.b, self.f, self.j = b, f, j
        A = f.xtx_inv
        self.aj = A[j]
        self.W = b.xtx_g @ self.aj  # (G, k)
        self.scale = cv1_scalar(b.G, b.N, b.k)
        self.se_cv1 = cv1(b, f).se(j)

    def tstats(self, S: np.ndarray, V: np.ndarray):
        q = S @ self.aj
        P = self.f.xtx_inv @ S.T
        C = self.W @ P
        return kernels.wild_tstats(V, q, C, self.scale)


def _wild_scores(plan: BootstrapPlan, b: ClusterBlocks, f: FitResult, rf: RestrictedFit | None,
                 ms: np.ndarray | None) -> np.ndarray:
    if plan.score_variant:
        if ms is None:
            if plan.restricted:
                ms = modified_scores(b, f, mode=rf)
            else:
                ms = modified_scores(b, f, jackknife_estimates(b, f))
        return ms
    return rf.scores_tilde if plan.restricted else f.scores


def _run_wild(plan, setup: _WildSetup, S: np.ndarray):
    G = setup.b.G
    B, items = _replicate_batches(plan, G)

    def work(item):
        return setup.tstats(S, _weights(plan, G, item))

    parts = rng.pmap(work, items, plan.threads)
    num = np.concatenate([p[0] for p in parts])
    t = np.concatenate([p[1] for p in parts])
    return B, num, t


def wild_bootstrap(plan: BootstrapPlan, b: ClusterBlocks, f: FitResult, j: int,
                   beta0: float = 0.0, rf: RestrictedFit | None = None,
                   ms: np.ndarray | None = None, alpha: float = 0.05,
                   ci: bool = True) -> BootstrapOutcome:
    """Wild cluster bootstrap test of ``beta_j = beta0`` with CV1 studentization.

    Scores are ``f.scores`` (WCU-C), acute jackknife scores (WCU-S), restricted
    scores at ``beta0`` (WCR-C) or their modified versions (WCR-S); ``ms``
    overrides the modified scores when already computed. Unrestricted variants
    return a studentized interval, restricted ones an inverted interval when
    ``ci`` is true.
    """
    if plan.variant == "PAIRS":
        raise ValueError("use pairs_bootstrap for the pairs variant")
    if plan.enumerate and b.G > MAX_ENUM_G:
        raise ValueError(f"enumeration is limited to G <= {MAX_ENUM_G}")
    if plan.restricted and rf is None:
        rf = restricted_fit(b, Restriction(j, beta0))
    setup = _WildSetup(b, f, j)
    if not setup.se_cv1 > 0:
        raise ZeroVariance("CV1 standard error is zero")
    t_obs = (f.beta_hat[j] - beta0) / setup.se_cv1
    S = _wild_scores(plan, b, f, rf, ms)
    B, num, t = _run_wild(plan, setup, S)
    good = np.isfinite(t)
    t_used = t[good]
    if t_used.size == 0:
        raise ZeroVariance("every bootstrap replicate was degenerate")
    p_sym = symmetric_pvalue(t_obs, t_used)
    p_et = equal_tail_pvalue(t_obs, t_used)
    boot_se = float(np.std(num[good], ddof=1)) if t_used.size > 1 else float("nan")
    interval = None
    if ci:
        if plan.restricted:
            interval = invert_restricted_ci(plan, b, f, j, alpha, ms_fn=None)
        else:
            interval = studentized_ci(float(f.beta_hat[j]), setup.se_cv1, t_used, alpha)
    return BootstrapOutcome(
        variant=plan.variant, t_obs=float(t_obs), t_star=t_used, p_sym=p_sym,
        p_equal_tail=p_et, boot_se=boot_se, ci=interval, replicates_used=int(t_used.size),
        dropped=int(B - t_used.size), B=B, weights=plan.weights, enumerated=plan.enumerate,
        extra={"se_cv1": setup.se_cv1},
    )


def invert_restricted_ci(plan: BootstrapPlan, b: ClusterBlocks, f: FitResult, j: int,
                         alpha: float = 0.05, ms_fn=None, rel_tol: float = 1e-4,
                         max_iter: int = 200) -> tuple[float, float]:
    """Confidence interval from inverting the restricted wild bootstrap test.

    The same weight draws are reused for every trial value, so the equal-tail
    P value is a step function of the trial value. Each side is bracketed by
    stepping 1, 2, 4 and 8 Wald half-widths away from ``beta_hat_j``, then
    bisected until the bracket is narrower than ``rel_tol * se``.
    """
    if not plan.restricted:
        raise ValueError("interval inversion needs a restricted (WCR) variant")
    setup = _WildSetup(b, f, j)
    se = setup.se_cv1
    bhat = float(f.beta_hat[j])
    G = b.G
    B, items = _replicate_batches(plan, G)
    weights = [_weights(plan, G, it) for it in items]

    def pvalue(beta0: float) -> float:
        rf = restricted_fit(b, Restriction(j, beta0))
        S = _wild_scores(plan, b, f, rf, None) if ms_fn is None else ms_fn(rf)
        ts = [setup.tstats(S, V)[1] for V in weights]
        t = np.concatenate(ts)
        t = t[np.isfinite(t)]
        return equal_tail_pvalue((bhat - beta0) / se, t)

    half = se * float(t_quantile(1.0 - alpha / 2.0, G - 1))
    tol = rel_tol * se
    ends = []
    for sign in (-1.0, 1.0):
        inside, outside = bhat, None
        for mult in (1.0, 2.0, 4.0, 8.0):
            trial = bhat + sign * mult * half
            if pvalue(trial) < alpha:
                outside = trial
                break
            inside = trial
        if outside is None:
            raise NoBracket(f"equal-tail P value stays above {alpha} within 8 Wald half-widths")
        for _ in range(max_iter):
            if abs(outside - inside) <= tol:
                break
            mid = 0.5 * (inside + outside)
            if pvalue(mid) < alpha:
                outside = mid
            else:
                inside = mid
        ends.append(0.5 * (inside + outside))
    return ends[0], ends[1]


# --------------------------------------------------------------------------
# Pairs cluster bootstrap
# --------------------------------------------------------------------------

def pairs_bootstrap(plan: BootstrapPlan, b: ClusterBlocks, f: FitResult, j: int,
                    beta0: float = 0.0, alpha: float = 0.05) -> BootstrapOutcome:
    """Resample whole clusters through their (X_g'X_g, X_g'y_g) blocks.

    Replicates whose resampled X'X is singular (for instance when no drawn
    cluster identifies coefficient j) are dropped; more than 10% dropped is
    an error.
    """
    G = b.G
    se = cv1(b, f).se(j)
    if not se > 0:
        raise ZeroVariance("CV1 standard error is zero")
    bhat = float(f.beta_hat[j])
    t_obs = (bhat - beta0) / se
    sizes = b.data.sizes.astype(np.float64)
    ref = np.diag(b.xtx).copy()
    items = rng.chunk_bounds(plan.B)

    def work(item):
        c, start, stop = item
        idx = rng.generator(plan.seed, rng.STREAM_PAIRS, *plan.stream_key, c).integers(0, G, size=(stop - start, G))
        return kernels.pairs_tstats(b.xtx_g, b.xty_g, sizes, idx, j, bhat, ref)

    parts = rng.pmap(work, items, plan.threads)
    beta_star = np.concatenate([p[0] for p in parts])
    t = np.concatenate([p[1] for p in parts])
    good = np.isfinite(t)
    dropped = int(plan.B - good.sum())
    if dropped > MAX_DEGENERATE_SHARE * plan.B:
        raise TooManyDegenerate(f"{dropped} of {plan.B} pairs replicates were singular")
    t_used = t[good]
    bs = beta_star[good]
    return BootstrapOutcome(
        variant="PAIRS", t_obs=float(t_obs), t_star=t_used,
        p_sym=symmetric_pvalue(t_obs, t_used), p_equal_tail=equal_tail_pvalue(t_obs, t_used),
        boot_se=float(np.std(bs, ddof=1)) if bs.size > 1 else float("nan"),
        ci=studentized_ci(bhat, se, t_used, alpha), replicates_used=int(t_used.size),
        dropped=dropped, B=plan.B, weights="uniform",
        extra={"se_cv1": se},
    )


def run_bootstrap(plan: BootstrapPlan, b: ClusterBlocks, j: int, beta0: float = 0.0,
                  alpha: float = 0.05, ci: bool = True, f: FitResult | None = None) -> BootstrapOutcome:
    """Fit and dispatch to the pairs or wild bootstrap named in ``plan``."""
    if f is None:
        f = ols_fit(b)
    if plan.variant == "PAIRS":
        return pairs_bootstrap(plan, b, f, j, beta0, alpha)
    return wild_bootstrap(plan, b, f, j, beta0=beta0, alpha=alpha, ci=ci)
