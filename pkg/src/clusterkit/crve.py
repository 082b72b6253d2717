"""Cluster-robust variance estimators and t-based inference."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .design import ClusterBlocks, ClusteredDataset
from .errors import TooFewDeletions, ZeroVariance
from .estimator import FitResult, JackknifeSet, annihilator_block, warn_dropped, xtx_inverse

EIG_TOL = 1e-10
CV2_LARGE_CLUSTER = 2000


@dataclass(frozen=True)
class VarianceEstimate:
    matrix: np.ndarray
    kind: str
    dof: float
    effective_G: int
    flagged_clusters: tuple[int, ...] = ()

    def se(self, j: int) -> float:
        v = self.matrix[j, j]
        return float(np.sqrt(v)) if v > 0 else 0.0 if v == 0 else float("nan")


@dataclass(frozen=True)
class TestResult:
    coef: float
    se: float
    t_stat: float
    p_value: float
    ci_lower: float
    ci_upper: float
    method: str
    dof: float = float("nan")
    extra: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class


# Student-t helpers --------------------------------------------------------

def t_cdf(x, dof):
    return special.stdtr(dof, x)


def t_sf(x, dof):
    return special.stdtr(dof, -np.asarray(x, dtype=float))


def t_quantile(p, dof):
    return special.stdtrit(dof, p)


def normal_sf(x):
    return special.ndtr(-np.asarray(x, dtype=float))


# Sandwich pieces ----------------------------------------------------------

def sandwich(inv: np.ndarray, filling: np.ndarray) -> np.ndarray:
    v = inv @ filling @ inv
    return 0.5 * (v + v.T)


def cv1_scalar(G: int, N: int, k: int) -> float:
    return G * (N - 1) / ((G - 1) * (N - k))


def score_filling(scores: np.ndarray) -> np.ndarray:
    return scores.T @ scores


def cv1(b: ClusterBlocks, f: FitResult) -> VarianceEstimate:
    G, N, k = b.G, b.N, b.k
    m = cv1_scalar(G, N, k) * sandwich(f.xtx_inv, score_filling(f.scores))
    return VarianceEstimate(m, "CV1", dof=G - 1, effective_G=G)


def _cv2_roots(b: ClusterBlocks):
    """Per-cluster ``M_gg^{-1/2} X_g`` (depends on X only, so memoized)."""
    hit = b.cache.get("cv2_roots")
    if hit is not None:
        return hit
    if b.data.sizes.max() > CV2_LARGE_CLUSTER:
        warnings.warn(f"CV2 needs an eigendecomposition of every M_gg; the largest "
                      f"cluster has {b.data.sizes.max()} rows", RuntimeWarning, stacklevel=3)
    roots, flagged = [], []
    X = b.data.X
    for g in range(b.G):
        Mgg = annihilator_block(b, g)
        w, V = np.linalg.eigh(Mgg)
        if w.min() < EIG_TOL:
            flagged.append(g)
            inv_root = np.where(w > EIG_TOL, 1.0 / np.sqrt(np.clip(w, EIG_TOL, None)), 0.0)
        else:
            inv_root = 1.0 / np.sqrt(w)
        R = (V * inv_root) @ V.T
        roots.append(R @ X[b.data.rows(g)])
    hit = (roots, tuple(flagged))
    b.cache["cv2_roots"] = hit
    return hit


def cv2_scores(b: ClusterBlocks, f: FitResult) -> tuple[np.ndarray, tuple[int, ...]]:
    roots, flagged = _cv2_roots(b)
    u = f.residuals
    s = np.empty((b.G, b.k))
    for g in range(b.G):
        s[g] = roots[g].T @ u[b.data.rows(g)]
    return s, flagged


def cv2(b: ClusterBlocks, f: FitResult) -> VarianceEstimate:
    """CV2: scores built from ``M_gg^{-1/2} u_g``; no leading scalar.

    Clusters whose ``M_gg`` has an eigenvalue below ``EIG_TOL`` use the
    pseudo-inverse root and are listed in ``flagged_clusters``.
    """
    s, flagged = cv2_scores(b, f)
    if flagged:
        warnings.warn(f"CV2: near-singular M_gg for clusters {list(flagged)}; "
                      "pseudo-inverse root used", RuntimeWarning, stacklevel=2)
    m = sandwich(f.xtx_inv, score_filling(s))
    return VarianceEstimate(m, "CV2", dof=b.G - 1, effective_G=b.G, flagged_clusters=flagged)


def cv3(j: JackknifeSet, f: FitResult) -> VarianceEstimate:
    ok = j.computable
    Gc = int(ok.sum())
    if Gc < 2:
        raise TooFewDeletions(f"CV3 needs at least 2 computable deletions, have {Gc}")
    warn_dropped(ok, "CV3")
    d = j.beta_g[ok] - f.beta_hat[None, :]
    m = (Gc - 1) / Gc * (d.T @ d)
    flagged = tuple(np.flatnonzero(~ok).tolist())
    return VarianceEstimate(0.5 * (m + m.T), "CV3", dof=Gc - 1, effective_G=Gc,
                            flagged_clusters=flagged)


def hc(data: ClusteredDataset, f: FitResult, kind: str = "HC1") -> VarianceEstimate:
    """Observation-level heteroskedasticity-robust estimators.

    HC3 here is the jackknife form ``(N-1)/N * sum x_i x_i' u_i^2/(1-h_i)^2``
    sandwiched, which is what CV3 reduces to with singleton clusters.
    """
    X, u = data.X, f.residuals
    N, k = X.shape
    inv = f.xtx_inv
    h = np.einsum("ij,jk,ik->i", X, inv, X)
    if kind == "HC1":
        w, scale = u, N / (N - k)
    elif kind == "HC2":
        w, scale = u / np.sqrt(1.0 - h), 1.0
    elif kind == "HC3":
        w, scale = u / (1.0 - h), (N - 1) / N
    else:
        raise ValueError(f"unknown HC kind {kind!r}")
    s = X * w[:, None]
    return VarianceEstimate(scale * sandwich(inv, s.T @ s), kind, dof=N - k, effective_G=N)


def hc1_from_blocks(b: ClusterBlocks, f: FitResult) -> VarianceEstimate:
    return hc(b.data, f, "HC1")


# Inference ----------------------------------------------------------------

def t_test(ve: VarianceEstimate, f: FitResult, j: int, beta0: float = 0.0,
           alpha: float = 0.05, dof: float | None = None) -> TestResult:
    """Two-sided t test of ``beta_j = beta0`` and the matching interval."""
    var = ve.matrix[j, j]
    if not var > 0:
        raise ZeroVariance(f"{ve.kind} variance for coefficient {j} is {var}")
    return t_test_from_se(float(f.beta_hat[j]), float(np.sqrt(var)),
                          ve.dof if dof is None else dof, beta0, alpha, ve.kind)


def t_test_from_se(coef: float, se: float, dof: float, beta0: float = 0.0,
                   alpha: float = 0.05, method: str = "") -> TestResult:
    if not se > 0:
        raise ZeroVariance(f"standard error is {se}")
    t = (coef - beta0) / se
    p = float(min(1.0, 2.0 * t_sf(abs(t), dof)))
    c = float(t_quantile(1.0 - alpha / 2.0, dof))
    return TestResult(coef=coef, se=se, t_stat=t, p_value=p,
                      ci_lower=coef - c * se, ci_upper=coef + c * se,
                      method=method, dof=float(dof))
