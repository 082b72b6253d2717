"""Two-way clustered variance and the max-of-three standard-error rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crve import TestResult, VarianceEstimate, cv1_scalar, sandwich, t_test_from_se
from .design import ClusteredDataset, dense_labels
from .estimator import FitResult


@dataclass(frozen=True)
class TwoWayVariance:
    """Scaled fillings for each dimension and their intersections.

    ``combined`` is ``sigma_g + (sigma_h - sigma_gh)``; the bracketing makes
    coincident partitions cancel exactly.
    """

    sigma_g: np.ndarray
    sigma_h: np.ndarray
    sigma_gh: np.ndarray
    combined: np.ndarray
    matrix: np.ndarray
    psd_flag: bool
    min_eigenvalue: float
    G: int
    H: int
    n_intersections: int


def grouped_scores(X: np.ndarray, u: np.ndarray, codes: np.ndarray, n: int) -> np.ndarray:
    s = np.zeros((n, X.shape[1]))
    np.add.at(s, codes, X * u[:, None])
    return s


def _filling(X, u, labels, N, k):
    codes, levels = dense_labels(labels.tolist())
    n = len(levels)
    s = grouped_scores(X, u, codes, n)
    scale = cv1_scalar(n, N, k) if n > 1 else 1.0
    m = s.T @ s
    return scale * (0.5 * (m + m.T)), n


def twoway_variance(d: ClusteredDataset, f: FitResult) -> TwoWayVariance:
    if d.cluster_id2 is None:
        raise ValueError("two-way clustering needs a second cluster dimension")
    X, u, N, k = d.X, f.residuals, d.N, d.k
    c1, c2 = d.cluster_id, d.cluster_id2
    inter = c1 * (int(c2.max()) + 1) + c2
    sg, G = _filling(X, u, c1, N, k)
    sh, H = _filling(X, u, c2, N, k)
    sgh, I = _filling(X, u, inter, N, k)
    combined = sg + (sh - sgh)
    V = sandwich(f.xtx_inv, combined)
    eig = np.linalg.eigvalsh(combined)
    mineig = float(eig.min())
    psd = mineig >= -1e-12 * max(float(np.abs(eig).max()), 1e-300)
    return TwoWayVariance(sg, sh, sgh, combined, V, psd_flag=bool(psd),
                          min_eigenvalue=mineig, G=G, H=H, n_intersections=I)


def one_way(d: ClusteredDataset, f: FitResult, dim: int) -> VarianceEstimate:
    labels = d.cluster_id if dim == 1 else d.cluster_id2
    filling, n = _filling(d.X, f.residuals, labels, d.N, d.k)
    return VarianceEstimate(sandwich(f.xtx_inv, filling), f"CV1(dim{dim})", dof=n - 1,
                            effective_G=n)


def robust_max_se(d: ClusteredDataset, f: FitResult, j: int, beta0: float = 0.0,
                  alpha: float = 0.05, tw: TwoWayVariance | None = None) -> TestResult:
    """Largest of the two one-way and the two-way CV1 standard errors.

    The two-way candidate only competes when its diagonal entry is positive.
    The t reference uses ``min(G, H) - 1`` degrees of freedom. Provenance goes
    into ``extra``.
    """
    if tw is None:
        tw = twoway_variance(d, f)
    v1, v2 = one_way(d, f, 1), one_way(d, f, 2)
    cands = {"oneway_dim1": v1.matrix[j, j], "oneway_dim2": v2.matrix[j, j]}
    two = tw.matrix[j, j]
    ses = {name: float(np.sqrt(v)) for name, v in cands.items()}
    if two > 0:
        ses["twoway"] = float(np.sqrt(two))
    # ties resolve toward the two-way estimate
    order = ["twoway", "oneway_dim1", "oneway_dim2"]
    best = max((n for n in order if n in ses), key=lambda n: (ses[n], -order.index(n)))
    dof = min(tw.G, tw.H) - 1
    res = t_test_from_se(float(f.beta_hat[j]), ses[best], dof, beta0, alpha, method="TWOWAY-MAX")
    res.extra.update({
        "source": best,
        "se_oneway_dim1": ses["oneway_dim1"],
        "se_oneway_dim2": ses["oneway_dim2"],
        "se_twoway": ses.get("twoway", float("nan")),
        "twoway_diag": float(two),
        "twoway_negative_diag": bool(two <= 0),
        "psd_flag": tw.psd_flag,
        "min_eigenvalue": tw.min_eigenvalue,
    })
    return res
