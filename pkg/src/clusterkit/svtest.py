"""Score-variance test of fine against coarse clustering for one coefficient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, rng
from .crve import normal_sf
from .design import ClusteredDataset, dense_labels
from .errors import InvalidNesting
from .estimator import _inverse, partial_out


@dataclass(frozen=True)
class NestedClustering:
    fine_id: np.ndarray  # per row, 0..H-1
    coarse_of_fine: np.ndarray  # per fine cluster, 0..G-1
    n_coarse: int

    @property
    def n_fine(self) -> int:
        return self.coarse_of_fine.shape[0]

    @property
    def fine_per_coarse(self) -> np.ndarray:
        return np.bincount(self.coarse_of_fine, minlength=self.n_coarse)


def nest(coarse_labels, fine_labels) -> NestedClustering:
    """Check that every fine cluster sits inside one coarse cluster."""
    coarse, _ = dense_labels(list(coarse_labels))
    fine, _ = dense_labels(list(fine_labels))
    H = int(fine.max()) + 1
    owner = np.full(H, -1, dtype=np.int64)
    for f, c in zip(fine, coarse):
        if owner[f] == -1:
            owner[f] = c
        elif owner[f] != c:
            raise InvalidNesting(f"fine cluster {f} spans more than one coarse cluster")
    return NestedClustering(fine_id=fine, coarse_of_fine=owner, n_coarse=int(coarse.max()) + 1)


@dataclass
class SvResult:
    theta_hat: float
    sv_stat: float
    p_asymptotic: float | None
    p_bootstrap: float | None
    theta_g: np.ndarray
    degenerate: bool = False
    B: int = 0


class _SvSetup:
    def __init__(self, d: ClusteredDataset, nesting: NestedClustering, j: int):
        X, y = d.X, d.y
        if nesting.fine_id.shape[0] != d.N:
            raise InvalidNesting("nesting labels do not match the number of rows")
        self.nesting = nesting
        self.A = _inverse(X.T @ X, "X'X")
        self.beta = self.A @ (X.T @ y)
        self.u = y - X @ self.beta
        self.z = partial_out(X, j)
        H = nesting.n_fine
        fid = nesting.fine_id
        self.s_fine = np.bincount(fid, weights=self.z * self.u, minlength=H)
        self.m = 1.0 / d.N
        # bootstrap pieces: full fine scores X_h'u_h and z_h'X_h
        k = X.shape[1]
        self.S_full = np.zeros((H, k))
        self.ZX = np.zeros((H, k))
        np.add.at(self.S_full, fid, X * self.u[:, None])
        np.add.at(self.ZX, fid, X * self.z[:, None])

    def stats(self, F: np.ndarray):
        n = self.nesting
        return kernels.sv_stats(F, n.coarse_of_fine, n.n_coarse, self.m)


def score_variance_test(d: ClusteredDataset, nesting: NestedClustering, j: int) -> SvResult:
    """Asymptotic score-variance test; upper-tail standard normal P value.

    Both variance estimates use the common scale ``1/N``. When every coarse
    cluster contains a single fine cluster the numerator is identically zero
    and the result is marked ``degenerate`` with no P value.
    """
    s = _SvSetup(d, nesting, j)
    theta, stat = s.stats(s.s_fine[None, :])
    sums = np.bincount(nesting.coarse_of_fine, weights=s.s_fine, minlength=nesting.n_coarse)
    sq = np.bincount(nesting.coarse_of_fine, weights=s.s_fine ** 2, minlength=nesting.n_coarse)
    theta_g = s.m * (sums * sums - sq)
    if np.all(nesting.fine_per_coarse == 1):
        return SvResult(float(theta[0]), float("nan"), None, None, theta_g, degenerate=True)
    st = float(stat[0])
    p = float(normal_sf(st)) if np.isfinite(st) else None
    return SvResult(float(theta[0]), st, p, None, theta_g)


def score_variance_bootstrap(d: ClusteredDataset, nesting: NestedClustering, j: int,
                             B: int = 999, seed: int = 0, threads: int | None = None) -> SvResult:
    """Score-variance test with a WCU-C bootstrap P value under fine clustering.

    Each replicate multiplies the OLS residuals of fine cluster h by a
    Rademacher draw, re-fits, and recomputes the statistic; the P value is the
    share of bootstrap statistics at least as large as the actual one.
    """
    res = score_variance_test(d, nesting, j)
    if res.degenerate:
        return res
    s = _SvSetup(d, nesting, j)
    D = s.ZX @ s.A @ s.S_full.T  # (H, H)
    H = nesting.n_fine

    def work(item):
        c, start, stop = item
        V = rng.weight_rows("rademacher", H, seed, rng.STREAM_SVBOOT, c, stop - start)
        F = V * s.s_fine[None, :] - V @ D.T
        return s.stats(F)[1]

    stat_star = np.concatenate(rng.pmap(work, rng.chunk_bounds(B), threads))
    stat_star = stat_star[np.isfinite(stat_star)]
    res.p_bootstrap = float(np.count_nonzero(stat_star >= res.sv_stat) / stat_star.size)
    res.B = int(stat_star.size)
    return res
