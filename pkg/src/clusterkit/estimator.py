"""OLS and restricted OLS on cluster blocks, jackknife and modified scores."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .design import ClusterBlocks
from .errors import AllDeletionsSingular, NotComputable, RankDeficient

RANK_TOL = 1e-10


@dataclass(frozen=True)
class Restriction:
    coef_index: int
    value: float = 0.0


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    residuals: np.ndarray
    scores: np.ndarray  # (G, k), row g is X_g' u_g
    xtx_inv: np.ndarray


@dataclass(frozen=True)
class RestrictedFit:
    beta_tilde: np.ndarray
    residuals_tilde: np.ndarray
    scores_tilde: np.ndarray
    restriction: Restriction


@dataclass(frozen=True)
class JackknifeSet:
    beta_g: np.ndarray  # (G, k); rows of non-computable deletions are NaN
    computable: np.ndarray  # (G,) bool
    mod_scores: np.ndarray  # (G, k) acute scores X'X (beta_hat - beta_g)

    @property
    def n_computable(self) -> int:
        return int(self.computable.sum())


def is_full_rank(m: np.ndarray, tol: float = RANK_TOL, ref_diag=None) -> bool:
    """Pivot test on the equilibrated matrix.

    ``m`` is scaled to unit diagonal and Cholesky-factored; it counts as full
    rank when every squared pivot exceeds ``tol`` times the largest one. A
    column whose diagonal has shrunk below ``tol * ref_diag`` (e.g. after a
    cluster deletion) counts as vanished.
    """
    if m.shape[0] == 0:
        return True
    d = np.diag(m)
    ref = d if ref_diag is None else ref_diag
    if not np.all(d > tol * ref) or not np.all(d > 0):
        return False
    s = 1.0 / np.sqrt(d)
    try:
        L = np.linalg.cholesky(m * s[:, None] * s[None, :])
    except np.linalg.LinAlgError:
        return False
    piv = np.diag(L) ** 2
    return bool(piv.min() > tol * piv.max())


def _inverse(m: np.ndarray, what: str) -> np.ndarray:
    if not is_full_rank(m):
        raise RankDeficient(f"{what} is singular or nearly so")
    inv = np.linalg.inv(m)
    return 0.5 * (inv + inv.T)


def xtx_inverse(b: ClusterBlocks) -> np.ndarray:
    inv = b.cache.get("xtx_inv")
    if inv is None:
        inv = _inverse(b.xtx, "X'X")
        b.cache["xtx_inv"] = inv
    return inv


def cluster_scores(b: ClusterBlocks, beta: np.ndarray) -> np.ndarray:
    """``X_g'(y_g - X_g beta)`` for every cluster, from the blocks alone."""
    return b.xty_g - b.xtx_g @ beta


def ols_fit(b: ClusterBlocks) -> FitResult:
    inv = xtx_inverse(b)
    beta = inv @ b.xty
    resid = b.data.y - b.data.X @ beta
    return FitResult(beta_hat=beta, residuals=resid, scores=cluster_scores(b, beta),
                     xtx_inv=inv)


def _free_columns(k: int, j: int) -> np.ndarray:
    return np.array([c for c in range(k) if c != j], dtype=np.int64)


def restricted_fit(b: ClusterBlocks, r: Restriction) -> RestrictedFit:
    """OLS subject to ``beta_j = value``.

    Regresses ``y - value * x_j`` on the remaining columns and reassembles the
    full k-vector, so the scores keep all k elements.
    """
    j, k = r.coef_index, b.k
    free = _free_columns(k, j)
    beta = np.zeros(k)
    beta[j] = r.value
    if free.size:
        key = ("restricted_inv", j)
        inv = b.cache.get(key)
        if inv is None:
            inv = _inverse(b.xtx[np.ix_(free, free)], "restricted X'X")
            b.cache[key] = inv
        rhs = b.xty[free] - b.xtx[free, j] * r.value
        beta[free] = inv @ rhs
    resid = b.data.y - b.data.X @ beta
    return RestrictedFit(beta_tilde=beta, residuals_tilde=resid,
                         scores_tilde=cluster_scores(b, beta), restriction=r)


def _deletion_inverses(b: ClusterBlocks, cols: np.ndarray | None = None):
    """Inverses of ``A - A_g`` over the chosen columns, with computability flags."""
    key = ("deletion_inv", None if cols is None else tuple(cols.tolist()))
    hit = b.cache.get(key)
    if hit is not None:
        return hit
    if cols is None:
        total, blocks = b.xtx, b.xtx_g
    else:
        ix = np.ix_(cols, cols)
        total, blocks = b.xtx[ix], b.xtx_g[:, cols][:, :, cols]
    G, m = blocks.shape[0], total.shape[0]
    invs = np.full((G, m, m), np.nan)
    ok = np.zeros(G, dtype=bool)
    for g in range(G):
        dm = total - blocks[g]
        if is_full_rank(dm, ref_diag=np.diag(total)):
            inv = np.linalg.inv(dm)
            invs[g] = 0.5 * (inv + inv.T)
            ok[g] = True
    b.cache[key] = (invs, ok)
    return invs, ok


def jackknife_estimates(b: ClusterBlocks, f: FitResult) -> JackknifeSet:
    """Leave-one-cluster-out estimates; singular deletions are flagged, not fatal."""
    invs, ok = _deletion_inverses(b)
    if not ok.any():
        raise AllDeletionsSingular("every leave-one-cluster-out X'X is singular")
    rhs = b.xty[None, :] - b.xty_g
    beta_g = np.einsum("gij,gj->gi", invs, rhs)
    beta_g[~ok] = np.nan
    acute = (f.beta_hat[None, :] - beta_g) @ b.xtx.T
    return JackknifeSet(beta_g=beta_g, computable=ok.copy(), mod_scores=acute)


def modified_scores(b: ClusterBlocks, f: FitResult, j: JackknifeSet | None = None,
                    mode: str | RestrictedFit = "unrestricted") -> np.ndarray:
    """Jackknife-corrected cluster scores.

    ``mode="unrestricted"`` gives ``X'X (beta_hat - beta^(g))``, which equals
    ``X_g' M_gg^{-1} u_g``. Passing a :class:`RestrictedFit` gives the
    restricted analog ``X_g' Mr_gg^{-1} u~_g`` where ``Mr`` annihilates every
    regressor except the restricted one. That product is evaluated through the
    Woodbury form ``Mr_gg^{-1} = I + X1_g (X1'X1 - X1_g'X1_g)^{-1} X1_g'``,
    which only needs the blocks.
    """
    if isinstance(mode, str):
        if mode != "unrestricted":
            raise ValueError(f"unknown mode {mode!r}")
        if j is None:
            j = jackknife_estimates(b, f)
        if not j.computable.all():
            bad = np.flatnonzero(~j.computable).tolist()
            raise NotComputable(f"modified scores undefined for clusters {bad}")
        return j.mod_scores
    rf = mode
    jj = rf.restriction.coef_index
    free = _free_columns(b.k, jj)
    s = rf.scores_tilde
    if free.size == 0:
        return s.copy()
    invs, ok = _deletion_inverses(b, free)
    if not ok.all():
        bad = np.flatnonzero(~ok).tolist()
        raise NotComputable(f"restricted modified scores undefined for clusters {bad}")
    cross = b.xtx_g[:, :, free]  # X_g' X1_g, (G, k, k-1)
    inner = np.einsum("gij,gj->gi", invs, s[:, free])
    return s + np.einsum("gij,gj->gi", cross, inner)


def annihilator_block(b: ClusterBlocks, g: int, cols: np.ndarray | None = None) -> np.ndarray:
    """Explicit ``M_gg = I - X_g (X'X)^{-1} X_g'`` (optionally for a column subset)."""
    X = b.data.X
    if cols is not None:
        X = X[:, cols]
    Xg = X[b.data.rows(g)]
    if cols is None:
        inv = xtx_inverse(b)
    else:
        inv = _inverse(X.T @ X, "X'X subset")
    return np.eye(Xg.shape[0]) - Xg @ inv @ Xg.T


def warn_dropped(ok: np.ndarray, what: str) -> None:
    if not ok.all():
        bad = np.flatnonzero(~ok).tolist()
        warnings.warn(f"{what}: leaving out cluster(s) {bad} makes X'X singular; "
                      "they are excluded", RuntimeWarning, stacklevel=3)


def partial_out(X: np.ndarray, j: int) -> np.ndarray:
    """Residuals from regressing column j of X on the other columns."""
    others = [c for c in range(X.shape[1]) if c != j]
    xj = X[:, j]
    if not others:
        return xj.copy()
    Xo = X[:, others]
    inv = _inverse(Xo.T @ Xo, "X'X without the tested column")
    return xj - Xo @ (inv @ (Xo.T @ xj))
