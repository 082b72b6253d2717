"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``CLUSTERKIT_NUMBA`` is not
set to ``0``. Both paths take and return plain float64/int64 arrays and are
checked against each other in the test suite.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None
PAIRS_TOL = 1e-10


def numba_enabled() -> bool:
    return HAVE_NUMBA and os.environ.get("CLUSTERKIT_NUMBA", "1") != "0"


def backend_name() -> str:
    return "numba" if numba_enabled() else "numpy"


# --------------------------------------------------------------------------
# Wild bootstrap t statistics.
#
# With q_g = a_j's_g and C[g, h] = (X_g'X_g a_j)' A s_h, a replicate with
# weights v has numerator q'v and CV1 variance scale * sum_g (v_g q_g - (Cv)_g)^2.
# --------------------------------------------------------------------------

def wild_tstats_numpy(V, q, C, scale):
    num = V @ q
    r = V * q[None, :] - V @ C.T
    var = scale * np.einsum("bg,bg->b", r, r)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(var > 0, num / np.sqrt(var), np.nan)
    return num, t


def _wild_tstats_loop(V, q, C, scale):
    B, G = V.shape
    num = np.empty(B)
    t = np.empty(B)
    CV = np.dot(V, C.T)  # BLAS; the naive triple loop is several times slower
    for b in range(B):
        n = 0.0
        acc = 0.0
        for g in range(G):
            n += V[b, g] * q[g]
            r = V[b, g] * q[g] - CV[b, g]
            acc += r * r
        var = scale * acc
        num[b] = n
        t[b] = n / np.sqrt(var) if var > 0 else np.nan
    return num, t


# --------------------------------------------------------------------------
# Pairs cluster bootstrap: resample (X_g'X_g, X_g'y_g) pairs.
# --------------------------------------------------------------------------

def pairs_tstats_numpy(xtx_g, xty_g, sizes, idx, j, beta_j, ref_diag):
    B, G = idx.shape
    k = xtx_g.shape[1]
    A = xtx_g[idx].sum(axis=1)
    c = xty_g[idx].sum(axis=1)
    n_star = sizes[idx].sum(axis=1).astype(np.float64)
    d = np.einsum("bii->bi", A)
    ok = np.all(d > PAIRS_TOL * ref_diag[None, :], axis=1)
    s = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    scaled = A * s[:, :, None] * s[:, None, :]
    ev = np.linalg.eigvalsh(scaled)
    ok &= ev[:, 0] > PAIRS_TOL * ev[:, -1]
    beta_star = np.full(B, np.nan)
    t = np.full(B, np.nan)
    if ok.any():
        Ao, co = A[ok], c[ok]
        bstar = np.linalg.solve(Ao, co[:, :, None])[:, :, 0]
        e = np.zeros((Ao.shape[0], k, 1))
        e[:, j, 0] = 1.0
        aj = np.linalg.solve(Ao, e)[:, :, 0]
        sub_xty = xty_g[idx[ok]]
        sub_xtx = xtx_g[idx[ok]]
        scores = sub_xty - np.einsum("bgij,bj->bgi", sub_xtx, bstar)
        proj = np.einsum("bgi,bi->bg", scores, aj)
        n = n_star[ok]
        scale = G * (n - 1.0) / ((G - 1.0) * (n - k))
        var = scale * np.einsum("bg,bg->b", proj, proj)
        bj = bstar[:, j]
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = np.where(var > 0, (bj - beta_j) / np.sqrt(var), np.nan)
        beta_star[ok] = bj
        t[ok] = tt
    return beta_star, t, ok


def _pairs_tstats_loop(xtx_g, xty_g, sizes, idx, j, beta_j, ref_diag):
    B, G = idx.shape
    k = xtx_g.shape[1]
    beta_star = np.full(B, np.nan)
    t = np.full(B, np.nan)
    ok = np.zeros(B, dtype=np.bool_)
    A = np.empty((k, k))
    c = np.empty(k)
    scaled = np.empty((k, k))
    e = np.zeros(k)
    e[j] = 1.0
    for b in range(B):
        A[:, :] = 0.0
        c[:] = 0.0
        n_star = 0.0
        for m in range(G):
            g = idx[b, m]
            A += xtx_g[g]
            c += xty_g[g]
            n_star += sizes[g]
        good = True
        for i in range(k):
            if not A[i, i] > PAIRS_TOL * ref_diag[i]:
                good = False
        if not good:
            continue
        for i in range(k):
            for l in range(k):
                scaled[i, l] = A[i, l] / np.sqrt(A[i, i] * A[l, l])
        ev = np.linalg.eigvalsh(scaled)
        if not ev[0] > PAIRS_TOL * ev[k - 1]:
            continue
        bstar = np.linalg.solve(A, c)
        aj = np.linalg.solve(A, e)
        acc = 0.0
        for m in range(G):
            g = idx[b, m]
            p = 0.0
            for i in range(k):
                si = xty_g[g, i]
                for l in range(k):
                    si -= xtx_g[g, i, l] * bstar[l]
                p += si * aj[i]
            acc += p * p
        scale = G * (n_star - 1.0) / ((G - 1.0) * (n_star - k))
        var = scale * acc
        ok[b] = True
        beta_star[b] = bstar[j]
        t[b] = (bstar[j] - beta_j) / np.sqrt(var) if var > 0 else np.nan
    return beta_star, t, ok


# --------------------------------------------------------------------------
# Score-variance statistics for a batch of fine-cluster score vectors.
# --------------------------------------------------------------------------

def sv_stats_numpy(F, coarse_of_fine, n_coarse, m):
    B, H = F.shape
    ind = np.zeros((H, n_coarse))
    ind[np.arange(H), coarse_of_fine] = 1.0
    sums = F @ ind
    sq = (F * F) @ ind
    theta_g = m * (sums * sums - sq)
    theta = theta_g.sum(axis=1)
    sd = np.sqrt(np.einsum("bg,bg->b", theta_g, theta_g))
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(sd > 0, theta / sd, np.nan)
    return theta, stat


def _sv_stats_loop(F, coarse_of_fine, n_coarse, m):
    B, H = F.shape
    theta = np.empty(B)
    stat = np.empty(B)
    sums = np.empty(n_coarse)
    sq = np.empty(n_coarse)
    for b in range(B):
        sums[:] = 0.0
        sq[:] = 0.0
        for h in range(H):
            g = coarse_of_fine[h]
            sums[g] += F[b, h]
            sq[g] += F[b, h] * F[b, h]
        th = 0.0
        ss = 0.0
        for g in range(n_coarse):
            tg = m * (sums[g] * sums[g] - sq[g])
            th += tg
            ss += tg * tg
        theta[b] = th
        stat[b] = th / np.sqrt(ss) if ss > 0 else np.nan
    return theta, stat


if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)
    wild_tstats_numba = _jit(_wild_tstats_loop)
    pairs_tstats_numba = _jit(_pairs_tstats_loop)
    sv_stats_numba = _jit(_sv_stats_loop)
else:  # pragma: no cover
    wild_tstats_numba = _wild_tstats_loop
    pairs_tstats_numba = _pairs_tstats_loop
    sv_stats_numba = _sv_stats_loop


def wild_tstats(V, q, C, scale):
    """Numerators ``delta*_j`` and CV1 t statistics for weight rows ``V``."""
    V = np.ascontiguousarray(V, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    if numba_enabled():
        return wild_tstats_numba(V, q, C, float(scale))
    return wild_tstats_numpy(V, q, C, float(scale))


def pairs_tstats(xtx_g, xty_g, sizes, idx, j, beta_j, ref_diag):
    """``beta*_j``, CV1 t statistics centred at ``beta_j`` and validity flags."""
    args = (np.ascontiguousarray(xtx_g, dtype=np.float64),
            np.ascontiguousarray(xty_g, dtype=np.float64),
            np.ascontiguousarray(sizes, dtype=np.float64),
            np.ascontiguousarray(idx, dtype=np.int64),
            int(j), float(beta_j),
            np.ascontiguousarray(ref_diag, dtype=np.float64))
    if numba_enabled():
        return pairs_tstats_numba(*args)
    return pairs_tstats_numpy(*args)


def sv_stats(F, coarse_of_fine, n_coarse, m):
    """Score-variance numerators and statistics for each row of fine scores."""
    F = np.ascontiguousarray(F, dtype=np.float64)
    cf = np.ascontiguousarray(coarse_of_fine, dtype=np.int64)
    if numba_enabled():
        return sv_stats_numba(F, cf, int(n_coarse), float(m))
    return sv_stats_numpy(F, cf, int(n_coarse), float(m))
