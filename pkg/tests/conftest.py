import numpy as np
import pytest

from clusterkit.design import build_blocks, from_arrays


def ds1():
    """Six rows in clusters of sizes 1, 2, 3; X = [1, x]."""
    x = np.arange(1.0, 7.0)
    X = np.column_stack([np.ones(6), x])
    y = np.array([1.0, 1.0, 2.0, 2.0, 3.0, 4.0])
    cid = np.array([0, 1, 1, 2, 2, 2])
    return from_arrays(y, X, cid, column_names=["_cons", "x"])


def random_dataset(rng, G=8, max_size=6, k=3, min_size=1, rho=0.3, treat=None):
    """Cluster-contiguous random design with random-effects disturbances."""
    sizes = rng.integers(min_size, max_size + 1, size=G)
    cid = np.repeat(np.arange(G), sizes)
    N = cid.size
    cols = [np.ones(N)]
    if treat is not None:
        t = np.zeros(G)
        t[:treat] = 1.0
        cols.append(t[cid])
    while len(cols) < k:
        cols.append(rng.normal(size=N) + rng.normal(size=G)[cid])
    X = np.column_stack(cols)
    u = np.sqrt(rho) * rng.normal(size=G)[cid] + np.sqrt(1 - rho) * rng.normal(size=N)
    y = X @ rng.normal(size=k) + u
    return from_arrays(y, X, cid)


def random_full_rank(rng, **kw):
    """Draw until every leave-one-cluster-out X'X is invertible."""
    from clusterkit.estimator import _deletion_inverses
    while True:
        d = random_dataset(rng, **kw)
        if d.N <= d.k + 1:
            continue
        b = build_blocks(d)
        if np.linalg.matrix_rank(d.X) < d.k:
            continue
        if _deletion_inverses(b)[1].all():
            return d


def dense_cluster_scores(d, u):
    return np.array([d.X[d.rows(g)].T @ u[d.rows(g)] for g in range(d.G)])


@pytest.fixture
def ds1_data():
    return ds1()


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    from clusterkit import kernels
    if request.param == "numba" and not kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    monkeypatch.setenv("CLUSTERKIT_NUMBA", "1" if request.param == "numba" else "0")
    return request.param
