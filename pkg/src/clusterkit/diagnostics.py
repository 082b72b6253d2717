"""Cluster heterogeneity diagnostics and red-flag reporting."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .crve import TestResult, cv1, t_test
from .design import ClusteredDataset, build_blocks, from_arrays
from .errors import DegenerateTreatment, MethodError, ZeroPartialVariance
from .estimator import FitResult, JackknifeSet, jackknife_estimates, ols_fit, partial_out

G_STAR_CONVENTION = "G*(0), cv-squared convention: G / (1 + V_s)"


@dataclass(frozen=True)
class LeverageProfile:
    L: np.ndarray
    V_s: float
    G_star0: float
    coef_name: str
    convention: str = G_STAR_CONVENTION


def partial_leverage_profile(d: ClusteredDataset, j: int) -> LeverageProfile:
    """Per-cluster share of the partialled-out sum of squares of regressor j."""
    z = partial_out(d.X, j)
    total = float(z @ z)
    xj = d.X[:, j]
    if total <= 1e-12 * float(xj @ xj):
        raise ZeroPartialVariance(f"{d.column_names[j]} is collinear with the other regressors")
    L = np.bincount(d.cluster_id, weights=z * z, minlength=d.G) / total
    G = d.G
    V_s = float(G ** 2 / (G - 1) * np.sum((L - 1.0 / G) ** 2))
    return LeverageProfile(L=L, V_s=V_s, G_star0=G / (1.0 + V_s), coef_name=d.column_names[j])


@dataclass(frozen=True)
class ClusterVarianceProfile:
    sigma2: np.ndarray  # NaN for singleton clusters
    available: np.ndarray
    cv: float


def cluster_variance_profile(d: ClusteredDataset, f: FitResult) -> ClusterVarianceProfile:
    u = f.residuals
    sigma2 = np.full(d.G, np.nan)
    for g in range(d.G):
        ug = u[d.rows(g)]
        if ug.size >= 2:
            sigma2[g] = np.sum((ug - ug.mean()) ** 2) / (ug.size - 1)
    ok = np.isfinite(sigma2)
    vals = sigma2[ok]
    cv = float(vals.std() / vals.mean()) if vals.size and vals.mean() > 0 else float("nan")
    return ClusterVarianceProfile(sigma2=sigma2, available=ok, cv=cv)


def treatment_variance_test(d: ClusteredDataset, f: FitResult, treatment: np.ndarray | int,
                            alpha: float = 0.05) -> TestResult:
    """Regress squared residuals on a constant and the treatment dummy.

    Returns the CV1 t test of the dummy's coefficient at the dataset's
    clustering; ``extra`` carries both coefficients and their ratio.
    """
    T = d.X[:, treatment] if np.ndim(treatment) == 0 else np.asarray(treatment, dtype=float)
    if not np.all((T == 0) | (T == 1)):
        raise DegenerateTreatment("treatment must be a 0/1 dummy")
    if T.min() == T.max():
        raise DegenerateTreatment("all observations are treated" if T[0] == 1 else
                                  "no observation is treated")
    Z = np.column_stack([np.ones(d.N), T])
    aux = from_arrays(f.residuals ** 2, Z, d.cluster_id, column_names=["eta1", "eta2"])
    b = build_blocks(aux)
    fa = ols_fit(b)
    res = t_test(cv1(b, fa), fa, 1, 0.0, alpha)
    eta1, eta2 = float(fa.beta_hat[0]), float(fa.beta_hat[1])
    res.extra.update({"eta1": eta1, "eta2": eta2,
                      "ratio": eta2 / eta1 if eta1 != 0 else float("nan")})
    return res


@dataclass(frozen=True)
class OmitOneDispersion:
    deltas: np.ndarray  # NaN for non-computable deletions
    iqr: float
    flagged: tuple[int, ...]
    max_cluster: int


def omit_one_dispersion(jk: JackknifeSet, f: FitResult, j: int,
                        iqr_mult: float = 3.0) -> OmitOneDispersion:
    deltas = jk.beta_g[:, j] - f.beta_hat[j]
    ok = np.isfinite(deltas)
    q1, q3 = np.percentile(deltas[ok], [25, 75])
    iqr = float(q3 - q1)
    flagged = tuple(int(g) for g in np.flatnonzero(ok & (np.abs(np.nan_to_num(deltas)) > iqr_mult * iqr)))
    max_cluster = int(np.nanargmax(np.abs(deltas)))
    return OmitOneDispersion(deltas=deltas, iqr=iqr, flagged=flagged, max_cluster=max_cluster)


@dataclass
class FlagThresholds:
    min_clusters: int = 20
    min_treated_clusters: int = 6
    max_cluster_share: float = 0.25
    min_g_star_ratio: float = 1.0 / 3.0
    max_variance_cv: float = 1.0
    eta_p: float = 0.05
    eta_ratio: float = 0.5
    omit_one_iqr: float = 3.0


@dataclass
class RedFlagReport:
    G: int
    N: int
    cluster_sizes: dict
    G1: int | None
    G0: int | None
    leverage: LeverageProfile | None
    variance: ClusterVarianceProfile | None
    treatment_test: TestResult | None
    omit_one: OmitOneDispersion | None
    flags: list[str]
    thresholds: FlagThresholds
    notes: list[str] = field(default_factory=list)
    missing: dict = field(default_factory=dict)

    def thresholds_dict(self) -> dict:
        return asdict(self.thresholds)


def red_flag_report(d: ClusteredDataset, f: FitResult, j: int, treatment: int | None = None,
                    thresholds: FlagThresholds | None = None) -> RedFlagReport:
    """Run every diagnostic that can be computed and apply the flag thresholds.

    A diagnostic that fails is recorded under ``missing`` instead of aborting.
    """
    th = thresholds or FlagThresholds()
    if treatment is None:
        treatment = d.treatment_col
    sizes = d.sizes
    flags: list[str] = []
    missing: dict = {}
    notes = [G_STAR_CONVENTION, "t reference uses G-1 degrees of freedom"]
    share = float(sizes.max() / d.N)
    size_summary = {"min": int(sizes.min()), "median": float(np.median(sizes)),
                    "max": int(sizes.max()), "largest_share": share}

    if d.G < th.min_clusters:
        flags.append("FewClusters")
    if share > th.max_cluster_share:
        flags.append("DominantCluster")

    G1 = G0 = None
    if treatment is not None:
        T = d.X[:, treatment]
        treated = np.bincount(d.cluster_id, weights=(T != 0).astype(float), minlength=d.G) > 0
        G1 = int(treated.sum())
        G0 = d.G - G1
        if G1 < th.min_treated_clusters:
            flags.append("FewTreatedClusters")
        if G0 < th.min_treated_clusters:
            flags.append("FewControlClusters")

    lev = None
    try:
        lev = partial_leverage_profile(d, j)
        if lev.G_star0 < th.min_g_star_ratio * d.G:
            flags.append("LowEffectiveClusters")
    except MethodError as exc:
        missing["leverage"] = str(exc)

    var = cluster_variance_profile(d, f)
    if np.isfinite(var.cv) and var.cv > th.max_variance_cv:
        flags.append("HighVarianceSpread")
    if not var.available.all():
        notes.append("singleton clusters have no within-cluster variance")

    tt = None
    if treatment is not None:
        try:
            tt = treatment_variance_test(d, f, treatment)
            if tt.p_value < th.eta_p and tt.extra["ratio"] > th.eta_ratio:
                flags.append("TreatmentVariance")
        except MethodError as exc:
            missing["treatment_variance"] = str(exc)

    omit = None
    try:
        jk = jackknife_estimates(build_blocks(d), f)
        omit = omit_one_dispersion(jk, f, j, th.omit_one_iqr)
        if omit.flagged:
            flags.append("ExtremeOmitOne")
        if not jk.computable.all():
            notes.append("some leave-one-cluster-out fits are singular")
    except MethodError as exc:
        missing["omit_one"] = str(exc)

    return RedFlagReport(G=d.G, N=d.N, cluster_sizes=size_summary, G1=G1, G0=G0, leverage=lev,
                         variance=var, treatment_test=tt, omit_one=omit, flags=flags,
                         thresholds=th, notes=notes, missing=missing)
