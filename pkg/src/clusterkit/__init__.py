"""Cluster-robust inference for linear regression.

Sandwich and jackknife variance estimators, wild and pairs cluster
bootstraps, a score-variance test for the clustering level, two-way
clustering, heterogeneity diagnostics, and targeted Monte Carlo and placebo
experiments.
"""

__version__ = "0.1.0"

from .design import ClusterBlocks, ClusteredDataset, ColumnSpec, build_blocks, from_arrays, load_dataset
from .estimator import Restriction, jackknife_estimates, modified_scores, ols_fit, restricted_fit
from .crve import cv1, cv2, cv3, hc, t_test
from .bootstrap import BootstrapPlan, pairs_bootstrap, run_bootstrap, wild_bootstrap
from .svtest import nest, score_variance_bootstrap, score_variance_test
from .twoway import robust_max_se, twoway_variance
from .diagnostics import partial_leverage_profile, red_flag_report
from .simulate import McDesign, PlaceboDesign, run_monte_carlo, run_placebo_study

__all__ = [
    "BootstrapPlan", "ClusterBlocks", "ClusteredDataset", "ColumnSpec", "McDesign",
    "PlaceboDesign", "Restriction", "build_blocks", "cv1", "cv2", "cv3", "from_arrays", "hc",
    "jackknife_estimates", "load_dataset", "modified_scores", "nest", "ols_fit",
    "pairs_bootstrap", "partial_leverage_profile", "red_flag_report", "restricted_fit",
    "robust_max_se", "run_bootstrap", "run_monte_carlo", "run_placebo_study",
    "score_variance_bootstrap", "score_variance_test", "t_test", "twoway_variance",
    "wild_bootstrap",
]
