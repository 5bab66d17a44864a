"""Differentially private sketches for distance sums and kernel densities.

A sketch is built once from a private point set and then answers any number
of queries without further privacy cost.
"""

from dpsim.classify import DpClassifier, fit_classifier, predict
from dpsim.core import (DomainPromise, ParameterError, PrivacyBudget, RngStream,
                        budget_split_advanced, budget_split_pure, normalize_domain,
                        sample_laplace)
from dpsim.highdim import build_l1, build_l2, query_l1, query_l2, query_lpp
from dpsim.kde import DatasetTooSmall, DpKdeSketch, build_kde, query_kde, rff_features
from dpsim.l2sq import NoisyMoments, build_l2sq, query_l2sq
from dpsim.onedim import Interval, NoisyTree, build_tree, distance_query, lp_distance_query, noisy_count
from dpsim.oracle import ErrorReport, error_report, exact_distance_sum, exact_kde
from dpsim.projections import ProjectionSpec, apply_projection, choose_kde_projection_dim
from dpsim.smooth import ExpSumApprox, SmoothKdeSketch, build_smooth_kde, exp_sum_approx, query_smooth_kde

__version__ = "0.1.0"
