"""Nonparametric density flows for 1-D intensity normalisation.

Fit Dirichlet-process Gaussian mixtures to weighted histograms, match a
source mixture to a target by minimising their closed-form L2 divergence,
and transport the underlying values through a mass-conserving flow.
Includes affine and quantile-landmark baselines, evaluation metrics, and a
synthetic multi-centre cohort generator for end-to-end validation.
"""

from .baselines import (LANDMARK_LEVELS, LandmarkSet, PiecewiseLinearMap,
                        apply_piecewise, average_landmarks, build_piecewise,
                        extract_landmarks, nyul_normalise, save_piecewise_map)
from .dpgmm import (DpgmmConfig, GaussianMixture, fit_dpgmm, fit_dpgmm_with_trace,
                    load_mixture, mixture_pdf, prune, responsibilities, save_mixture)
from .errors import InvalidInputError, NdflowError, NumericalError
from .evalmetrics import (TissueStats, brown_forsythe, histogram_discrepancy,
                          qq_points, save_qq_points, weighted_quartiles)
from .flow import (ParameterPath, TransformTable, apply_inverse_transform,
                   apply_transform, component_velocity, integrate_flow,
                   invert_transform, load_table, mixture_velocity, save_table)
from .histogram import (AffineMap, Histogram, affine_match, apply_affine,
                        compute_moments, histogram_from_values, load_histogram,
                        load_values, save_histogram, save_values, standardize,
                        weighted_quantile)
from .l2match import (MatchResult, OptimConfig, gaussian_inner_product,
                      l2_divergence, l2_gradients, load_match, match_mixtures,
                      save_match)
from .pipeline import NormalisationResult, default_mesh_range, match_and_flow
from .synthcohort import (CohortArtifacts, CohortSpec, Distortion, Subject,
                          default_cohort_spec, export_cohort, generate_cohort,
                          run_normalisation_experiment)

__version__ = "0.1.0"
