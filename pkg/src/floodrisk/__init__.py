"""Spatial Bayesian latent-class estimation of per-tract flood risk from
noisy image classifications and sparse annotations."""
from ._backend import NAME as backend
from .apps import (AuditResult, GapReport, IndicatorTable, PlacementResult, brute_force_placement,
                   coverage_objective, gap_analysis, greedy_placement, risk_adjusted_audit)
from .baselines import (BenchmarkReport, auc, downsampling_experiment, heuristic_score,
                        laplacian_smooth, ols_fit_predict, pearson, run_benchmark)
from .geometry import TractPolygon
from .graph import TractGraph, build_adjacency, k_hop_neighborhood, laplacian, validate_graph
from .ingest import (CountTable, DropReport, FeatureMatrix, ImageRecord, RecordSet,
                     aggregate_counts, assign_images_to_tracts, downsample_annotations,
                     preprocess_features, select_annotation_sample, split_train_test)
from .model import ModelData, ModelParams, Priors, grad_log_posterior, log_posterior_unconstrained
from .posterior import (HighRiskSet, RiskSummary, confirmed_tracts, high_risk, p_any_flooded,
                        summarize)
from .sampler import HmcConfig, PosteriorDraws, ess, hmc_run, mh_reference, split_rhat
from .simulate import TruthConfig, generate_dataset, make_grid_graph, sample_icar, synthetic_counts

__version__ = "0.1.0"
