"""One-shot distributed estimation and inference for transelliptical graphical models."""
from .aggregate import ThresholdConfig, average, debias, default_threshold, hard_threshold
from .clime import ClimeConfig, PrecisionEstimate, SolverError, clime_column, clime_estimate, default_lambda
from .core import ErrorReport, SupportSet, error_report, f1_score, matrix_norms, support
from .inference import (PairVariance, TestResult, confidence_interval, gaussian_variance, normal_cdf,
                        normal_quantile, test_statistic, variance_estimate, wald_test)
from .rank_corr import kendall_tau, kendall_tau_fast, latent_correlation, sample_covariance
from .runtime import PipelineConfig, run_pipeline
from .synth import GraphSpec, GroundTruth, generate_precision, plant_entry, sample_model

__version__ = "0.1.0"
