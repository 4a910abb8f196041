"""Closed-form infinite-width kernels for stochastic discount factor estimation.

The package covers the pipeline from characteristics panels to out-of-sample
SDF returns:

* ``activations`` — closed-form Gaussian duals of ReLU / erf nonlinearities
* ``kernels``     — layer recursions for the limiting NNGP and tangent kernels
* ``panel``       — panel ingestion, rank standardization, synthetic data
* ``ptk``         — managed-portfolio kernel assembly (chunked, cacheable)
* ``solver``      — ridge / gradient-flow weights and random-feature SDFs
* ``mlp``         — finite-width networks for validating the limits
* ``featlearn``   — learned-metric kernels via gradient outer products
* ``backtest``    — rolling out-of-sample evaluation across a model grid
* ``report``      — delimited outputs and figures
"""

from .activations import ActivationKind, dual_activation, apply_activation, activation_derivative
from .kernels import (ArchitectureSpec, KernelKind, KernelMatrix, KERNEL_CHOICES,
                      kernel_gram, nngp_step, ntk_recursion)
from .panel import (CsvSchema, IngestReport, PanelDataset, SynthSpec,
                    ingest_csv, load_panel, panel_to_csv, rank_standardize,
                    save_panel, synth_panel)
from .ptk import (ChunkPlan, NormalizationSpec, assemble_is_kernel,
                  cross_kernel_row, default_cache_dir, load_kernel, ptk_entry,
                  save_kernel)
from .solver import (FactorPanel, RandomFeatureSdf, SdfWeights, gd_weights,
                     random_feature_sdf, ridge_weights, ridge_weights_grid,
                     sdf_return, shrinkage_profile)
from .mlp import (GpPosterior, MlpParams, NngpTestReport, empirical_ntk,
                  forward, gp_posterior, grad_theta, init_mlp,
                  nngp_distribution_test, ntk_convergence_errors)
from .featlearn import (FeatLearnResult, MetricMatrix, RadialProfile, agop,
                        alternate_fit, gaussian_profile, get_profile, grad_w,
                        laplace_profile, mahalanobis_is_kernel,
                        mahalanobis_kernel_gram, sdf_objective)
from .backtest import (AlphaStats, BacktestCell, BacktestConfig, BacktestReport,
                       alpha_regression, rolling_backtest, sharpe)
from .report import emit_report, read_report_json
from .config import build_backtest_config, load_config, parse_config_text, render_config

__version__ = "0.1.0"

__all__ = [
    "ActivationKind", "dual_activation", "apply_activation", "activation_derivative",
    "ArchitectureSpec", "KernelKind", "KernelMatrix", "KERNEL_CHOICES",
    "kernel_gram", "nngp_step", "ntk_recursion",
    "CsvSchema", "IngestReport", "PanelDataset", "SynthSpec",
    "ingest_csv", "load_panel", "panel_to_csv", "rank_standardize",
    "save_panel", "synth_panel",
    "ChunkPlan", "NormalizationSpec", "assemble_is_kernel", "cross_kernel_row",
    "default_cache_dir", "load_kernel", "ptk_entry", "save_kernel",
    "FactorPanel", "RandomFeatureSdf", "SdfWeights", "gd_weights",
    "random_feature_sdf", "ridge_weights", "ridge_weights_grid",
    "sdf_return", "shrinkage_profile",
    "GpPosterior", "MlpParams", "NngpTestReport", "empirical_ntk",
    "forward", "gp_posterior", "grad_theta", "init_mlp",
    "nngp_distribution_test", "ntk_convergence_errors",
    "FeatLearnResult", "MetricMatrix", "RadialProfile", "agop",
    "alternate_fit", "gaussian_profile", "get_profile", "grad_w",
    "mahalanobis_is_kernel", "mahalanobis_kernel_gram", "sdf_objective",
    "AlphaStats", "BacktestCell", "BacktestConfig", "BacktestReport",
    "alpha_regression", "rolling_backtest", "sharpe",
    "emit_report", "read_report_json",
    "build_backtest_config", "load_config", "parse_config_text", "render_config",
    "__version__",
]
