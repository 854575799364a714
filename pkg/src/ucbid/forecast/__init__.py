"""Time-series forecasting: ARIMAX fits, path sampling, scenario clustering."""
from .arimax import (ArimaxFit, ArimaxSpec, FitError, PathEnsemble,
                     difference, fit_arimax, grid_search_aic,
                     integrate_differences, load_fit, point_forecast,
                     sample_paths, save_fit)
from .clustering import ClusteredScenarios, kmeans_cluster
from .pipeline import PipelineResult, run_pipeline
from .transforms import (TransformParams, asinh_transform, asinh_inverse,
                         fit_transform_params, fourier_features,
                         seasonal_features)

__all__ = [
    "ArimaxFit", "ArimaxSpec", "FitError", "PathEnsemble",
    "difference", "fit_arimax", "grid_search_aic", "integrate_differences",
    "load_fit", "point_forecast", "sample_paths", "save_fit",
    "ClusteredScenarios", "kmeans_cluster",
    "PipelineResult", "run_pipeline",
    "TransformParams", "asinh_transform", "asinh_inverse",
    "fit_transform_params", "fourier_features", "seasonal_features",
]
