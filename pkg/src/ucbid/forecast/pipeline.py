"""End-to-end scenario generation for one input series.

Order of operations matters and is recorded in the audit list: prices are
transformed first, fitting/sampling/clustering all happen in transformed
space, and only the final centroids are mapped back to original units.
"""
from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Iterable

import numpy as np

from .arimax import (ArimaxFit, ArimaxSpec, fit_arimax, grid_search_aic,
                     sample_paths)
from .clustering import ClusteredScenarios, kmeans_cluster
from .transforms import (TransformParams, asinh_inverse, asinh_transform,
                         fit_transform_params)


@dataclass
class PipelineResult:
    clusters: ClusteredScenarios
    fit: ArimaxFit
    transform: TransformParams | None
    audit: tuple[str, ...]


def run_pipeline(y: np.ndarray, *, horizon: int, seed: int,
                 n_samp: int = 1000, n_clust: int = 5,
                 exog_history: np.ndarray | None = None,
                 exog_future: np.ndarray | None = None,
                 spec: ArimaxSpec | None = None,
                 p_range: Iterable[int] = range(0, 4),
                 d_range: Iterable[int] = (0, 1),
                 q_range: Iterable[int] = range(0, 4),
                 use_asinh: bool = True,
                 origin: datetime | None = None) -> PipelineResult:
    """Series in, clustered scenario fan out.

    ``use_asinh`` should stay on for price series; heat demand is close
    enough to Gaussian to be modeled untransformed.
    """
    y = np.asarray(y, dtype=float)
    audit: list[str] = []
    params: TransformParams | None = None
    work = y
    if use_asinh:
        params = fit_transform_params(y)
        work = asinh_transform(y, params)
        audit.append("transform")

    if spec is not None:
        fit = fit_arimax(work, spec, exog_history)
    else:
        fit = grid_search_aic(work, exog_history, p_range, d_range, q_range)
    audit.append("fit")

    ensemble = sample_paths(fit, work, exog_future, horizon, n_samp, seed,
                            exog_history=exog_history, origin=origin)
    audit.append("sample")

    clusters = kmeans_cluster(ensemble, n_clust, seed)
    audit.append("cluster")

    if use_asinh:
        clusters = ClusteredScenarios(
            asinh_inverse(clusters.centroids, params),
            clusters.probabilities, clusters.counts, clusters.n_samp,
            clusters.inertia)
        audit.append("inverse")

    return PipelineResult(clusters, fit, params, tuple(audit))
