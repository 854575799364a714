"""Variance-stabilizing transform and seasonal feature construction.

Market prices have residuals whose spread grows with the price level, so the
series is mapped through asinh((y - mu) / sigma) before fitting and mapped
back with mu + sigma * sinh(.) after clustering.  Long seasonal periods are
handled with sine/cosine feature pairs instead of seasonal model terms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TransformParams:
    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"transform scale must be positive, got {self.sigma}")


def fit_transform_params(y: np.ndarray) -> TransformParams:
    """Location and scale from the sample mean and standard deviation."""
    y = np.asarray(y, dtype=float)
    mu = float(np.mean(y))
    sigma = float(np.std(y))
    if sigma == 0.0:
        raise ValueError("cannot fit transform scale on a constant series")
    return TransformParams(mu, sigma)


def asinh_transform(y: np.ndarray, params: TransformParams) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return np.arcsinh((y - params.mu) / params.sigma)


def asinh_inverse(y_hat: np.ndarray, params: TransformParams) -> np.ndarray:
    y_hat = np.asarray(y_hat, dtype=float)
    return params.mu + params.sigma * np.sinh(y_hat)


def fourier_features(period: float, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """cos(2*pi*t/period) and sin(2*pi*t/period) for an absolute step index."""
    if not period > 0:
        raise ValueError(f"period must be positive, got {period}")
    t = np.asarray(t, dtype=float)
    angle = 2.0 * np.pi * t / period
    return np.cos(angle), np.sin(angle)


def seasonal_features(t: np.ndarray, periods: tuple[float, ...] = (24.0, 168.0)
                      ) -> np.ndarray:
    """Stacked cos/sin columns, one pair per period, shape (len(t), 2*P).

    The index ``t`` must be the absolute step count since a fixed origin so
    that history and forecast horizon stay phase-continuous.
    """
    cols = []
    for period in periods:
        c, s = fourier_features(period, t)
        cols.extend([c, s])
    return np.column_stack(cols) if cols else np.empty((len(t), 0))
