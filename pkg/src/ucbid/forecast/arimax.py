"""ARIMAX estimation and Monte-Carlo path sampling.

Model for the d-times differenced series z:

    z[t] = c + a1*z[t-1] + ... + ap*z[t-p]
             + m1*e[t-1] + ... + mq*e[t-q]
             + b . x[t] + e[t],        e[t] ~ N(0, sigma2)

Estimation is conditional sum of squares under a Gaussian likelihood:
pre-sample residuals are zero, and for any fixed MA vector the remaining
coefficients solve a plain least-squares problem on MA-filtered columns.
The MA vector itself is found with Nelder-Mead started at zero, so the
first point evaluated is exactly the least-squares AR(+exog) estimate and
the whole procedure is deterministic.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize, signal


class FitError(RuntimeError):
    """Estimation failed (too little data, degenerate design, no convergence)."""


@dataclass(frozen=True)
class ArimaxSpec:
    p: int
    d: int
    q: int
    exog_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for label, v in (("p", self.p), ("d", self.d), ("q", self.q)):
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"order {label} must be a non-negative "
                                 f"integer, got {v!r}")

    def order(self) -> tuple[int, int, int]:
        return (self.p, self.d, self.q)


@dataclass
class ArimaxFit:
    spec: ArimaxSpec
    intercept: float
    ar: np.ndarray
    ma: np.ndarray
    beta: np.ndarray
    sigma2: float
    log_likelihood: float
    aic: float
    n_obs: int
    training_window: tuple[int, int]

    def __post_init__(self) -> None:
        self.ar = np.asarray(self.ar, dtype=float)
        self.ma = np.asarray(self.ma, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if len(self.ar) != self.spec.p or len(self.ma) != self.spec.q:
            raise ValueError("coefficient counts do not match the spec orders")
        if self.sigma2 < 0:
            raise ValueError(f"innovation variance must be >= 0, got {self.sigma2}")

    @property
    def num_params(self) -> int:
        # intercept and sigma2 count alongside AR, MA and exogenous terms
        return self.spec.p + self.spec.q + len(self.beta) + 2


@dataclass
class PathEnsemble:
    paths: np.ndarray
    origin: datetime | None = None

    def __post_init__(self) -> None:
        self.paths = np.asarray(self.paths, dtype=float)
        if self.paths.ndim != 2 or self.paths.shape[0] < 1:
            raise ValueError("path matrix must be (n_samp >= 1, horizon)")
        if not np.all(np.isfinite(self.paths)):
            raise ValueError("path matrix contains non-finite entries")

    @property
    def n_samp(self) -> int:
        return self.paths.shape[0]

    @property
    def horizon(self) -> int:
        return self.paths.shape[1]


def difference(y: np.ndarray, d: int) -> np.ndarray:
    z = np.asarray(y, dtype=float)
    for _ in range(d):
        z = np.diff(z)
    return z


def integrate_differences(z: np.ndarray, tails: Sequence[float]) -> np.ndarray:
    """Undo ``difference``: tails[k] is the last value of the k-th difference."""
    out = np.asarray(z, dtype=float)
    for k in reversed(range(len(tails))):
        out = tails[k] + np.cumsum(out, axis=-1)
    return out


def _ma_invertible(theta: np.ndarray) -> bool:
    if len(theta) == 0 or not np.any(theta):
        return True
    # roots of 1 + m1*x + ... + mq*x^q must lie outside the unit circle
    coeffs = np.concatenate([theta[::-1], [1.0]])
    roots = np.roots(coeffs)
    return roots.size == 0 or bool(np.all(np.abs(roots) > 1.0 + 1e-8))


def _design(y: np.ndarray, spec: ArimaxSpec, exog: np.ndarray | None,
            presample: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Target vector and regressor matrix [1 | z lags | exog] on usable rows.

    ``presample`` rows of the differenced series are reserved for lags (at
    least p).  Grid searches pass a common value so that every candidate
    order is scored on the same observations; otherwise the per-observation
    likelihood contribution would bias selection toward larger p.
    """
    z = difference(y, spec.d)
    m = len(z)
    start = spec.p if presample is None else presample
    if start < spec.p:
        raise ValueError(f"presample {start} cannot seed {spec.p} lags")
    target = z[start:]
    cols = [np.ones(m - start)]
    for i in range(1, spec.p + 1):
        cols.append(z[start - i:m - i])
    if exog is not None and exog.shape[1] > 0:
        # row k of z is original index k + d
        cols.append(exog[spec.d + start:len(y)])
    X = np.column_stack(cols)
    return target, X


def _filtered_lstsq(theta: np.ndarray, target: np.ndarray, X: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, float]:
    """Exact CSS inner solve: filter through the MA polynomial, then OLS."""
    if len(theta):
        den = np.concatenate([[1.0], theta])
        zt = signal.lfilter([1.0], den, target)
        Xt = signal.lfilter([1.0], den, X, axis=0)
    else:
        zt, Xt = target, X
    gamma, _, _, _ = np.linalg.lstsq(Xt, zt, rcond=None)
    resid = zt - Xt @ gamma
    return gamma, resid, float(resid @ resid)


def _check_exog(exog: np.ndarray | None, n: int, spec: ArimaxSpec
                ) -> np.ndarray | None:
    if exog is None:
        if spec.exog_names:
            raise FitError(f"spec names {len(spec.exog_names)} exogenous "
                           f"features but none were supplied")
        return None
    exog = np.atleast_2d(np.asarray(exog, dtype=float))
    if exog.shape[0] != n:
        raise FitError(f"exogenous matrix has {exog.shape[0]} rows, series "
                       f"has {n}")
    if spec.exog_names and exog.shape[1] != len(spec.exog_names):
        raise FitError(f"exogenous matrix has {exog.shape[1]} columns, spec "
                       f"names {len(spec.exog_names)}")
    return exog


def fit_arimax(y: np.ndarray, spec: ArimaxSpec,
               exog: np.ndarray | None = None, *,
               presample: int | None = None) -> ArimaxFit:
    y = np.asarray(y, dtype=float)
    n = len(y)
    exog = _check_exog(exog, n, spec)
    nx = 0 if exog is None else exog.shape[1]
    if n <= spec.p + spec.q + spec.d + nx + 10:
        raise FitError(f"series too short for order {spec.order()}: have {n} "
                       f"observations, need more than "
                       f"{spec.p + spec.q + spec.d + nx + 10}")
    target, X = _design(y, spec, exog, presample)
    n_eff = len(target)
    if n_eff <= X.shape[1] + spec.q:
        raise FitError(f"only {n_eff} usable rows for {X.shape[1] + spec.q} "
                       f"parameters")

    if spec.q == 0:
        theta = np.zeros(0)
        gamma, resid, rss = _filtered_lstsq(theta, target, X)
    else:
        _, _, base_rss = _filtered_lstsq(np.zeros(spec.q), target, X)
        base_rss = max(base_rss, 1e-12)

        def objective(th: np.ndarray) -> float:
            if not _ma_invertible(th):
                return base_rss * (4.0 + float(th @ th)) + 1.0
            return _filtered_lstsq(th, target, X)[2]

        res = optimize.minimize(objective, np.zeros(spec.q),
                                method="Nelder-Mead",
                                options={"xatol": 1e-6, "fatol": 1e-10,
                                         "maxiter": 400 * spec.q,
                                         "maxfev": 400 * spec.q})
        theta = np.asarray(res.x, dtype=float)
        if not _ma_invertible(theta):
            raise FitError(f"MA search for order {spec.order()} ended on a "
                           f"non-invertible point {theta}")
        gamma, resid, rss = _filtered_lstsq(theta, target, X)
        if not np.isfinite(rss):
            raise FitError(f"MA search for order {spec.order()} diverged "
                           f"(rss={rss}, nit={res.nit})")

    sigma2 = max(rss / n_eff, 1e-12)
    log_lik = -0.5 * n_eff * (math.log(2.0 * math.pi * sigma2) + 1.0)
    k = spec.p + spec.q + nx + 2
    aic = 2.0 * k - 2.0 * log_lik
    start = spec.p if presample is None else presample
    return ArimaxFit(
        spec=spec,
        intercept=float(gamma[0]),
        ar=gamma[1:1 + spec.p],
        ma=theta,
        beta=gamma[1 + spec.p:],
        sigma2=sigma2,
        log_likelihood=log_lik,
        aic=aic,
        n_obs=n_eff,
        training_window=(spec.d + start, n - 1),
    )


def grid_search_aic(y: np.ndarray,
                    exog: np.ndarray | None = None,
                    p_range: Iterable[int] = range(0, 4),
                    d_range: Iterable[int] = (0, 1),
                    q_range: Iterable[int] = range(0, 4),
                    exog_names: tuple[str, ...] = ()) -> ArimaxFit:
    """Fit every (p, d, q) cell and keep the lowest AIC.

    Ties prefer fewer AR+MA terms, then fewer AR terms.  Every cell is
    conditioned on the same presample window (the largest p in the grid) so
    the likelihoods are comparable.  Cells that fail to fit are skipped; if
    everything fails the collected reasons are raised.
    """
    presample = max(p_range)
    best: ArimaxFit | None = None
    best_key: tuple | None = None
    failures: list[str] = []
    for d in d_range:
        for p in p_range:
            for q in q_range:
                spec = ArimaxSpec(p, d, q, exog_names)
                try:
                    fit = fit_arimax(y, spec, exog, presample=presample)
                except FitError as exc:
                    failures.append(f"{spec.order()}: {exc}")
                    continue
                key = (fit.aic, p + q, p, q, d)
                if best_key is None or key < best_key:
                    best, best_key = fit, key
    if best is None:
        raise FitError("every grid cell failed:\n  " + "\n  ".join(failures))
    return best


def sample_paths(fit: ArimaxFit, history: np.ndarray,
                 exog_future: np.ndarray | None, horizon: int, n_samp: int,
                 seed: int, *, exog_history: np.ndarray | None = None,
                 origin: datetime | None = None) -> PathEnsemble:
    """Simulate the fitted recursion forward with Gaussian innovations.

    ``history`` seeds the AR lags (and, through the residual recursion with
    zero pre-sample values, the MA lags).  Identical seeds give identical
    ensembles.
    """
    if horizon < 1 or n_samp < 1:
        raise ValueError("horizon and n_samp must be at least 1")
    y = np.asarray(history, dtype=float)
    spec = fit.spec
    p, d, q = spec.order()
    nx = len(fit.beta)
    if len(y) - d < p + q:
        raise FitError(f"history of {len(y)} is too short to seed {p} lags "
                       f"and {q} residuals after differencing {d} times")
    if nx:
        if exog_future is None:
            raise FitError("fit uses exogenous features but no future values "
                           "were supplied")
        exog_future = np.atleast_2d(np.asarray(exog_future, dtype=float))
        if exog_future.shape[0] < horizon or exog_future.shape[1] != nx:
            raise FitError(f"future exogenous matrix {exog_future.shape} "
                           f"does not cover horizon {horizon} x {nx}")

    z_hist = difference(y, d)
    eps_tail = np.zeros(q)
    if q:
        if nx:
            if exog_history is None:
                raise FitError("MA residual seeding needs the exogenous "
                               "history alongside the series history")
            exog_history = np.atleast_2d(np.asarray(exog_history, dtype=float))
            if exog_history.shape != (len(y), nx):
                raise FitError(f"exogenous history shape "
                               f"{exog_history.shape} != ({len(y)}, {nx})")
        target, X = _design(y, spec, exog_history)
        coef = np.concatenate([[fit.intercept], fit.ar, fit.beta])
        den = np.concatenate([[1.0], fit.ma])
        resid = signal.lfilter([1.0], den, target - X @ coef)
        take = min(q, len(resid))
        if take:
            # buffer order is most recent first: e[t-1], e[t-2], ...
            eps_tail = np.concatenate([resid[-take:][::-1], np.zeros(q - take)])
    z_tail = z_hist[-p:][::-1] if p else np.zeros(0)

    rng = np.random.default_rng(seed)
    shocks = rng.standard_normal((n_samp, horizon)) * math.sqrt(max(fit.sigma2, 0.0))
    zbuf = np.tile(z_tail, (n_samp, 1))          # columns: z[t-1], ..., z[t-p]
    ebuf = np.tile(eps_tail, (n_samp, 1))        # columns: e[t-1], ..., e[t-q]
    out = np.empty((n_samp, horizon))
    for h in range(horizon):
        mean = np.full(n_samp, fit.intercept)
        if p:
            mean += zbuf @ fit.ar
        if q:
            mean += ebuf @ fit.ma
        if nx:
            mean += float(exog_future[h] @ fit.beta)
        z_h = mean + shocks[:, h]
        out[:, h] = z_h
        if p:
            zbuf = np.column_stack([z_h, zbuf[:, :-1]])
        if q:
            ebuf = np.column_stack([shocks[:, h], ebuf[:, :-1]])

    tails = []
    w = y.copy()
    for _ in range(d):
        tails.append(float(w[-1]))
        w = np.diff(w)
    paths = integrate_differences(out, tails)
    return PathEnsemble(paths, origin)


def point_forecast(fit: ArimaxFit, history: np.ndarray,
                   exog_future: np.ndarray | None, horizon: int, *,
                   exog_history: np.ndarray | None = None) -> np.ndarray:
    """Zero-innovation trajectory of the fitted recursion."""
    degenerate = ArimaxFit(
        spec=fit.spec, intercept=fit.intercept, ar=fit.ar.copy(),
        ma=fit.ma.copy(), beta=fit.beta.copy(), sigma2=0.0,
        log_likelihood=fit.log_likelihood, aic=fit.aic, n_obs=fit.n_obs,
        training_window=fit.training_window)
    ens = sample_paths(degenerate, history, exog_future, horizon, 1, 0,
                       exog_history=exog_history)
    return ens.paths[0]


def save_fit(fit: ArimaxFit, path: str) -> None:
    payload = {
        "p": fit.spec.p, "d": fit.spec.d, "q": fit.spec.q,
        "exog_names": list(fit.spec.exog_names),
        "intercept": fit.intercept,
        "ar": fit.ar.tolist(), "ma": fit.ma.tolist(),
        "beta": fit.beta.tolist(),
        "sigma2": fit.sigma2,
        "log_likelihood": fit.log_likelihood,
        "aic": fit.aic,
        "n_obs": fit.n_obs,
        "training_window": list(fit.training_window),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_fit(path: str) -> ArimaxFit:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    spec = ArimaxSpec(raw["p"], raw["d"], raw["q"],
                      tuple(raw["exog_names"]))
    return ArimaxFit(
        spec=spec, intercept=raw["intercept"],
        ar=np.array(raw["ar"]), ma=np.array(raw["ma"]),
        beta=np.array(raw["beta"]), sigma2=raw["sigma2"],
        log_likelihood=raw["log_likelihood"], aic=raw["aic"],
        n_obs=raw["n_obs"],
        training_window=tuple(raw["training_window"]),
    )
