"""Synthetic market and heat-demand data for the bundled example.

The shipped backtest runs on generated data instead of the desk's
proprietary feeds.  Everything below is drawn from one seeded generator,
so ``python3 -m ucbid.synth --out data --days 40 --seed 20240711``
reproduces the bundled files byte for byte.

Shapes are chosen to look like a central-European winter month: a day-ahead
price with morning and evening ridges plus occasional spikes and rare
negative hours, reserve capacity prices that are small, positive and
right-skewed, and a heat demand that swings with a slow weather walk and
the hour of day.
"""
from __future__ import annotations

import argparse
from datetime import datetime, timedelta

import numpy as np
import pandas as pd

from . import io

DEFAULT_SEED = 20240711
DEFAULT_START = datetime(2025, 2, 1)


def _hours(start: datetime, n: int) -> pd.DatetimeIndex:
    return pd.DatetimeIndex([start + timedelta(hours=h) for h in range(n)])


def generate(days: int, *, seed: int = DEFAULT_SEED,
             start: datetime = DEFAULT_START) -> dict[str, pd.Series]:
    """Hourly series covering ``days`` full days plus a 24 h tail.

    The tail keeps the last day's 36 h optimization horizon inside the
    data.  Keys: dam_price, afrr_pos_price, afrr_neg_price, heat_demand.
    """
    rng = np.random.default_rng(seed)
    n = days * 24 + 24
    idx = _hours(start, n)
    hour = np.array([ts.hour for ts in idx], dtype=float)
    t = np.arange(n, dtype=float)

    # Day-ahead price: two daily ridges, a weekly dip, an AR(1) residual,
    # spikes in a few evening hours and occasional negative midday prices.
    daily = (12.0 * np.cos(2 * np.pi * (hour - 19.0) / 24.0)
             + 6.0 * np.cos(2 * np.pi * (hour - 8.0) / 12.0))
    weekly = -7.0 * (np.cos(2 * np.pi * t / 168.0) > 0.7)
    ar = np.zeros(n)
    eps = rng.normal(0.0, 4.5, size=n)
    for i in range(1, n):
        ar[i] = 0.85 * ar[i - 1] + eps[i]
    spikes = (rng.random(n) < 0.01) * rng.gamma(2.0, 35.0, size=n)
    dips = (rng.random(n) < 0.006) * rng.gamma(2.0, 45.0, size=n)
    dam = 72.0 + daily + weekly + ar + spikes - dips

    # Reserve capacity prices: mean-reverting in log space, pos a bit
    # richer than neg, both strictly positive.
    def _capacity(level: float, sigma: float) -> np.ndarray:
        z = np.zeros(n)
        e = rng.normal(0.0, sigma, size=n)
        for i in range(1, n):
            z[i] = 0.9 * z[i - 1] + e[i]
        return np.exp(np.log(level) + z - sigma ** 2)

    afrr_pos = _capacity(9.0, 0.30)
    afrr_neg = _capacity(6.0, 0.35)

    # Heat demand: slow weather walk plus a morning-heavy daily profile,
    # clipped away from zero and from the boiler limit.
    weather = np.zeros(n)
    we = rng.normal(0.0, 0.35, size=n)
    for i in range(1, n):
        weather[i] = 0.995 * weather[i - 1] + we[i]
    profile = (4.0 * np.cos(2 * np.pi * (hour - 7.0) / 24.0)
               + 1.5 * np.cos(2 * np.pi * (hour - 20.0) / 24.0))
    heat = np.clip(14.0 + profile + 2.2 * weather
                   + rng.normal(0.0, 0.5, size=n), 2.0, 26.0)

    return {
        "dam_price": pd.Series(dam, index=idx),
        "afrr_pos_price": pd.Series(afrr_pos, index=idx),
        "afrr_neg_price": pd.Series(afrr_neg, index=idx),
        "heat_demand": pd.Series(heat, index=idx),
    }


def write_dataset(out_dir: str, days: int, *, seed: int = DEFAULT_SEED,
                  start: datetime = DEFAULT_START) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    series = generate(days, seed=seed, start=start)
    market = pd.DataFrame({k: series[k] for k in io.MARKET_COLUMNS})
    io.write_market_prices(os.path.join(out_dir, "market.csv"), market)
    io.write_series(os.path.join(out_dir, "heat_demand.csv"),
                    series["heat_demand"])


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="python3 -m ucbid.synth",
        description="Write the bundled synthetic dataset.")
    parser.add_argument("--out", required=True, help="target directory")
    parser.add_argument("--days", type=int, default=40)
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--start", default=DEFAULT_START.isoformat(),
                        help="first hour, ISO format")
    args = parser.parse_args(argv)
    write_dataset(args.out, args.days, seed=args.seed,
                  start=datetime.fromisoformat(args.start))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
