"""CSV formats shared by the command-line tool and the tests.

Series files carry ``timestamp,value`` rows with ISO-8601 hourly stamps.
Market price files carry ``timestamp,dam_price,afrr_pos_price,
afrr_neg_price``.  Bid reports carry one row per ladder level and hour.
Scenario fan files put the cluster probabilities in a leading row so the
file stays a single self-describing CSV.  Every writer here has a matching
reader and the pair round-trips.
"""
from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import Mapping

import numpy as np
import pandas as pd

from .staging import DataGapError, LedgerRow

MARKET_COLUMNS = ("dam_price", "afrr_pos_price", "afrr_neg_price")


def _parse_times(raw: pd.Series, path: str) -> pd.DatetimeIndex:
    try:
        idx = pd.DatetimeIndex(pd.to_datetime(raw, format="ISO8601"))
    except (ValueError, TypeError) as exc:
        raise DataGapError(f"{path}: unparseable timestamps ({exc})") from None
    if len(idx) == 0:
        raise DataGapError(f"{path}: file holds no rows")
    if not idx.is_monotonic_increasing:
        raise DataGapError(f"{path}: timestamps are not sorted")
    deltas = np.diff(idx.values).astype("timedelta64[s]").astype(int)
    bad = np.nonzero(deltas != 3600)[0]
    if len(bad):
        i = int(bad[0])
        raise DataGapError(f"{path}: gap or duplicate between {idx[i]} and "
                           f"{idx[i + 1]} (expected hourly steps)")
    return idx


def read_series(path: str) -> pd.Series:
    """One hourly series from a ``timestamp,value`` file."""
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != ["timestamp", "value"]:
        raise DataGapError(f"{path}: expected columns timestamp,value, got "
                           f"{list(frame.columns)}")
    idx = _parse_times(frame["timestamp"], path)
    return pd.Series(frame["value"].to_numpy(dtype=float), index=idx)


def write_series(path: str, series: pd.Series) -> None:
    frame = pd.DataFrame({
        "timestamp": [ts.isoformat() for ts in series.index],
        "value": series.to_numpy()})
    frame.to_csv(path, index=False)


def read_market_prices(path: str) -> pd.DataFrame:
    """Hourly clearing prices for all three markets."""
    frame = pd.read_csv(path, float_precision="round_trip")
    expected = ["timestamp", *MARKET_COLUMNS]
    if list(frame.columns) != expected:
        raise DataGapError(f"{path}: expected columns {','.join(expected)}, "
                           f"got {list(frame.columns)}")
    idx = _parse_times(frame["timestamp"], path)
    out = frame.drop(columns=["timestamp"]).astype(float)
    out.index = idx
    return out


def write_market_prices(path: str, frame: pd.DataFrame) -> None:
    body = frame.copy()
    body.insert(0, "timestamp", [ts.isoformat() for ts in frame.index])
    body.to_csv(path, index=False)


def slice_hours(series: pd.Series, start: datetime, hours: int, *,
                name: str = "series") -> np.ndarray:
    """Contiguous hourly window; missing ranges are reported by name."""
    stop = start + timedelta(hours=hours - 1)
    if len(series) == 0 or start < series.index[0] or stop > series.index[-1]:
        have = (f"{series.index[0]}..{series.index[-1]}"
                if len(series) else "nothing")
        raise DataGapError(f"{name}: need {start.isoformat()} .. "
                           f"{stop.isoformat()}, have {have}")
    window = series.loc[start:stop]
    if len(window) != hours:
        raise DataGapError(f"{name}: window {start.isoformat()} +{hours}h "
                           f"has {len(window)} rows, expected {hours}")
    return window.to_numpy(dtype=float)


# -- bid reports -------------------------------------------------------------


def write_bid_report(path: str, timestamps: list[datetime],
                     bids: Mapping[str, np.ndarray],
                     ladders: Mapping[str, list[float]],
                     acceptance: Mapping[str, np.ndarray]) -> None:
    """One row per (hour, market, ladder level) with the accepted flag."""
    rows = []
    for market, mat in bids.items():
        levels = ladders[market]
        acc = acceptance[market]
        for t, ts in enumerate(timestamps):
            if t >= mat.shape[0]:
                break
            for j, level in enumerate(levels):
                rows.append({
                    "timestamp": ts.isoformat(),
                    "market": market,
                    "level_price": level,
                    "volume": mat[t, j],
                    "accepted": int(acc[t, j] > 0),
                })
    pd.DataFrame(rows, columns=["timestamp", "market", "level_price",
                                "volume", "accepted"]).to_csv(path, index=False)


def read_bid_report(path: str) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip")
    expected = ["timestamp", "market", "level_price", "volume", "accepted"]
    if list(frame.columns) != expected:
        raise DataGapError(f"{path}: expected columns {expected}, got "
                           f"{list(frame.columns)}")
    return frame


# -- schedules ---------------------------------------------------------------


def write_schedule(path: str, timestamps: list[datetime],
                   schedules: Mapping[str, Mapping[str, np.ndarray]]) -> None:
    """Long format: scenario,timestamp,series,value."""
    rows = []
    for label, sched in schedules.items():
        for key in sorted(sched):
            arr = sched[key]
            for t, ts in enumerate(timestamps[:len(arr)]):
                rows.append({"scenario": label, "timestamp": ts.isoformat(),
                             "series": key, "value": arr[t]})
    pd.DataFrame(rows, columns=["scenario", "timestamp", "series",
                                "value"]).to_csv(path, index=False)


def read_schedule(path: str) -> dict[str, dict[str, np.ndarray]]:
    frame = pd.read_csv(path, float_precision="round_trip")
    out: dict[str, dict[str, np.ndarray]] = {}
    for (label, key), group in frame.groupby(["scenario", "series"],
                                             sort=False):
        out.setdefault(str(label), {})[str(key)] = \
            group["value"].to_numpy(dtype=float)
    return out


# -- scenario fans -----------------------------------------------------------


def write_fan(path: str, timestamps: list[datetime], centroids: np.ndarray,
              probabilities: np.ndarray) -> None:
    """Clustered trajectories; row one carries the cluster probabilities."""
    n = centroids.shape[0]
    cols = [f"c{i}" for i in range(n)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("timestamp," + ",".join(cols) + "\n")
        fh.write("probability," +
                 ",".join(repr(float(p)) for p in probabilities) + "\n")
        for t, ts in enumerate(timestamps[:centroids.shape[1]]):
            vals = ",".join(repr(float(centroids[i, t])) for i in range(n))
            fh.write(f"{ts.isoformat()},{vals}\n")


def read_fan(path: str) -> tuple[np.ndarray, np.ndarray, list[datetime]]:
    """Returns (centroids, probabilities, timestamps)."""
    frame = pd.read_csv(path, float_precision="round_trip")
    if frame.columns[0] != "timestamp" or len(frame) < 2 or \
            frame.iloc[0, 0] != "probability":
        raise DataGapError(f"{path}: not a scenario fan file")
    probabilities = frame.iloc[0, 1:].to_numpy(dtype=float)
    body = frame.iloc[1:]
    timestamps = [datetime.fromisoformat(s) for s in body["timestamp"]]
    centroids = body.iloc[:, 1:].to_numpy(dtype=float).T
    return centroids, probabilities, timestamps


# -- run ledger --------------------------------------------------------------

LEDGER_COLUMNS = ("timestamp", "dam_net_mw", "dam_price", "dam_cash",
                  "afrr_pos_mw", "afrr_pos_cash", "afrr_neg_mw",
                  "afrr_neg_cash", "cash_total")


def write_ledger(path: str, frame: pd.DataFrame) -> None:
    """Hourly cash ledger, one row per delivery hour of the run."""
    missing = [c for c in LEDGER_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"ledger frame lacks columns {missing}")
    frame.loc[:, LEDGER_COLUMNS].to_csv(path, index=False)


def read_ledger(path: str) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != list(LEDGER_COLUMNS):
        raise DataGapError(f"{path}: expected columns "
                           f"{','.join(LEDGER_COLUMNS)}, got "
                           f"{list(frame.columns)}")
    return frame


def write_day_summary(path: str, rows: list[LedgerRow]) -> None:
    frame = pd.DataFrame([{
        "day": r.day.isoformat(),
        "dam_cash": r.dam_cash,
        "afrr_pos_cash": r.afrr_pos_cash,
        "afrr_neg_cash": r.afrr_neg_cash,
        "generation_cost": r.generation_cost,
        "objective": r.objective,
        "market_total": r.market_total,
    } for r in rows])
    frame.to_csv(path, index=False)


def read_day_summary(path: str) -> list[LedgerRow]:
    frame = pd.read_csv(path, float_precision="round_trip")
    out = []
    for _, row in frame.iterrows():
        out.append(LedgerRow(
            day=date.fromisoformat(row["day"]),
            dam_cash=float(row["dam_cash"]),
            afrr_pos_cash=float(row["afrr_pos_cash"]),
            afrr_neg_cash=float(row["afrr_neg_cash"]),
            generation_cost=float(row["generation_cost"]),
            objective=float(row["objective"])))
    return out
