"""Command-line tool: forecast, optimize and backtest from YAML configs.

Commands
--------
forecast   train per-input models and write clustered scenario files
run-day    three-stage bidding run for one delivery day
backtest   rolling run over a date range with an hourly cash ledger
validate   load config and data, report what a run would see
export-lp  write the stage-1 model of a day in LP text form

Exit codes: 0 success, 2 configuration or data error, 3 infeasible
portfolio, 4 solver stopped at the gap limit (incumbent written).
"""
from __future__ import annotations

import argparse
import os
import sys
import zlib
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta

import numpy as np
import pandas as pd

from . import io
from .config import ConfigError, RunConfig, load_run_config
from .forecast import (ArimaxFit, FitError, PathEnsemble, TransformParams,
                       asinh_inverse, asinh_transform, fit_transform_params,
                       grid_search_aic, kmeans_cluster, sample_paths,
                       save_fit, seasonal_features)
from .markets import BidLadder, compute_acceptance
from .milp import Status, export_lp
from .staging import (DataGapError, DayRecord, MarketSpec, StageConfig,
                      StageError, StageResult, initial_state, prepare_stage1,
                      run_day, run_rolling)
from .stochastic import (TRAJ_AFRR_NEG, TRAJ_AFRR_POS, TRAJ_DAM, Scenario,
                         ScenarioSet, load_trajectory_key)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_GAP = 4


# ---------------------------------------------------------------------------
# scenario provider backed by the forecasting pipeline


@dataclass
class InputForecast:
    """One trained input: model, transform and sampled paths."""

    name: str
    key: str                        # scenario trajectory key
    fit: ArimaxFit
    params: TransformParams | None
    paths: np.ndarray               # original units, (n_samp, horizon)
    zpaths: np.ndarray              # clustering space, (n_samp, horizon)


class ArimaxProvider:
    """Per-day scenario feeds from trained price and demand models.

    Each stage trains on the window of hourly history that is actually
    available at that stage's auction closure.  Prices and demands that lie
    in the past by stage time come straight from the data files.
    """

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        market = io.read_market_prices(cfg.market_path)
        self.series: dict[str, pd.Series] = {
            TRAJ_DAM: market["dam_price"],
            TRAJ_AFRR_POS: market["afrr_pos_price"],
            TRAJ_AFRR_NEG: market["afrr_neg_price"],
        }
        self.input_names = {TRAJ_DAM: "dam", TRAJ_AFRR_POS: "afrr_pos",
                            TRAJ_AFRR_NEG: "afrr_neg"}
        for load_name, path in sorted(cfg.load_paths.items()):
            key = load_trajectory_key(load_name)
            self.series[key] = io.read_series(path)
            self.input_names[key] = load_name
        self.t0 = min(s.index[0] for s in self.series.values())
        self.horizon = cfg.stage.horizon_hours

    # seeds are derived per (day, input, stage) so runs are reproducible
    # and scenario draws do not repeat across days
    def _seed(self, *parts: object) -> int:
        text = ":".join(str(p) for p in (self.cfg.seed, *parts))
        return zlib.crc32(text.encode()) & 0x7FFFFFFF

    def _abs_hour(self, ts: datetime) -> int:
        return int((ts - self.t0).total_seconds() // 3600)

    def _train_window(self, key: str, cutoff: datetime) -> pd.Series:
        series = self.series[key]
        hist = series.loc[:cutoff - timedelta(hours=1)]
        need = self.cfg.forecast.train_days * 24
        if len(hist) < need:
            raise DataGapError(
                f"{self.input_names[key]}: training needs {need} hourly "
                f"rows before {cutoff.isoformat()}, have {len(hist)} "
                f"(data starts {series.index[0]})")
        return hist.iloc[-need:]

    def _forecast_input(self, key: str, cutoff: datetime, day: date,
                        tag: str) -> InputForecast:
        name = self.input_names[key]
        icfg = self.cfg.forecast.input_for(name)
        hist = self._train_window(key, cutoff)
        y = hist.to_numpy(dtype=float)
        params = None
        z = y
        if icfg.use_asinh:
            params = fit_transform_params(y)
            z = asinh_transform(y, params)
        t_hist = np.array([self._abs_hour(ts) for ts in hist.index])
        gap = self._abs_hour(datetime.combine(day, time(0, 0))) \
            - self._abs_hour(cutoff)
        total = gap + self.horizon
        t_future = np.arange(t_hist[-1] + 1, t_hist[-1] + 1 + total)
        eh = seasonal_features(t_hist, icfg.seasonal_periods)
        ef = seasonal_features(t_future, icfg.seasonal_periods)
        exog_names = tuple(f"x{i}" for i in range(eh.shape[1]))
        try:
            fit = grid_search_aic(z, exog=eh, p_range=icfg.p_range,
                                  d_range=icfg.d_range, q_range=icfg.q_range,
                                  exog_names=exog_names)
            ens = sample_paths(fit, z, exog_future=ef, horizon=total,
                               n_samp=self.cfg.forecast.n_samp,
                               seed=self._seed(tag, day.isoformat(), name),
                               exog_history=eh)
        except FitError as exc:
            raise DataGapError(f"{name}: model fit failed ({exc})") from None
        zpaths = ens.paths[:, gap:]
        paths = asinh_inverse(zpaths, params) if params is not None \
            else zpaths.copy()
        if key.startswith("load:"):
            # The z-space model knows nothing about the physical floor at
            # zero demand; near-unit fits can push the lower tail below it.
            np.clip(paths, 0.0, None, out=paths)
        return InputForecast(name, key, fit, params, paths, zpaths)

    def _group(self, keys: list[str], cutoff: datetime, day: date, tag: str
               ) -> tuple[ScenarioSet, list[InputForecast]]:
        """Joint clustering: inputs in one group share cluster membership."""
        parts = [self._forecast_input(k, cutoff, day, tag) for k in keys]
        stacked = np.hstack([p.zpaths for p in parts])
        label = "+".join(p.name for p in parts)
        clusters = kmeans_cluster(PathEnsemble(stacked),
                                  self.cfg.forecast.n_clust,
                                  self._seed(tag, day.isoformat(), label,
                                             "cluster"))
        H = self.horizon
        scenarios = []
        for i in range(clusters.centroids.shape[0]):
            traj = {}
            for j, p in enumerate(parts):
                c = clusters.centroids[i, j * H:(j + 1) * H]
                arr = asinh_inverse(c, p.params) \
                    if p.params is not None else c.copy()
                if p.key.startswith("load:"):
                    np.clip(arr, 0.0, None, out=arr)
                traj[p.key] = arr
            scenarios.append(Scenario(f"c{i}",
                                      float(clusters.probabilities[i]), traj))
        return ScenarioSet(scenarios), parts

    def _load_keys(self) -> list[str]:
        return sorted(k for k in self.series if k.startswith("load:"))

    def _closure(self, day: date, closure: time) -> datetime:
        return datetime.combine(day - timedelta(days=1), closure)

    def stage1(self, day: date) -> dict[str, ScenarioSet]:
        cutoff = self._closure(day, self.cfg.stage.afrr_closure)
        out = {"dam": self._group([TRAJ_DAM], cutoff, day, "s1")[0]}
        if self.cfg.markets.has_afrr:
            out["afrr"] = self._group([TRAJ_AFRR_POS, TRAJ_AFRR_NEG],
                                      cutoff, day, "s1")[0]
        loads = self._load_keys()
        if loads:
            out["heat"] = self._group(loads, cutoff, day, "s1")[0]
        return out

    def stage2(self, day: date) -> dict[str, ScenarioSet]:
        cutoff = self._closure(day, self.cfg.stage.dam_closure)
        out = {"dam": self._group([TRAJ_DAM], cutoff, day, "s2")[0]}
        loads = self._load_keys()
        if loads:
            out["heat"] = self._group(loads, cutoff, day, "s2")[0]
        return out

    def _realized_slice(self, key: str, day: date) -> np.ndarray:
        return io.slice_hours(self.series[key],
                              datetime.combine(day, time(0, 0)),
                              self.horizon, name=self.input_names[key])

    def cleared_afrr(self, day: date) -> tuple[np.ndarray, np.ndarray]:
        return (self._realized_slice(TRAJ_AFRR_POS, day),
                self._realized_slice(TRAJ_AFRR_NEG, day))

    def realized(self, day: date) -> dict[str, np.ndarray]:
        keys = [TRAJ_DAM, *self._load_keys()]
        return {k: self._realized_slice(k, day) for k in keys}


# ---------------------------------------------------------------------------
# output writers


def _day_timestamps(day: date, hours: int) -> list[datetime]:
    t0 = datetime.combine(day, time(0, 0))
    return [t0 + timedelta(hours=h) for h in range(hours)]


def _expected_prices(result: StageResult) -> dict[str, np.ndarray]:
    """Probability-weighted clearing prices per market.

    Deterministic markets (cleared or realized) come out unchanged, so the
    acceptance flags in bid reports are exact there and indicative where
    prices are still scenario-valued.
    """
    builds = result.stoch.builds
    out = {"dam": sum(b.weight * b.dam_prices for b in builds)}
    if builds[0].afrr_pos_ladder is not None:
        out["afrr_pos"] = sum(b.weight * b.afrr_pos_prices for b in builds)
        out["afrr_neg"] = sum(b.weight * b.afrr_neg_prices for b in builds)
    return out


def _write_stage(stage_dir: str, result: StageResult, spec: MarketSpec,
                 day: date, cfg: RunConfig) -> None:
    os.makedirs(stage_dir, exist_ok=True)
    stamps = _day_timestamps(day, cfg.stage.horizon_hours)
    ladders = {"dam": list(spec.dam_ladder.levels)}
    if spec.has_afrr:
        ladders["afrr_pos"] = list(spec.afrr_pos_ladder.levels)
        ladders["afrr_neg"] = list(spec.afrr_neg_ladder.levels)
    prices = _expected_prices(result)
    acceptance = {m: compute_acceptance(BidLadder(tuple(ladders[m])),
                                        prices[m]) for m in ladders}
    io.write_bid_report(os.path.join(stage_dir, "bids.csv"), stamps,
                        result.bids, ladders, acceptance)
    io.write_schedule(os.path.join(stage_dir, "schedule.csv"), stamps,
                      result.schedules)
    with open(os.path.join(stage_dir, "objective.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(f"status: {result.status.name}\n")
        fh.write(f"objective: {result.objective!r}\n")
        fh.write(f"market_value: {result.market_value!r}\n")
        fh.write(f"mip_gap: {result.solution.mip_gap!r}\n")
        fh.write(f"scenarios: {len(result.stoch.builds)}\n")
        fh.write(f"shortfalls: {len(result.shortfalls)}\n")
        for ev in result.shortfalls:
            fh.write(f"  {ev.kind} {ev.where} t={ev.t} {ev.amount:.4f}\n")


def _hourly_ledger(rec: DayRecord, cfg: RunConfig) -> list[dict]:
    """Apply-window cash flows of one day, one dict per delivery hour."""
    b = rec.stage3.stoch.builds[0]
    sol = rec.stage3.solution
    dt = b.network.time.dt
    rows = []
    for t in range(cfg.stage.apply_hours):
        ts = datetime.combine(rec.day, time(0, 0)) + timedelta(hours=t)
        net = sol.values[b.vmap.get("dam", "net", t)]
        row = {
            "timestamp": ts.isoformat(),
            "dam_net_mw": float(net),
            "dam_price": float(b.dam_prices[t]),
            "dam_cash": float(b.dam_prices[t] * net * dt),
            "afrr_pos_mw": 0.0, "afrr_pos_cash": 0.0,
            "afrr_neg_mw": 0.0, "afrr_neg_cash": 0.0,
        }
        if b.afrr_pos_ladder is not None:
            for k, level in enumerate(b.afrr_pos_ladder):
                bid = sol.values[b.vmap.get("afrr_pos", f"bid{k}", t)]
                row["afrr_pos_mw"] += float(b.afrr_beta_pos[t, k] * bid)
                row["afrr_pos_cash"] += float(
                    b.afrr_beta_pos[t, k] * level * bid * dt)
            for k, level in enumerate(b.afrr_neg_ladder):
                bid = sol.values[b.vmap.get("afrr_neg", f"bid{k}", t)]
                row["afrr_neg_mw"] += float(b.afrr_beta_neg[t, k] * bid)
                row["afrr_neg_cash"] += float(
                    b.afrr_beta_neg[t, k] * level * bid * dt)
        row["cash_total"] = (row["dam_cash"] + row["afrr_pos_cash"]
                             + row["afrr_neg_cash"])
        rows.append(row)
    return rows


def _write_day(out_dir: str, rec: DayRecord, cfg: RunConfig) -> None:
    day_dir = os.path.join(out_dir, rec.day.isoformat())
    for stage, result in ((1, rec.stage1), (2, rec.stage2), (3, rec.stage3)):
        _write_stage(os.path.join(day_dir, f"stage{stage}"), result,
                     cfg.markets, rec.day, cfg)
    io.write_ledger(os.path.join(day_dir, "ledger.csv"),
                    pd.DataFrame(_hourly_ledger(rec, cfg)))


def _gap_limited(rec: DayRecord) -> bool:
    return any(r.status is Status.GAP_LIMIT
               for r in (rec.stage1, rec.stage2, rec.stage3))


# ---------------------------------------------------------------------------
# commands


def _parse_date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise ConfigError(f"bad date {text!r}, expected YYYY-MM-DD") from None


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> None:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "solver", None):
        cfg.stage.solver = args.solver
    # export-lp's --out names a file, not the run output directory
    if getattr(args, "out", None) and args.command != "export-lp":
        cfg.out_dir = os.path.abspath(args.out)


def cmd_validate(cfg: RunConfig, args: argparse.Namespace) -> int:
    provider = ArimaxProvider(cfg)
    net = cfg.portfolio
    print(f"portfolio: {net.name}")
    print(f"  buses: {', '.join(b.name for b in net.buses)}")
    print(f"  generators: {', '.join(g.name for g in net.generators) or '-'}")
    print(f"  storage: {', '.join(s.name for s in net.storage_units) or '-'}")
    print(f"  loads: {', '.join(ld.name for ld in net.loads) or '-'}")
    grid = net.grid
    print(f"  grid: {grid.bus} ({grid.capacity} MW)" if grid else "  grid: -")
    for key in sorted(provider.series):
        s = provider.series[key]
        print(f"data {provider.input_names[key]}: {s.index[0]} .. "
              f"{s.index[-1]} ({len(s)} rows)")
    spec = cfg.markets
    print(f"markets: day-ahead ladder {list(spec.dam_ladder.levels)}")
    if spec.has_afrr:
        print(f"  reserve pos {list(spec.afrr_pos_ladder.levels)} "
              f"neg {list(spec.afrr_neg_ladder.levels)}")
        for p in spec.participants:
            print(f"  provider {p.asset} ({p.kind}, conversion "
                  f"{p.conversion})")
    print(f"stage: horizon {cfg.stage.horizon_hours}h apply "
          f"{cfg.stage.apply_hours}h solver {cfg.stage.solver}")
    print("ok")
    return EXIT_OK


def cmd_forecast(cfg: RunConfig, args: argparse.Namespace) -> int:
    day = _parse_date(args.date)
    provider = ArimaxProvider(cfg)
    cutoff = provider._closure(day, cfg.stage.afrr_closure)
    groups = [[TRAJ_DAM]]
    if cfg.markets.has_afrr:
        groups.append([TRAJ_AFRR_POS, TRAJ_AFRR_NEG])
    if provider._load_keys():
        groups.append(provider._load_keys())
    out_dir = os.path.join(cfg.out_dir, "forecast", day.isoformat())
    os.makedirs(out_dir, exist_ok=True)
    stamps = _day_timestamps(day, cfg.stage.horizon_hours)
    quantiles = (0.025, 0.125, 0.5, 0.875, 0.975)
    for keys in groups:
        scen_set, parts = provider._group(keys, cutoff, day, "s1")
        H = provider.horizon
        for j, part in enumerate(parts):
            centroids = np.stack([
                sc.trajectories[part.key] for sc in scen_set.scenarios])
            probs = np.array([sc.probability for sc in scen_set.scenarios])
            io.write_fan(os.path.join(out_dir, f"{part.name}_fan.csv"),
                         stamps, centroids, probs)
            bands = np.quantile(part.paths, quantiles, axis=0)
            env = pd.DataFrame({
                "timestamp": [ts.isoformat() for ts in stamps[:H]],
                "band95_low": bands[0], "band75_low": bands[1],
                "median": bands[2], "band75_high": bands[3],
                "band95_high": bands[4]})
            env.to_csv(os.path.join(out_dir, f"{part.name}_envelope.csv"),
                       index=False)
            save_fit(part.fit, os.path.join(out_dir,
                                            f"{part.name}_fit.json"))
            print(f"{part.name}: order {part.fit.spec.order()} "
                  f"aic {part.fit.aic:.2f} -> {len(scen_set)} scenarios")
    print(f"wrote {out_dir}")
    return EXIT_OK


def _run_days(cfg: RunConfig, days: list[date]) -> tuple[list[DayRecord], int]:
    provider = ArimaxProvider(cfg)
    state = initial_state(cfg.portfolio)
    records: list[DayRecord] = []
    code = EXIT_OK
    for day in days:
        rec = run_day(cfg.portfolio, cfg.markets, provider, day, state,
                      cfg.stage)
        _write_day(cfg.out_dir, rec, cfg)
        if _gap_limited(rec):
            code = EXIT_GAP
            print(f"{day.isoformat()}: gap limit hit, incumbent written "
                  f"(gap {rec.stage1.solution.mip_gap!r})", file=sys.stderr)
        records.append(rec)
        state = rec.state_out
    return records, code


def cmd_run_day(cfg: RunConfig, args: argparse.Namespace) -> int:
    day = _parse_date(args.date)
    records, code = _run_days(cfg, [day])
    rec = records[0]
    print(f"{day.isoformat()}: objective {rec.stage3.objective:.2f}, "
          f"market cash {rec.ledger.market_total:.2f}")
    print(f"wrote {os.path.join(cfg.out_dir, day.isoformat())}")
    return code


def cmd_backtest(cfg: RunConfig, args: argparse.Namespace) -> int:
    first = _parse_date(getattr(args, "from"))
    last = _parse_date(args.to)
    if last < first:
        raise ConfigError(f"empty date range {first} .. {last}")
    days = [first + timedelta(days=i) for i in range((last - first).days + 1)]
    records, code = _run_days(cfg, days)

    ledger_rows: list[dict] = []
    for rec in records:
        ledger_rows.extend(_hourly_ledger(rec, cfg))
    os.makedirs(cfg.out_dir, exist_ok=True)
    io.write_ledger(os.path.join(cfg.out_dir, "ledger.csv"),
                    pd.DataFrame(ledger_rows))
    io.write_day_summary(os.path.join(cfg.out_dir, "days.csv"),
                         [r.ledger for r in records])

    dam = sum(r.ledger.dam_cash for r in records)
    pos = sum(r.ledger.afrr_pos_cash for r in records)
    neg = sum(r.ledger.afrr_neg_cash for r in records)
    cost = sum(r.ledger.generation_cost for r in records)
    shortfalls = sum(len(s.shortfalls) for r in records
                     for s in (r.stage1, r.stage2, r.stage3))
    lines = [
        f"days: {len(records)}",
        f"dam_cash: {dam:.2f}",
        f"afrr_pos_cash: {pos:.2f}",
        f"afrr_neg_cash: {neg:.2f}",
        f"market_total: {dam + pos + neg:.2f}",
        f"generation_cost: {cost:.2f}",
        f"shortfall_events: {shortfalls}",
        f"gap_limited: {int(code == EXIT_GAP)}",
    ]
    with open(os.path.join(cfg.out_dir, "summary.txt"), "w",
              encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return code


def cmd_export_lp(cfg: RunConfig, args: argparse.Namespace) -> int:
    day = _parse_date(args.date)
    provider = ArimaxProvider(cfg)
    stoch = prepare_stage1(cfg.portfolio, cfg.markets, provider.stage1(day),
                           initial_state(cfg.portfolio), cfg.stage, day)
    target = args.out or os.path.join(cfg.out_dir,
                                      f"stage1_{day.isoformat()}.lp")
    os.makedirs(os.path.dirname(os.path.abspath(target)), exist_ok=True)
    export_lp(stoch.model, target)
    print(f"wrote {target} ({len(stoch.model.variable_refs)} variables, "
          f"{len(stoch.model.constraints)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ucbid",
        description="Scenario-based bidding for small energy portfolios.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, out: bool = True) -> None:
        p.add_argument("--config", required=True, help="run config YAML")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--solver", choices=("builtin", "external"),
                       default=None)
        if out:
            p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("forecast", help="write clustered scenario files")
    common(p)
    p.add_argument("--date", required=True, help="delivery day YYYY-MM-DD")

    p = sub.add_parser("run-day", help="three-stage run for one day")
    common(p)
    p.add_argument("--date", required=True, help="delivery day YYYY-MM-DD")

    p = sub.add_parser("backtest", help="rolling run over a date range")
    common(p)
    p.add_argument("--from", required=True, help="first delivery day")
    p.add_argument("--to", required=True, help="last delivery day")

    p = sub.add_parser("validate", help="check config and data")
    common(p, out=False)

    p = sub.add_parser("export-lp", help="dump the stage-1 model as LP text")
    common(p, out=False)
    p.add_argument("--date", required=True, help="delivery day YYYY-MM-DD")
    p.add_argument("--out", default=None, help="target .lp file")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "forecast": cmd_forecast,
        "run-day": cmd_run_day,
        "backtest": cmd_backtest,
        "validate": cmd_validate,
        "export-lp": cmd_export_lp,
    }
    try:
        cfg = load_run_config(args.config)
        _apply_overrides(cfg, args)
        return handlers[args.command](cfg, args)
    except (ConfigError, DataGapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    raise SystemExit(main())
