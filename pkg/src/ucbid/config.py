"""YAML configuration for the command-line tool.

Two files drive a run: a portfolio file describing the physical assets and
a run file pointing at data, markets, forecast settings and output
location.  Loading validates eagerly so a bad path or a malformed ladder
fails before any solve starts.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
import yaml

from .markets import AfrrParticipant, BidLadder
from .milp import MilpOptions
from .portfolio import (Bus, CommittableGenerator, FixedLoad, GridConnection,
                        Link, PortfolioNetwork, StorageUnit, TimeIndex,
                        validate)
from .staging import MarketSpec, StageConfig

PLACEHOLDER_START = datetime(2000, 1, 1)


class ConfigError(Exception):
    pass


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return mapping[key]


def _load_yaml(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_portfolio(path: str) -> PortfolioNetwork:
    """Portfolio file to a network with a placeholder time axis.

    The rolling driver swaps in the real day window and the day's demand
    arrays, so loads start out as single zero-valued rows here.
    """
    data = _load_yaml(path)
    name = data.get("name", os.path.splitext(os.path.basename(path))[0])
    try:
        buses = [Bus(**b) for b in data.get("buses", [])]
        generators = [CommittableGenerator(**g)
                      for g in data.get("generators", [])]
        storage = [StorageUnit(**s) for s in data.get("storage_units", [])]
        links = [Link(**l) for l in data.get("links", [])]
        loads = [FixedLoad(ld["name"], ld["bus"], np.zeros(1))
                 for ld in data.get("loads", [])]
        grid = GridConnection(**data["grid"]) if "grid" in data else None
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"{path}: bad component entry ({exc})") from None
    net = PortfolioNetwork(name=name, time=TimeIndex(PLACEHOLDER_START, 1),
                           buses=buses, generators=generators,
                           storage_units=storage, links=links, loads=loads,
                           grid=grid)
    problems = validate(net)
    if problems:
        raise ConfigError(f"{path}: " + "; ".join(problems))
    return net


def _ladder(raw, where: str) -> BidLadder:
    if not isinstance(raw, (list, tuple)) or not raw:
        raise ConfigError(f"{where}: ladder must be a non-empty list")
    try:
        return BidLadder(tuple(float(v) for v in raw))
    except Exception as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class ForecastInputConfig:
    """Model-selection space and sampling transform for one input series."""

    use_asinh: bool = True
    p_range: tuple[int, ...] = (0, 1, 2)
    d_range: tuple[int, ...] = (0, 1)
    q_range: tuple[int, ...] = (0, 1)
    seasonal_periods: tuple[float, ...] = (24.0, 168.0)


@dataclass
class ForecastConfig:
    train_days: int = 21
    n_samp: int = 1000
    n_clust: int = 5
    inputs: dict[str, ForecastInputConfig] = field(default_factory=dict)

    def input_for(self, name: str) -> ForecastInputConfig:
        return self.inputs.get(name, ForecastInputConfig())


@dataclass
class RunConfig:
    """Everything a command needs, with paths resolved and files checked."""

    portfolio: PortfolioNetwork
    market_path: str
    load_paths: dict[str, str]
    out_dir: str
    seed: int
    stage: StageConfig
    markets: MarketSpec
    forecast: ForecastConfig
    config_dir: str


def _forecast_input(raw: dict, where: str) -> ForecastInputConfig:
    known = {"use_asinh", "p", "d", "q", "seasonal_periods"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")

    def _ints(key, default):
        vals = raw.get(key, default)
        if not isinstance(vals, (list, tuple)) or \
                not all(isinstance(v, int) and v >= 0 for v in vals):
            raise ConfigError(f"{where}: {key} must be a list of "
                              f"non-negative integers")
        return tuple(vals)

    periods = tuple(float(p) for p in raw.get("seasonal_periods",
                                              (24.0, 168.0)))
    return ForecastInputConfig(
        use_asinh=bool(raw.get("use_asinh", True)),
        p_range=_ints("p", (0, 1, 2)),
        d_range=_ints("d", (0, 1)),
        q_range=_ints("q", (0, 1)),
        seasonal_periods=periods)


def _market_spec(raw: dict, path: str) -> MarketSpec:
    dam = _require(raw, "dam", f"{path}: markets")
    floor = float(dam.get("floor", -500.0))
    side = str(dam.get("side", "both"))
    ladder = _ladder(_require(dam, "ladder", f"{path}: markets.dam"),
                     f"{path}: markets.dam.ladder")
    if ladder.levels[0] != floor:
        raise ConfigError(f"{path}: first day-ahead ladder level must equal "
                          f"the price floor {floor}")
    pos_ladder = neg_ladder = None
    participants: list[AfrrParticipant] = []
    block_hours = 1
    if "afrr" in raw:
        afrr = raw["afrr"]
        pos_ladder = _ladder(_require(afrr, "pos_ladder", f"{path}: afrr"),
                             f"{path}: markets.afrr.pos_ladder")
        neg_ladder = _ladder(_require(afrr, "neg_ladder", f"{path}: afrr"),
                             f"{path}: markets.afrr.neg_ladder")
        block_hours = int(afrr.get("block_hours", 1))
        for entry in _require(afrr, "participants", f"{path}: afrr"):
            try:
                participants.append(AfrrParticipant(**entry))
            except TypeError as exc:
                raise ConfigError(f"{path}: bad reserve participant "
                                  f"({exc})") from None
    try:
        return MarketSpec(dam_ladder=ladder, dam_floor=floor, dam_side=side,
                          afrr_pos_ladder=pos_ladder,
                          afrr_neg_ladder=neg_ladder,
                          participants=participants,
                          afrr_block_hours=block_hours)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_run_config(path: str) -> RunConfig:
    data = _load_yaml(path)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(rel: str) -> str:
        return rel if os.path.isabs(rel) else os.path.join(base, rel)

    portfolio_path = resolve(_require(data, "portfolio", path))
    portfolio = load_portfolio(portfolio_path)

    data_section = _require(data, "data", path)
    market_path = resolve(_require(data_section, "market", f"{path}: data"))
    if not os.path.exists(market_path):
        raise ConfigError(f"{path}: market data file not found: "
                          f"{market_path}")
    load_paths: dict[str, str] = {}
    for load_name, rel in data_section.get("loads", {}).items():
        if load_name not in {ld.name for ld in portfolio.loads}:
            raise ConfigError(f"{path}: data.loads names {load_name!r} but "
                              f"the portfolio has no such load")
        p = resolve(rel)
        if not os.path.exists(p):
            raise ConfigError(f"{path}: load data file not found: {p}")
        load_paths[load_name] = p
    missing = {ld.name for ld in portfolio.loads} - set(load_paths)
    if missing:
        raise ConfigError(f"{path}: no data series for loads "
                          f"{sorted(missing)}")

    stage_raw = data.get("stage", {})
    try:
        stage = StageConfig(
            horizon_hours=int(stage_raw.get("horizon_hours", 36)),
            apply_hours=int(stage_raw.get("apply_hours", 24)),
            solver=str(data.get("solver", "external")),
            milp=MilpOptions(
                rel_gap=float(stage_raw.get("rel_gap", 1e-6)),
                time_limit=stage_raw.get("time_limit")),
            slack_penalty=stage_raw.get("slack_penalty"))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if stage.solver not in ("builtin", "external"):
        raise ConfigError(f"{path}: solver must be 'builtin' or 'external', "
                          f"got {stage.solver!r}")

    markets = _market_spec(_require(data, "markets", path), path)
    gen_names = {g.name for g in portfolio.generators}
    sto_names = {s.name for s in portfolio.storage_units}
    link_names = {lk.name for lk in portfolio.links}
    for part in markets.participants:
        pool = gen_names if part.kind == "generator" else sto_names
        if part.asset not in pool:
            raise ConfigError(f"{path}: reserve participant {part.asset!r} "
                              f"is not a {part.kind} in the portfolio")
        if part.via_link is not None and part.via_link not in link_names:
            raise ConfigError(f"{path}: reserve participant {part.asset!r} "
                              f"references unknown link {part.via_link!r}")

    fc_raw = data.get("forecast", {})
    inputs = {name: _forecast_input(sub, f"{path}: forecast.inputs.{name}")
              for name, sub in fc_raw.get("inputs", {}).items()}
    forecast = ForecastConfig(
        train_days=int(fc_raw.get("train_days", 21)),
        n_samp=int(fc_raw.get("n_samp", 1000)),
        n_clust=int(fc_raw.get("n_clust", 5)),
        inputs=inputs)
    if forecast.train_days < 3:
        raise ConfigError(f"{path}: forecast.train_days must be at least 3")

    return RunConfig(
        portfolio=portfolio,
        market_path=market_path,
        load_paths=load_paths,
        out_dir=resolve(data.get("out", "out")),
        seed=int(data.get("seed", 0)),
        stage=stage,
        markets=markets,
        forecast=forecast,
        config_dir=base)
