"""Experiment configuration: strict JSON schema with documented defaults.

Top-level sections: ``dataset``, ``index``, ``filter``, ``strategy``,
``train``, ``loop``, ``seeds``. Unknown keys are rejected; omitted keys take
the defaults below. An empty object is a complete, runnable configuration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .anchors import ANCHOR_STRATEGIES
from .index import IndexParams


class ConfigError(ValueError):
    pass


FILTER_TYPES = ("anchoral", "random_subset", "seals", "noop")
STRATEGY_TYPES = ("entropy", "kmeans_diversity", "badge", "random")
INDEX_TYPES = ("hnsw", "exact")


@dataclass(frozen=True)
class DatasetConfig:
    dir: str | None = None
    # restrict the initial minority sample to one ground-truth cluster
    # (synthetic datasets only; requires cluster metadata)
    initial_minority_cluster: int | None = None


@dataclass(frozen=True)
class IndexConfig:
    type: str = "hnsw"
    ef_construction: int = 200
    ef_search: int = 200
    max_connections: int = 64
    seed: int = 0

    def params(self) -> IndexParams:
        return IndexParams(self.ef_construction, self.ef_search,
                           self.max_connections, self.seed)


@dataclass(frozen=True)
class FilterConfig:
    type: str = "anchoral"
    # anchored filtering
    a: int = 10
    n_neighbors: int = 50
    max_subpool: int = 1000
    anchor_strategy: str = "kmeanspp"
    anchor_strategy_overrides: dict | None = None
    # random subset size
    m: int = 10000
    # neighbours per labelled instance for the expansion filter
    k: int = 50


@dataclass(frozen=True)
class StrategyConfig:
    type: str = "entropy"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 32
    max_epochs: int = 10
    min_steps: int = 100
    early_stop_delta: float = 1e-5


@dataclass(frozen=True)
class LoopConfig:
    budget: int = 5000
    rounds: int = 200
    n_init: int = 100
    per_minority: int = 5
    time_limit: float | None = None
    # wall-clock selection timings are inherently non-reproducible; disable
    # to make rounds.csv byte-identical across reruns
    record_timing: bool = True


@dataclass(frozen=True)
class SeedsConfig:
    model_init: int = 0
    data_order: int = 1
    initial_set: int = 2
    selection: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    index: IndexConfig = field(default_factory=IndexConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)

    @property
    def query_size(self) -> int:
        """Instances labelled per round: floor(budget / rounds)."""
        return self.loop.budget // self.loop.rounds

    def with_seed_offset(self, offset: int) -> "ExperimentConfig":
        """Config for sweep member ``offset``: every seed stream shifted by it."""
        s = self.seeds
        shifted = SeedsConfig(s.model_init + offset, s.data_order + offset,
                              s.initial_set + offset, s.selection + offset)
        return ExperimentConfig(self.dataset, self.index, self.filter,
                                self.strategy, self.train, self.loop, shifted)


def _type_name(expected) -> str:
    names = {int: "int", float: "number", str: "str", bool: "bool", dict: "object"}
    if isinstance(expected, tuple):
        return " or ".join(names.get(t, t.__name__) for t in expected)
    return names.get(expected, expected.__name__)


def _get(section: dict, section_name: str, key: str, expected, default,
         nullable: bool = False):
    if key not in section:
        return default
    value = section[key]
    if value is None and nullable:
        return None
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if expected is int and isinstance(value, bool):
        raise ConfigError(f"config key '{section_name}.{key}' expects int, got bool")
    if not isinstance(value, expected):
        raise ConfigError(
            f"config key '{section_name}.{key}' expects {_type_name(expected)}, "
            f"got {type(value).__name__}"
        )
    return value


def _check_keys(section: dict, section_name: str, allowed) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config key '{section_name}.{unknown[0]}'")


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _parse_filter(section: dict) -> FilterConfig:
    ftype = _get(section, "filter", "type", str, "anchoral")
    _require(ftype in FILTER_TYPES, f"filter.type must be one of {FILTER_TYPES}")
    if ftype == "anchoral":
        _check_keys(section, "filter",
                    ("type", "a", "K", "max_subpool", "anchor_strategy",
                     "anchor_strategy_overrides"))
        a = _get(section, "filter", "a", int, 10)
        n_neighbors = _get(section, "filter", "K", int, 50)
        max_subpool = _get(section, "filter", "max_subpool", int, 1000)
        strategy = _get(section, "filter", "anchor_strategy", str, "kmeanspp")
        overrides_raw = _get(section, "filter", "anchor_strategy_overrides", dict,
                             None, nullable=True)
        _require(a >= 1, "filter.a must be >= 1")
        _require(n_neighbors >= 1, "filter.K must be >= 1")
        _require(max_subpool >= 1, "filter.max_subpool must be >= 1")
        _require(strategy in ANCHOR_STRATEGIES,
                 f"filter.anchor_strategy must be one of {ANCHOR_STRATEGIES}")
        overrides = None
        if overrides_raw is not None:
            overrides = {}
            for klass, strat in overrides_raw.items():
                try:
                    klass_id = int(klass)
                except (TypeError, ValueError):
                    raise ConfigError(
                        "filter.anchor_strategy_overrides keys must be class ids"
                    ) from None
                _require(strat in ANCHOR_STRATEGIES,
                         f"filter.anchor_strategy_overrides values must be one of "
                         f"{ANCHOR_STRATEGIES}")
                overrides[klass_id] = strat
        return FilterConfig(type="anchoral", a=a, n_neighbors=n_neighbors,
                            max_subpool=max_subpool, anchor_strategy=strategy,
                            anchor_strategy_overrides=overrides)
    if ftype == "random_subset":
        _check_keys(section, "filter", ("type", "m"))
        m = _get(section, "filter", "m", int, 10000)
        _require(m >= 1, "filter.m must be >= 1")
        return FilterConfig(type="random_subset", m=m)
    if ftype == "seals":
        _check_keys(section, "filter", ("type", "k"))
        k = _get(section, "filter", "k", int, 50)
        _require(k >= 1, "filter.k must be >= 1")
        return FilterConfig(type="seals", k=k)
    _check_keys(section, "filter", ("type",))
    return FilterConfig(type="noop")


def parse_config_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(data, "config",
                ("dataset", "index", "filter", "strategy", "train", "loop", "seeds"))
    for name in ("dataset", "index", "filter", "strategy", "train", "loop", "seeds"):
        if name in data and not isinstance(data[name], dict):
            raise ConfigError(f"config key '{name}' expects object, "
                              f"got {type(data[name]).__name__}")

    ds = data.get("dataset", {})
    _check_keys(ds, "dataset", ("dir", "initial_minority_cluster"))
    dataset = DatasetConfig(
        dir=_get(ds, "dataset", "dir", str, None, nullable=True),
        initial_minority_cluster=_get(ds, "dataset", "initial_minority_cluster",
                                      int, None, nullable=True),
    )

    ix = data.get("index", {})
    _check_keys(ix, "index", ("type", "ef_construction", "ef_search",
                              "max_connections", "seed"))
    index = IndexConfig(
        type=_get(ix, "index", "type", str, "hnsw"),
        ef_construction=_get(ix, "index", "ef_construction", int, 200),
        ef_search=_get(ix, "index", "ef_search", int, 200),
        max_connections=_get(ix, "index", "max_connections", int, 64),
        seed=_get(ix, "index", "seed", int, 0),
    )
    _require(index.type in INDEX_TYPES, f"index.type must be one of {INDEX_TYPES}")
    try:
        index.params()
    except ValueError as exc:
        raise ConfigError(f"index: {exc}") from None

    filt = _parse_filter(data.get("filter", {}))

    st = data.get("strategy", {})
    _check_keys(st, "strategy", ("type",))
    strategy = StrategyConfig(type=_get(st, "strategy", "type", str, "entropy"))
    _require(strategy.type in STRATEGY_TYPES,
             f"strategy.type must be one of {STRATEGY_TYPES}")

    tr = data.get("train", {})
    _check_keys(tr, "train", ("learning_rate", "batch_size", "max_epochs",
                              "min_steps", "early_stop_delta"))
    train = TrainConfig(
        learning_rate=_get(tr, "train", "learning_rate", float, 0.1),
        batch_size=_get(tr, "train", "batch_size", int, 32),
        max_epochs=_get(tr, "train", "max_epochs", int, 10),
        min_steps=_get(tr, "train", "min_steps", int, 100),
        early_stop_delta=_get(tr, "train", "early_stop_delta", float, 1e-5),
    )
    _require(train.learning_rate > 0, "train.learning_rate must be > 0")
    _require(train.batch_size >= 1, "train.batch_size must be >= 1")
    _require(train.max_epochs >= 1, "train.max_epochs must be >= 1")
    _require(train.min_steps >= 1, "train.min_steps must be >= 1")
    _require(train.early_stop_delta >= 0, "train.early_stop_delta must be >= 0")

    lp = data.get("loop", {})
    _check_keys(lp, "loop", ("budget", "rounds", "n_init", "per_minority",
                             "time_limit", "record_timing"))
    loop = LoopConfig(
        budget=_get(lp, "loop", "budget", int, 5000),
        rounds=_get(lp, "loop", "rounds", int, 200),
        n_init=_get(lp, "loop", "n_init", int, 100),
        per_minority=_get(lp, "loop", "per_minority", int, 5),
        time_limit=_get(lp, "loop", "time_limit", float, None, nullable=True),
        record_timing=_get(lp, "loop", "record_timing", bool, True),
    )
    _require(loop.budget >= 1, "loop.budget must be >= 1")
    _require(loop.rounds >= 1, "loop.rounds must be >= 1")
    _require(loop.budget // loop.rounds >= 1,
             "loop.budget // loop.rounds must be >= 1")
    _require(loop.n_init >= 1, "loop.n_init must be >= 1")
    _require(loop.per_minority >= 0, "loop.per_minority must be >= 0")
    _require(loop.time_limit is None or loop.time_limit > 0,
             "loop.time_limit must be > 0 when set")

    sd = data.get("seeds", {})
    _check_keys(sd, "seeds", ("model_init", "data_order", "initial_set", "selection"))
    seeds = SeedsConfig(
        model_init=_get(sd, "seeds", "model_init", int, 0),
        data_order=_get(sd, "seeds", "data_order", int, 1),
        initial_set=_get(sd, "seeds", "initial_set", int, 2),
        selection=_get(sd, "seeds", "selection", int, 3),
    )

    return ExperimentConfig(dataset, index, filt, strategy, train, loop, seeds)


def parse_config(path) -> ExperimentConfig:
    """Parse and validate a JSON config file."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config_dict(data)


def effective_config_dict(cfg: ExperimentConfig) -> dict:
    """Fully explicit config dict; parsing it back yields an equal config."""
    filt: dict = {"type": cfg.filter.type}
    if cfg.filter.type == "anchoral":
        overrides = cfg.filter.anchor_strategy_overrides
        filt.update({
            "a": cfg.filter.a,
            "K": cfg.filter.n_neighbors,
            "max_subpool": cfg.filter.max_subpool,
            "anchor_strategy": cfg.filter.anchor_strategy,
            "anchor_strategy_overrides":
                None if overrides is None
                else {str(k): v for k, v in overrides.items()},
        })
    elif cfg.filter.type == "random_subset":
        filt["m"] = cfg.filter.m
    elif cfg.filter.type == "seals":
        filt["k"] = cfg.filter.k
    return {
        "dataset": asdict(cfg.dataset),
        "index": asdict(cfg.index),
        "filter": filt,
        "strategy": asdict(cfg.strategy),
        "train": asdict(cfg.train),
        "loop": asdict(cfg.loop),
        "seeds": asdict(cfg.seeds),
    }


def effective_config_json(cfg: ExperimentConfig) -> str:
    return json.dumps(effective_config_dict(cfg), indent=2, sort_keys=True) + "\n"
