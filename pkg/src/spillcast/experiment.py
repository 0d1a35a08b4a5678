"""Run configuration, model training over a dataset split, and comparison tables."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import numpy as np

from . import baselines
from .graph import DEFAULT_WINDOW
from .models import KINDS, CascadeModel, build_model
from .pipeline import Dataset
from .training import (
    BATCH_GRID,
    K_GRID,
    L2_GRID,
    LR_GRID,
    CascadeSet,
    MetricsReport,
    TrainConfig,
    metrics,
    predict_set,
    sweep,
    train,
)

log = logging.getLogger(__name__)

FULL_GRID = {"lr": list(LR_GRID), "l2": list(L2_GRID), "batch_size": list(BATCH_GRID), "k": list(K_GRID)}
BASELINES = ("observed", "ridge", "seismic")


@dataclass(frozen=True)
class DataConfig:
    window: int = DEFAULT_WINDOW
    min_size: int = 3
    node_dim: int = 64
    walks_per_node: int = 10
    walk_length: int = 40
    ridge_l2: float = 1.0

    def problems(self) -> list[str]:
        out = []
        for name in ("window", "min_size", "node_dim", "walks_per_node", "walk_length"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                out.append(f"{name} must be a positive integer, got {v!r}")
        if not (isinstance(self.ridge_l2, (int, float)) and self.ridge_l2 > 0):
            out.append(f"ridge_l2 must be positive, got {self.ridge_l2!r}")
        return out


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
DATA_KEYS = tuple(f.name for f in fields(DataConfig))


def resolve_config(values: Mapping, allow_grid: bool = False) -> tuple[TrainConfig, DataConfig, dict]:
    """Split a flat mapping into training and data settings plus grid axes.

    Every problem is collected before raising :class:`ConfigError`.
    """
    problems = []
    unknown = sorted(set(values) - set(TRAIN_KEYS) - set(DATA_KEYS))
    if unknown:
        problems.append(f"unknown config keys: {unknown}")
    train_kw, data_kw, space = {}, {}, {}
    for k, v in values.items():
        v = [_coerce(k, x) for x in v] if isinstance(v, list) else _coerce(k, v)
        if isinstance(v, list):
            if not allow_grid or k not in TRAIN_KEYS:
                problems.append(f"{k}: list values are only allowed for training keys in sweep mode")
                continue
            if not v:
                problems.append(f"{k}: empty grid")
                continue
            space[k] = v
            v = v[0]
        if k in TRAIN_KEYS:
            train_kw[k] = v
        elif k in DATA_KEYS:
            data_kw[k] = v
    base = {f.name: train_kw.get(f.name, f.default) for f in fields(TrainConfig)}
    problems += _train_problems(base)
    for k, grid_values in space.items():
        for v in grid_values[1:]:
            problems += [f"{k} grid value {v!r}: {p}" for p in _train_problems({**base, k: v})]
    dc = DataConfig(**{k: data_kw[k] for k in data_kw if k in DATA_KEYS})
    problems += dc.problems()
    if problems:
        raise ConfigError(problems)
    return TrainConfig(**base), dc, space


FLOAT_KEYS = {f.name for f in fields(TrainConfig) + fields(DataConfig) if isinstance(f.default, float)}


def _coerce(key: str, value):
    """YAML 1.1 reads ``1e-5`` (no dot) as a string; accept it for float settings."""
    if key in FLOAT_KEYS and isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _train_problems(values: dict) -> list[str]:
    probe = object.__new__(TrainConfig)
    for k, v in values.items():
        object.__setattr__(probe, k, v)
    return probe.problems()


def split_dataset(ds: Dataset, seed: int) -> tuple[CascadeSet, CascadeSet, CascadeSet]:
    return ds.samples.split((0.7, 0.15, 0.15), seed=seed)


def make_model(kind: str, ds: Dataset, config: TrainConfig) -> CascadeModel:
    in_dim = 1 + ds.samples.static.shape[1]
    msg_dim = ds.samples.samples[0].message.size if len(ds.samples) else 128
    return build_model(kind, in_dim, len(ds.graph), k=config.k, hidden=config.hidden, msg_dim=msg_dim,
                       seed=config.seed)


def subset_metrics(predictions: np.ndarray, data: CascadeSet) -> dict[str, MetricsReport]:
    """Metrics on the full set, the preventive-measure subset and its complement."""
    truths = data.truths()
    flags = np.array([s.preventive for s in data.samples], dtype=bool)
    out = {"all": metrics(predictions, truths)}
    for name, mask in (("preventive", flags), ("other", ~flags)):
        if mask.any():
            out[name] = metrics(predictions[mask], truths[mask])
    return out


def model_predictions(model: CascadeModel, data: CascadeSet) -> np.ndarray:
    return predict_set(model, data)


def baseline_predictions(name: str, ds: Dataset, train_set: CascadeSet, test_set: CascadeSet,
                         data_config: DataConfig) -> np.ndarray:
    g = ds.graph
    if name == "observed":
        return np.array([s.n_observed for s in test_set.samples], dtype=np.float64)
    if name == "ridge":
        fit = baselines.ridge_fit(
            baselines.feature_matrix([s.cascade for s in train_set.samples], g), train_set.truths(), data_config.ridge_l2
        )
        return baselines.ridge_predict(fit, baselines.feature_matrix([s.cascade for s in test_set.samples], g))
    if name == "seismic":
        counts = baselines.follower_counts(g)
        return np.array([baselines.seismic_predict(s.cascade, counts) for s in test_set.samples])
    raise ValueError(f"unknown baseline {name!r}; choose from {BASELINES}")


@dataclass
class ComparisonResult:
    rows: dict[str, dict[str, MetricsReport]]
    configs: dict[str, TrainConfig]
    sweeps: dict[str, list]

    def to_record(self) -> dict:
        return {
            "rows": {m: {s: r.to_record() for s, r in per.items()} for m, per in self.rows.items()},
            "configs": {m: c.to_dict() for m, c in self.configs.items()},
            "sweeps": {
                m: [{"config": r.config.to_dict(), "val_mrse": r.val_mrse, "best_epoch": r.history.best_epoch}
                    for r in results]
                for m, results in self.sweeps.items()
            },
        }


def compare(ds: Dataset, kinds: Sequence[str], space: Mapping, base: TrainConfig, data_config: DataConfig,
            baseline_names: Sequence[str] = (), split_seed: int | None = None) -> ComparisonResult:
    """Grid-search each model kind on the validation split; report test metrics of the winners."""
    for kind in kinds:
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
    train_set, val_set, test_set = split_dataset(ds, base.seed if split_seed is None else split_seed)
    rows, configs, sweeps = {}, {}, {}
    for name in baseline_names:
        rows[name] = subset_metrics(baseline_predictions(name, ds, train_set, test_set, data_config), test_set)
    for kind in kinds:
        results = sweep(lambda cfg, kind=kind: make_model(kind, ds, cfg), train_set, val_set, dict(space), base)
        best = results[0]
        log.info("%s best %s val %.4f", kind, best.config.to_dict(), best.val_mrse)
        rows[kind] = subset_metrics(model_predictions(best.model, test_set), test_set)
        configs[kind] = best.config
        sweeps[kind] = results
    return ComparisonResult(rows, configs, sweeps)


def train_one(kind: str, ds: Dataset, config: TrainConfig):
    train_set, val_set, test_set = split_dataset(ds, config.seed)
    model = make_model(kind, ds, config)
    model, history = train(model, train_set, val_set, config)
    return model, history, subset_metrics(model_predictions(model, test_set), test_set)


def config_record(train_config: TrainConfig, data_config: DataConfig) -> dict:
    return {**train_config.to_dict(), **asdict(data_config)}
