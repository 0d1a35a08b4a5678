"""Objective, optimiser loop and popularity metrics."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import ObservedCascade
from .models import Batch, CascadeModel, GraphStructure, make_batch

log = logging.getLogger(__name__)

EPS_CLIP = 1e-7
LR_GRID = (0.1, 0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001, 0.00005, 0.00001)
L2_GRID = (0.5, 0.1, 0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001, 0.00005, 0.00001,
           0.000005, 0.000001, 0.0000005, 0.0000001, 0.00000005, 0.00000001)
BATCH_GRID = (15, 10, 5)
K_GRID = (5, 4, 3, 2)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    l2: float = 1e-4
    loss_coef: float = 0.5
    batch_size: int = 10
    k: int = 2
    hidden: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        for name in ("lr", "l2", "loss_coef", "clip_norm"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                out.append(f"{name} must be a number, got {v!r}")
            elif not (v > 0 if name == "clip_norm" else v >= 0):
                out.append(f"{name} must be {'positive' if name == 'clip_norm' else 'non-negative'}, got {v}")
        for name in ("batch_size", "k", "hidden", "max_epochs", "patience"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                out.append(f"{name} must be a positive integer, got {v!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            out.append(f"seed must be a non-negative integer, got {self.seed!r}")
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Sample:
    """One observed cascade with its prediction target."""

    message_id: str
    observed: np.ndarray  # 0/1 per node
    final: np.ndarray  # 0/1 per node, the eventual adopters
    truth: int
    message: np.ndarray
    preventive: bool = False
    cascade: ObservedCascade | None = None

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())


@dataclass
class CascadeSet:
    """Samples over one graph, plus what is needed to batch them."""

    structure: GraphStructure
    static: np.ndarray
    samples: list[Sample]

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, items: Iterable) -> "CascadeSet":
        items = list(items)
        if items and isinstance(items[0], Sample):
            chosen = items
        else:
            chosen = [self.samples[i] for i in items]
        return CascadeSet(self.structure, self.static, chosen)

    def where(self, pred: Callable[[Sample], bool]) -> "CascadeSet":
        return self.subset([s for s in self.samples if pred(s)])

    def batch(self, idx: Sequence[int]) -> Batch:
        chosen = [self.samples[i] for i in idx]
        return make_batch(
            self.structure,
            self.static,
            np.vstack([s.observed for s in chosen]),
            np.vstack([s.message for s in chosen]),
        )

    def truths(self) -> np.ndarray:
        return np.array([s.truth for s in self.samples], dtype=np.float64)

    def split(self, fractions=(0.7, 0.15, 0.15), seed: int = 0) -> tuple["CascadeSet", ...]:
        """Seeded shuffle split by cascade."""
        n = len(self.samples)
        order = np.random.default_rng(seed).permutation(n)
        cuts = np.floor(np.cumsum(fractions)[:-1] * n).astype(int)
        return tuple(self.subset(sorted(part.tolist())) for part in np.split(order, cuts))


# ------------------------------------------------------------------ losses


def mrse(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("truths must be positive")
    return float(np.mean(((p - t) / t) ** 2))


def mrse_loss(predictions: Tensor, truths) -> Tensor:
    """Mean relative squared error of a ``(B, 1)`` prediction tensor."""
    t = np.asarray(truths, dtype=np.float64).reshape(-1, 1)
    if np.any(t <= 0):
        raise ValueError("truths must be positive")
    rel = ad.mul(ad.sub(predictions, t), 1.0 / t)
    return ad.mean(ad.mul(rel, rel))


def user_loss(statuses: Tensor, final) -> Tensor:
    """Mean binary cross-entropy between predicted and eventual node statuses."""
    y = np.asarray(final, dtype=np.float64).reshape(statuses.shape)
    s = ad.clip(statuses, EPS_CLIP, 1.0 - EPS_CLIP)
    ce = ad.add(ad.mul(y, ad.log(s)), ad.mul(1.0 - y, ad.log(ad.sub(1.0, s))))
    return ad.scale(ad.mean(ce), -1.0)


def parameter_penalty(params: Iterable[Tensor]) -> Tensor:
    total = None
    for p in params:
        n = ad.l2norm(p)
        total = n if total is None else ad.add(total, n)
    return total if total is not None else Tensor(0.0)


def regularized_loss(mrse_term: Tensor, params: Iterable[Tensor], statuses: Tensor | None, final,
                     l2: float, loss_coef: float) -> Tensor:
    loss = mrse_term
    if l2:
        loss = ad.add(loss, ad.scale(parameter_penalty(params), l2))
    if loss_coef and statuses is not None:
        loss = ad.add(loss, ad.scale(user_loss(statuses, final), loss_coef))
    return loss


# ------------------------------------------------------------------ metrics


@dataclass(frozen=True)
class MetricsReport:
    mrse: float
    mape: float
    wroperc: float  # fraction in [0, 1]
    count: int
    threshold: float = 0.5

    def to_record(self) -> dict:
        return asdict(self)


def metrics(predictions, truths, threshold: float = 0.5) -> MetricsReport:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty evaluation set")
    if np.any(t <= 0):
        raise ValueError("truths must be positive")
    rel = np.abs(p - t) / t
    return MetricsReport(
        mrse=float(np.mean(rel**2)),
        mape=float(np.mean(rel)),
        wroperc=float(np.mean(rel >= threshold)),
        count=int(p.size),
        threshold=threshold,
    )


def predict_set(model: CascadeModel, data: CascadeSet, batch_size: int = 32) -> np.ndarray:
    out = []
    for start in range(0, len(data), batch_size):
        idx = range(start, min(start + batch_size, len(data)))
        out.append(model.predict(data.batch(idx)))
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model: CascadeModel, data: CascadeSet, threshold: float = 0.5) -> MetricsReport:
    return metrics(predict_set(model, data), data.truths(), threshold)


# ------------------------------------------------------------------ training


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    train_mrse: list[float] = field(default_factory=list)
    val_mrse: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def to_record(self) -> dict:
        return asdict(self)


def batch_objective(model: CascadeModel, data: CascadeSet, idx: Sequence[int], config: TrainConfig):
    batch = data.batch(idx)
    fwd = model.forward(batch)
    truths = [data.samples[i].truth for i in idx]
    final = np.concatenate([data.samples[i].final for i in idx])
    fit = mrse_loss(fwd.predictions, truths)
    loss = regularized_loss(fit, model.params.values(), fwd.statuses, final, config.l2, config.loss_coef)
    return loss, fit


def sgd_step(model: CascadeModel, lr: float, clip_norm: float) -> float:
    grads = model.params.grads()
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    factor = lr * (clip_norm / norm if norm > clip_norm else 1.0)
    if factor:
        for name, p in model.params.items():
            p.value = p.value - factor * grads[name]
    return norm


def train(model: CascadeModel, train_set: CascadeSet, val_set: CascadeSet, config: TrainConfig) -> tuple[CascadeModel, History]:
    """Mini-batch SGD with early stopping on validation MRSE.

    The model is left holding the parameters of the best validation epoch.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    history = History()
    params = list(model.params.values())

    def val_score():
        return evaluate(model, val_set).mrse if len(val_set) else history.train_mrse[-1]

    best = model.params.snapshot()
    best_score = math.inf
    if len(val_set):
        best_score = val_score()
        history.val_mrse.append(best_score)
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_set))
        losses, fits, weights = [], [], []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size].tolist()
            model.params.zero_grad()
            loss, fit = batch_objective(model, train_set, idx, config)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch} (lr={config.lr})")
            ad.backward(loss, params)
            sgd_step(model, config.lr, config.clip_norm)
            losses.append(value)
            fits.append(fit.item())
            weights.append(len(idx))
        history.train_loss.append(float(np.average(losses, weights=weights)))
        history.train_mrse.append(float(np.average(fits, weights=weights)))
        score = val_score()
        if not math.isfinite(score):
            raise TrainingDiverged(f"non-finite validation MRSE at epoch {epoch}")
        if len(val_set):
            history.val_mrse.append(score)
        if score < best_score:
            best_score, best, stale = score, model.params.snapshot(), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
                break
    model.params.load(best)
    return model, history


def grid(space: dict) -> list[dict]:
    """Cartesian product of list-valued entries in ``space``."""
    keys = sorted(space)
    values = [v if isinstance(v, (list, tuple)) else [v] for v in (space[k] for k in keys)]
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


@dataclass
class SweepResult:
    config: TrainConfig
    val_mrse: float
    model: CascadeModel
    history: History


def sweep(make_model: Callable[[TrainConfig], CascadeModel], train_set: CascadeSet, val_set: CascadeSet,
          space: dict, base: TrainConfig | None = None) -> list[SweepResult]:
    """Train one model per grid point; results sorted by validation MRSE."""
    base = base or TrainConfig()
    results = []
    for point in grid(space):
        cfg = replace(base, **point)
        model = make_model(cfg)
        try:
            model, hist = train(model, train_set, val_set, cfg)
            score = min(hist.val_mrse) if hist.val_mrse else math.inf
        except TrainingDiverged as exc:
            log.warning("grid point %s diverged: %s", point, exc)
            hist, score = History(), math.inf
        results.append(SweepResult(cfg, score, model, hist))
    results.sort(key=lambda r: (r.val_mrse, sorted(r.config.to_dict().items())))
    return results


def format_metrics_table(rows: dict[str, dict[str, MetricsReport]], subsets: Sequence[str]) -> str:
    """Rows are models; columns are MRSE/MAPE/WroPerc per cascade subset."""
    name_w = max([len("model")] + [len(r) for r in rows]) + 2
    head1 = " " * name_w + "".join(f"{s:^30}" for s in subsets)
    head2 = f"{'model':<{name_w}}" + "".join(f"{'MRSE':>10}{'MAPE':>10}{'WroPerc':>10}" for _ in subsets)
    lines = [head1.rstrip(), head2, "-" * len(head2)]
    for name, per in rows.items():
        cells = []
        for s in subsets:
            m = per.get(s)
            cells.append(" " * 30 if m is None else f"{m.mrse:>10.4f}{m.mape:>10.4f}{m.wroperc * 100:>9.2f}%")
        lines.append(f"{name:<{name_w}}" + "".join(cells))
    return "\n".join(lines)
