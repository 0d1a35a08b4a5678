import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from spillcast import autodiff as ad
from spillcast.autodiff import Tensor
from spillcast.models import GraphStructure, build_model
from spillcast.training import (
    CascadeSet,
    Sample,
    TrainConfig,
    TrainingDiverged,
    batch_objective,
    evaluate,
    format_metrics_table,
    grid,
    metrics,
    mrse,
    mrse_loss,
    regularized_loss,
    sweep,
    train,
    user_loss,
)

import oracles

F = 3


def tiny_set(n_cascades=3, n=7, seed=0, kind_msg=4):
    rng = np.random.default_rng(seed)
    g = oracles.random_graph(n, rng, p=0.4)
    static = rng.normal(size=(n, F))
    samples = []
    for i in range(n_cascades):
        final = np.zeros(n)
        final[rng.choice(n, rng.integers(3, n), replace=False)] = 1
        observed = final.copy()
        on = np.flatnonzero(final)
        observed[on[2:]] = 0
        samples.append(Sample(f"m{i}", observed, final, int(final.sum()), rng.normal(size=kind_msg), i % 2 == 0))
    return CascadeSet(GraphStructure.from_graph(g), static, samples)


def model_for(data, kind="cgnn", seed=0, k=2):
    return build_model(kind, 1 + F, data.structure.n, k=k, hidden=8, msg_dim=4, seed=seed)


# ------------------------------------------------------------------ losses


def test_mrse_examples():
    assert mrse([4, 4], [4, 4]) == 0
    assert mrse([8, 2], [4, 1]) == 1.0
    assert mrse([6, 3], [4, 4]) == 0.15625
    assert mrse_loss(Tensor([[6.0], [3.0]]), [4, 4]).item() == 0.15625
    with pytest.raises(ValueError):
        mrse([1], [0])
    with pytest.raises(ValueError):
        mrse_loss(Tensor([[1.0]]), [0])


def test_regularized_loss_examples():
    fit = Tensor(0.3)
    assert regularized_loss(fit, [Tensor([[3.0, 4.0]])], None, None, 0.0, 0.0).item() == 0.3
    assert regularized_loss(fit, [Tensor([[3.0, 4.0]])], None, None, 1.0, 0.0).item() == pytest.approx(5.3)
    s = Tensor(np.array([[0.0], [1.0], [1.0]]))
    assert user_loss(s, [0, 1, 1]).item() == pytest.approx(0.0, abs=2e-7)
    assert user_loss(Tensor([[0.5]]), [1]).item() == pytest.approx(math.log(2))


@given(st.floats(0, 1), st.floats(0, 10), st.floats(0, 2))
def test_penalties_never_lower_loss(fit, theta, lam):
    w = Tensor(np.array([[0.5, -1.0]]))
    s = Tensor(np.array([[0.3], [0.9]]))
    assert regularized_loss(Tensor(fit), [w], s, [0, 1], theta, lam).item() >= fit


# ------------------------------------------------------------------ metrics


def test_metric_examples():
    t = np.array([3.0, 10.0, 7.0])
    assert metrics(t, t) == metrics(t, t)
    r = metrics(t, t)
    assert (r.mrse, r.mape, r.wroperc) == (0.0, 0.0, 0.0)
    r = metrics(1.5 * t, t)
    assert (r.mrse, r.mape, r.wroperc) == (0.25, 0.5, 1.0)
    with pytest.raises(ValueError):
        metrics([], [])


@pytest.mark.parametrize("seed", range(3))
def test_metrics_match_direct_formula(seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(1, 50, 20).astype(float)
    p = rng.uniform(0, 80, 20)
    r = metrics(p, t)
    rel = [abs(a - b) / b for a, b in zip(p, t)]
    assert r.mrse == pytest.approx(sum(x * x for x in rel) / 20, rel=1e-12)
    assert r.mape == pytest.approx(sum(rel) / 20, rel=1e-12)
    assert r.wroperc == sum(x >= 0.5 for x in rel) / 20


values = hnp.arrays(np.float64, 12, elements=st.floats(0.0, 100.0))


@given(values, st.floats(0.01, 3), st.floats(0.01, 3))
def test_wroperc_monotone_in_threshold(p, a, b):
    t = np.arange(1.0, 13.0)
    lo, hi = sorted((a, b))
    assert metrics(p, t, lo).wroperc >= metrics(p, t, hi).wroperc


@given(values)
def test_jensen_and_order_invariance(p):
    t = np.arange(1.0, 13.0)
    r = metrics(p, t)
    assert r.mrse >= r.mape ** 2 - 1e-12
    perm = np.random.default_rng(0).permutation(12)
    r2 = metrics(p[perm], t[perm])
    assert r2.mrse == pytest.approx(r.mrse) and r2.wroperc == r.wroperc


@given(st.floats(0.0, 3.0))
def test_constant_error_mrse_is_mape_squared(c):
    t = np.arange(1.0, 6.0)
    r = metrics(t * (1 + c), t)
    assert r.mrse == pytest.approx(r.mape ** 2, rel=1e-9, abs=1e-15)


# ------------------------------------------------------------------ config


def test_train_config_validation():
    with pytest.raises(ValueError, match="lr"):
        TrainConfig(lr=-1)
    with pytest.raises(ValueError, match="batch_size"):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"lr": 0.1, "momentum": 0.9})
    assert TrainConfig.from_dict(TrainConfig(lr=0.5).to_dict()) == TrainConfig(lr=0.5)


def test_grid_product():
    assert grid({"lr": [0.1, 0.01], "k": [2, 3], "l2": 0.5}) == [
        {"k": 2, "l2": 0.5, "lr": 0.1}, {"k": 2, "l2": 0.5, "lr": 0.01},
        {"k": 3, "l2": 0.5, "lr": 0.1}, {"k": 3, "l2": 0.5, "lr": 0.01},
    ]


def test_split_is_seeded_partition():
    data = tiny_set(20)
    parts = data.split(seed=3)
    ids = [s.message_id for p in parts for s in p.samples]
    assert sorted(ids) == sorted(s.message_id for s in data.samples)
    assert [len(p) for p in parts] == [14, 3, 3]
    assert [s.message_id for s in data.split(seed=3)[1].samples] == [s.message_id for s in parts[1].samples]


# ------------------------------------------------------------------ training


def test_zero_learning_rate_keeps_parameters():
    data = tiny_set()
    model = model_for(data)
    before = model.params.snapshot()
    train(model, data, data, TrainConfig(lr=0.0, max_epochs=3, batch_size=2))
    assert all(np.array_equal(before[k], v.value) for k, v in model.params.items())


def test_training_loss_non_increasing_small_lr():
    data = tiny_set(3)
    model = model_for(data, "gcn")
    cfg = TrainConfig(lr=1e-4, max_epochs=8, batch_size=3, patience=100)
    _, hist = train(model, data, data.subset([]), cfg)
    assert all(b <= a + 1e-12 for a, b in zip(hist.train_loss, hist.train_loss[1:]))


def test_training_is_deterministic():
    data = tiny_set(8)
    runs = []
    for _ in range(2):
        model, hist = train(model_for(data, "se-gat"), data, data, TrainConfig(lr=0.05, max_epochs=4, batch_size=3))
        runs.append((hist.to_record(), model.params.snapshot()))
    assert runs[0][0] == runs[1][0]
    assert all(runs[0][1][k].tobytes() == runs[1][1][k].tobytes() for k in runs[0][1])


def test_best_epoch_restored_and_early_stop():
    data = tiny_set(6)
    model, hist = train(model_for(data), data, data, TrainConfig(lr=0.1, max_epochs=30, batch_size=2, patience=2))
    assert len(hist.val_mrse) <= 31
    assert evaluate(model, data).mrse == pytest.approx(min(hist.val_mrse))
    assert hist.val_mrse[hist.best_epoch] == min(hist.val_mrse)


def test_divergence_is_reported():
    data = tiny_set()
    model = model_for(data, "gcn")
    for t in model.params.values():
        t.value = t.value * np.nan
    with pytest.raises(TrainingDiverged, match="non-finite"):
        train(model, data, data, TrainConfig(max_epochs=1))


def test_batch_objective_gradient():
    data = tiny_set(4)
    model = model_for(data, "se-cgnn")
    rng = np.random.default_rng(1)
    for t in model.params.values():
        t.value = t.value + rng.normal(0, 0.1, t.shape)
    cfg = TrainConfig(l2=0.01)
    params = list(model.params.values())
    loss, _ = batch_objective(model, data, [0, 1, 2, 3], cfg)
    ad.backward(loss, params)
    for name in ("layer0.W", "p", "W_d", "layer1.mu_a"):
        t = model.params[name]
        num = oracles.numeric_grad(lambda: batch_objective(model, data, [0, 1, 2, 3], cfg)[0].item(), t.value)
        assert oracles.rel_error(t.grad, num) < 1e-4, name


@pytest.mark.parametrize("kind", ["gcn", "gat", "cgnn"])
def test_single_cascade_overfit(kind):
    data = tiny_set(1, seed=4)
    model = model_for(data, kind)
    cfg = TrainConfig(lr=0.1, l2=0.0, loss_coef=0.0, batch_size=1, max_epochs=500, patience=500)
    _, hist = train(model, data, data, cfg)
    assert min(hist.train_mrse) < 0.01


def test_sweep_sorted_by_validation():
    data = tiny_set(6)
    res = sweep(lambda cfg: model_for(data, "gcn", k=cfg.k), data, data, {"lr": [0.0, 0.1], "k": [2]},
                TrainConfig(max_epochs=3, batch_size=3))
    assert len(res) == 2 and res[0].val_mrse <= res[1].val_mrse


def test_metrics_table_layout():
    r = metrics([1.5, 2.0], [1.0, 2.0])
    text = format_metrics_table({"gcn": {"all": r}}, ["all", "preventive"])
    lines = text.splitlines()
    assert "MRSE" in lines[1] and "WroPerc" in lines[1]
    assert "50.00%" in lines[3]
