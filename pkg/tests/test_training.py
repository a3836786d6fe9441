import math

import numpy as np
import pytest

from mgsolve.autodiff import ParamStore, Tape
from mgsolve.learned import init_weights
from mgsolve.training import (AdamState, TrainConfig, TrainingDiverged, adam_step, lr_schedule,
                              residual_loss, sample_batch, size_schedule, train, write_history)


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.batches_per_epoch, cfg.lr, cfg.lr_step_epochs, cfg.lr_gamma) == (50, 1000, 0.003, 2, 0.8)
    assert (cfg.size_step, cfg.initial_size, cfg.initial_level, cfg.initial_batch) == (10, 31, 4, 16)
    assert (cfg.max_size, cfg.min_batch) == (511, 2)


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_schedule(0, cfg) == 0.003
    assert lr_schedule(1, cfg) == 0.003
    assert lr_schedule(2, cfg) == pytest.approx(0.0024)
    assert lr_schedule(5, cfg) == pytest.approx(0.003 * 0.64)


def test_size_schedule_defaults():
    cfg = TrainConfig()
    got = [size_schedule(e, cfg) for e in (0, 9, 10, 19, 20, 30, 40, 49)]
    assert got == [(31, 4, 16), (31, 4, 16), (63, 5, 8), (63, 5, 8), (127, 6, 4),
                   (255, 7, 2), (511, 8, 2), (511, 8, 2)]


def test_size_schedule_stops_at_max():
    cfg = TrainConfig(size_step=1, max_size=63, initial_batch=4)
    assert size_schedule(5, cfg) == (63, 5, 2)


@pytest.mark.parametrize("bad", [dict(epochs=0), dict(lr=0.0), dict(lr_gamma=1.5),
                                 dict(initial_size=30), dict(max_size=15), dict(precision="f16"),
                                 dict(coef_distribution="bogus")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.array([0.5, -4.0, 0.0])}
    state = AdamState(params)
    adam_step(params, grads, state, 0.1)
    # bias-corrected first step is lr * sign(g) for non-zero g
    np.testing.assert_allclose(params["w"], [0.9, -1.9, 3.0], atol=1e-7)


def test_adam_minimizes_quadratic():
    params = {"w": np.array([5.0, -3.0])}
    state = AdamState(params)
    for _ in range(2000):
        adam_step(params, {"w": 2 * params["w"]}, state, 0.05)
    np.testing.assert_allclose(params["w"], 0.0, atol=1e-3)


def test_residual_loss_value(rng):
    cfg = TrainConfig(channels=2)
    spec, rhs = sample_batch(cfg, 15, 3, rng)
    w = init_weights(2)
    loss = residual_loss(Tape(record=False), w, spec, rhs, 2).value
    from mgsolve.discretization import residual
    from mgsolve.learned import setup, solve_apply
    sol = solve_apply(w, setup(w, spec.coef, 2), rhs, 2)
    assert float(loss) == pytest.approx(np.sum(residual(spec, sol, rhs) ** 2) / 3, rel=1e-12)


def test_sample_batch_shapes(rng):
    cfg = TrainConfig(precision="f32")
    spec, rhs = sample_batch(cfg, 31, 4, rng)
    assert spec.coef.shape == rhs.shape == (4, 1, 31, 31)
    assert rhs.dtype == spec.dtype == np.float32
    assert spec.coef.min() >= 1e-3 * (1 - 1e-6) and spec.coef.max() <= 1


def _small_cfg(**kw):
    base = dict(epochs=2, batches_per_epoch=4, initial_size=15, initial_level=2,
                initial_batch=4, size_step=1, max_size=31, channels=2, seed=11)
    base.update(kw)
    return TrainConfig(**base)


def test_train_is_deterministic():
    a = train(_small_cfg())
    b = train(_small_cfg())
    for name in a.weights.names():
        np.testing.assert_array_equal(a.weights[name], b.weights[name])
    assert [r["loss"] for r in a.history] == [r["loss"] for r in b.history]


def test_training_history_records_schedule():
    res = train(_small_cfg())
    assert len(res.history) == 8
    assert {r["size"] for r in res.history} == {15, 31}
    assert [r["level"] for r in res.history[::4]] == [2, 3]
    assert [r["batch_size"] for r in res.history[::4]] == [4, 2]
    assert all(math.isfinite(r["loss"]) and r["peak_bytes"] > 0 for r in res.history)
    assert set(res.epoch_mean_losses()) == {0, 1}


def test_training_reduces_loss():
    res = train(_small_cfg(epochs=3, batches_per_epoch=30, size_step=10, channels=4, lr=0.01))
    losses = res.epoch_mean_losses()
    assert losses[2] < 0.5 * losses[0]


def test_divergence_reports_batch(monkeypatch):
    import mgsolve.training as tr
    monkeypatch.setattr(tr, "residual_loss",
                        lambda tape, *a: tape.constant(np.array(np.nan)))
    with pytest.raises(TrainingDiverged) as info:
        train(_small_cfg())
    assert info.value.epoch == 0 and info.value.batch == 0
    assert info.value.batch_seed == (11, 0, 0)


def test_f32_training_runs():
    res = train(_small_cfg(precision="f32", epochs=1))
    assert res.weights.dtype == np.float32


def test_write_history(tmp_path):
    res = train(_small_cfg(epochs=1, batches_per_epoch=2))
    path = tmp_path / "h.csv"
    write_history(path, res.history)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,batch,loss,lr,size,level,batch_size,seconds,peak_bytes"
    assert len(lines) == 3
