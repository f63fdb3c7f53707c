import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from core.errors import DivergenceDetected, EmptyInput, LengthMismatch, ShapeMismatch
from core.models import ModelParams, ModelSpec, TrainConfig
from core.neural import init_params, load_checkpoint, predict_batched
from core.pipeline import make_windows, split
from core.training import (
    EarlyStopping,
    adam_step,
    clip_gradients,
    init_adam,
    load_adam_state,
    mse,
    save_adam_state,
    train,
    write_history_csv,
)


def _zeroed(params):
    return ModelParams.from_named({k: np.zeros_like(v) for k, v in params.named_tensors().items()})


def _grads_like(params, rng):
    out = _zeroed(params)
    for tensor in out.named_tensors().values():
        tensor[...] = rng.normal(size=tensor.shape)
    return out


def _constant_target_dataset(rows=2006, window=6, value=0.8):
    rng = np.random.default_rng(0)
    frame = pd.DataFrame({"close": np.full(rows, value), "noise": rng.uniform(size=rows)})
    return split(make_windows(frame, window), (0.8, 0.1, 0.1))


def _sine_dataset(rows=1000, window=24):
    t = np.arange(rows)
    frame = pd.DataFrame({"close": 0.5 + 0.5 * np.sin(2 * np.pi * t / 24)})
    return split(make_windows(frame, window), (0.7, 0.15, 0.15))


# mse -----------------------------------------------------------------------

def test_mse_examples():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([1.0, 2.0], [0.0, 0.0]) == 2.5
    errors = np.array([0.3, -1.2, 2.0])
    assert mse(3.0 * errors, np.zeros(3)) == pytest.approx(9.0 * mse(errors, np.zeros(3)))


def test_mse_errors():
    with pytest.raises(EmptyInput):
        mse([], [])
    with pytest.raises(LengthMismatch):
        mse([1.0], [1.0, 2.0])


# adam ----------------------------------------------------------------------

def test_zero_gradient_leaves_params():
    spec = ModelSpec("uni", hidden_size=2, n_features=1)
    params = init_params(spec, seed=1)
    updated, state = adam_step(params, _zeroed(params), init_adam(params), TrainConfig())
    for name, tensor in params.named_tensors().items():
        np.testing.assert_array_equal(updated.named_tensors()[name], tensor)
    assert state.t == 1


def test_first_step_moves_by_learning_rate_against_gradient():
    spec = ModelSpec("uni", hidden_size=2, n_features=1)
    params = init_params(spec, seed=1)
    grads = _grads_like(params, np.random.default_rng(4))
    grads.head_b[:] = 1.0
    updated, _ = adam_step(params, grads, None, TrainConfig(learning_rate=0.001))
    assert updated.head_b[0] - params.head_b[0] == pytest.approx(-0.001, abs=1e-10)
    for name, tensor in params.named_tensors().items():
        step = updated.named_tensors()[name] - tensor
        g = grads.named_tensors()[name]
        assert np.all(np.sign(step) == -np.sign(g))
    # inputs untouched
    assert params.head_b[0] == 0.0


def test_adam_matches_scalar_oracle():
    config = TrainConfig(learning_rate=0.01)
    spec = ModelSpec("uni", hidden_size=2, n_features=1)
    params = init_params(spec, seed=2)
    state = init_adam(params)
    names = list(params.named_tensors())
    theta = {n: params.named_tensors()[n].ravel().tolist() for n in names}
    m = {n: [0.0] * len(theta[n]) for n in names}
    v = {n: [0.0] * len(theta[n]) for n in names}
    rng = np.random.default_rng(3)
    for t in range(1, 101):
        grads = _grads_like(params, rng)
        params, state = adam_step(params, grads, state, config)
        for n in names:
            g = grads.named_tensors()[n].ravel().tolist()
            for k in range(len(g)):
                m[n][k] = config.beta1 * m[n][k] + (1 - config.beta1) * g[k]
                v[n][k] = config.beta2 * v[n][k] + (1 - config.beta2) * g[k] * g[k]
                m_hat = m[n][k] / (1 - config.beta1 ** t)
                v_hat = v[n][k] / (1 - config.beta2 ** t)
                theta[n][k] -= config.learning_rate * m_hat / (math.sqrt(v_hat) + config.eps)
        for n in names:
            np.testing.assert_allclose(params.named_tensors()[n].ravel(), theta[n], rtol=0, atol=1e-12)
    assert state.t == 100


def test_adam_shape_mismatch():
    params = init_params(ModelSpec("uni", hidden_size=2, n_features=1))
    other = init_params(ModelSpec("uni", hidden_size=3, n_features=1))
    with pytest.raises(ShapeMismatch):
        adam_step(params, other, None, TrainConfig())


def test_clip_gradients():
    params = init_params(ModelSpec("uni", hidden_size=2, n_features=1))
    grads = _grads_like(params, np.random.default_rng(0))
    clipped, norm = clip_gradients(grads, 0.5)
    new_norm = math.sqrt(sum(float(np.sum(g * g)) for g in clipped.named_tensors().values()))
    assert norm > 0.5
    assert new_norm == pytest.approx(0.5, rel=1e-9)
    same, _ = clip_gradients(grads, None)
    assert same is grads


# early stopping ------------------------------------------------------------

def test_patience_one_stops_after_first_worse_epoch():
    stopper = EarlyStopping(patience=1)
    assert stopper.update(1.0) is False
    assert stopper.update(2.0) is True
    assert stopper.best_epoch == 1


def test_equal_loss_is_not_an_improvement():
    stopper = EarlyStopping(patience=2)
    stopper.update(1.0)
    assert stopper.update(1.0) is False
    assert not stopper.improved
    assert stopper.update(1.0) is True
    assert stopper.best_epoch == 1


def test_stopping_bound():
    rng = np.random.default_rng(8)
    for _ in range(50):
        stopper = EarlyStopping(patience=3)
        for epoch in range(1, 40):
            if stopper.update(float(rng.uniform())):
                break
        assert epoch <= stopper.best_epoch + 3


# train ---------------------------------------------------------------------

def test_constant_target_converges():
    dataset = _constant_target_dataset()
    spec = ModelSpec("uni", hidden_size=8, n_features=2)
    _, history = train(spec, dataset, TrainConfig(epochs=10, seed=1))
    assert history.val_loss[0] / history.best_val_loss >= 10.0


def test_returned_params_are_the_best_epoch():
    dataset = _constant_target_dataset(rows=606)
    spec = ModelSpec("bi", hidden_size=4, n_features=2)
    params, history = train(spec, dataset, TrainConfig(epochs=6, patience=2, seed=3))
    X_val, y_val = dataset.segment("val")
    assert mse(predict_batched(X_val, spec, params), y_val) == pytest.approx(history.best_val_loss, abs=1e-15)
    assert history.best_val_loss == min(history.val_loss)
    assert len(history.train_loss) == len(history.val_loss) == history.epochs_run
    assert history.epochs_run <= history.best_epoch + 2


def test_training_is_deterministic():
    dataset = _constant_target_dataset(rows=406)
    spec = ModelSpec("bi", hidden_size=4, n_features=2)
    config = TrainConfig(epochs=3, seed=11)
    p1, h1 = train(spec, dataset, config)
    p2, h2 = train(spec, dataset, config)
    assert h1 == h2
    for name, tensor in p1.named_tensors().items():
        np.testing.assert_array_equal(p2.named_tensors()[name], tensor)


def test_shuffled_training_is_seeded():
    dataset = _constant_target_dataset(rows=406)
    spec = ModelSpec("uni", hidden_size=3, n_features=2)
    config = TrainConfig(epochs=2, seed=4, shuffle=True)
    _, h1 = train(spec, dataset, config)
    _, h2 = train(spec, dataset, config)
    assert h1 == h2


def test_noiseless_sine_train_loss_mostly_decreases():
    dataset = _sine_dataset()
    spec = ModelSpec("uni", hidden_size=16, n_features=1)
    _, history = train(spec, dataset, TrainConfig(seed=42))
    losses = history.train_loss
    decreases = sum(b < a for a, b in zip(losses, losses[1:]))
    assert decreases >= 7


def test_divergence_keeps_last_finite_params():
    dataset = _constant_target_dataset(rows=406)
    X = dataset.X.copy()
    X[300, 2, 1] = np.nan
    broken = replace(dataset, X=X)
    spec = ModelSpec("uni", hidden_size=3, n_features=2)
    with pytest.raises(DivergenceDetected) as info:
        train(spec, broken, TrainConfig(epochs=2, seed=0))
    assert info.value.exit_code == 3
    assert info.value.params is not None
    assert all(np.isfinite(t).all() for t in info.value.params.named_tensors().values())
    assert info.value.history.epochs_run == 0


def test_training_needs_validation_windows():
    frame = pd.DataFrame({"close": np.linspace(0, 1, 40)})
    dataset = make_windows(frame, 4)
    with pytest.raises(ValueError):
        train(ModelSpec("uni", 2, 1), dataset, TrainConfig(epochs=1))


def test_checkpoint_and_optimizer_state_written(tmp_path):
    dataset = _constant_target_dataset(rows=406)
    spec = ModelSpec("uni", hidden_size=3, n_features=2)
    config = TrainConfig(epochs=3, batch_size=50, seed=2)
    params, history = train(spec, dataset, config, checkpoint_path=tmp_path / "model.ckpt")

    loaded_spec, loaded, header = load_checkpoint(tmp_path / "model.ckpt")
    assert loaded_spec == spec
    assert header["epoch"] == history.best_epoch
    for name, tensor in params.named_tensors().items():
        np.testing.assert_array_equal(loaded.named_tensors()[name], tensor)

    state = load_adam_state(tmp_path / "model.adam")
    batches = math.ceil(len(dataset.segment("train")[1]) / 50)
    assert state.t == history.best_epoch * batches
    again = load_adam_state(save_adam_state(tmp_path / "copy.adam", state))
    assert again.t == state.t
    assert set(again.m) == set(params.named_tensors())


def test_history_csv(tmp_path):
    dataset = _constant_target_dataset(rows=206)
    _, history = train(ModelSpec("uni", 2, 2), dataset, TrainConfig(epochs=2))
    frame = pd.read_csv(write_history_csv(history, tmp_path / "history.csv"))
    assert list(frame.columns) == ["epoch", "train_loss", "val_loss"]
    assert frame["epoch"].tolist() == [1, 2]
    assert frame["val_loss"].tolist() == history.val_loss

