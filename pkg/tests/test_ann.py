import time

import numpy as np
import pytest

from gridmon.ann import (AnnArchitecture, AnnError, SpecHashMismatch, TrainConfig,
                         build_training_set, forward, hidden_size, init_model,
                         load_model, loss_and_grads, predict, predict_batch,
                         save_model, train, train_monitor_pair)
from gridmon.measurements import MeasurementSet, make_spec
from gridmon.scenarios import DEFAULT_AXES, generate_set

CONFIG_0 = (False, False, False, True, True, True)


def test_hidden_size_two_thirds_rule():
    assert hidden_size(18, 15) == 27
    assert hidden_size(3, 3) == 5
    assert hidden_size(1, 1) == 2
    with pytest.raises(AnnError):
        hidden_size(0, 3)


def test_architecture_layer_sizes():
    arch = AnnArchitecture(n_in=18, n_out=15)
    assert arch.layer_sizes() == [18, 27, 27, 27, 15]
    assert AnnArchitecture(n_in=18, n_out=15, layer_size_multiplier=2).layer_sizes() \
        == [18, 54, 54, 54, 15]
    assert AnnArchitecture(n_in=18, n_out=15, n_hidden_layers=1,
                           hidden_size_override=2).layer_sizes() == [18, 2, 15]


def test_init_bounds_follow_fan_in():
    arch = AnnArchitecture(n_in=100, n_out=3, n_hidden_layers=1)
    model = init_model(arch, seed=0)
    w0 = model.weights[0]  # fan-in 100 -> bound 0.238
    assert np.abs(w0).max() <= 2.38 / 10 + 1e-12
    assert np.abs(w0).max() > 0.9 * 2.38 / 10  # bound is actually exercised
    assert all(np.all(b == 0) for b in model.biases)


def test_init_bound_fan_in_one():
    arch = AnnArchitecture(n_in=1, n_out=1, n_hidden_layers=1)
    model = init_model(arch, seed=3)
    assert np.abs(model.weights[0]).max() <= 2.38


def test_init_deterministic():
    arch = AnnArchitecture(n_in=7, n_out=2)
    a = init_model(arch, seed=9)
    b = init_model(arch, seed=9)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)


def test_forward_single_linear_layer_is_matmul():
    arch = AnnArchitecture(n_in=4, n_out=3, n_hidden_layers=0)
    model = init_model(arch, seed=1)
    x = np.random.default_rng(0).normal(size=(11, 4))
    manual = x @ model.weights[0] + model.biases[0]
    assert np.max(np.abs(forward(model, x) - manual)) < 1e-12


def central_difference_grads(model, x, y, eps=1e-6):
    grads_w = [np.zeros_like(w) for w in model.weights]
    grads_b = [np.zeros_like(b) for b in model.biases]
    for params, grads in ((model.weights, grads_w), (model.biases, grads_b)):
        for p, g in zip(params, grads):
            flat_p = p.ravel()
            flat_g = g.ravel()
            for i in range(flat_p.size):
                orig = flat_p[i]
                flat_p[i] = orig + eps
                hi, _, _ = loss_and_grads(model, x, y)
                flat_p[i] = orig - eps
                lo, _, _ = loss_and_grads(model, x, y)
                flat_p[i] = orig
                flat_g[i] = (hi - lo) / (2 * eps)
    return grads_w, grads_b


def test_gradients_match_central_differences():
    rng = np.random.default_rng(42)
    arch = AnnArchitecture(n_in=4, n_out=3, n_hidden_layers=2)
    model = init_model(arch, seed=4)
    x = rng.normal(size=(5, 4))
    y = rng.normal(size=(5, 3))
    _, gw, gb = loss_and_grads(model, x, y)
    num_w, num_b = central_difference_grads(model, x, y)
    for analytic, numeric in list(zip(gw, num_w)) + list(zip(gb, num_b)):
        scale = np.maximum(np.abs(numeric), 1e-8)
        assert np.max(np.abs(analytic - numeric) / scale) < 1e-5


def test_identity_task_converges():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(256, 3))
    arch = AnnArchitecture(n_in=3, n_out=3, n_hidden_layers=0)
    model = init_model(arch, seed=7)
    model, history = train(model, x, x.copy(),
                           TrainConfig(max_epochs=500, patience=500,
                                       batch_size=8, seed=7))
    assert history.train_loss[-1] < 1e-4


def test_early_stopping_patience_zero():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(64, 2))
    y = rng.normal(size=(64, 2))  # pure noise plus a hot learning rate: the
    # validation loss bounces, so patience 0 must stop at the first bounce
    arch = AnnArchitecture(n_in=2, n_out=2, n_hidden_layers=1)
    model = init_model(arch, seed=3)
    _, history = train(model, x, y, TrainConfig(max_epochs=200, patience=0,
                                                learning_rate=0.1, seed=3))
    assert history.stopped_epoch < 199
    assert history.stopped_epoch == history.best_epoch + 1


def test_best_validation_weights_restored():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(128, 3))
    y = rng.normal(size=(128, 2))
    arch = AnnArchitecture(n_in=3, n_out=2, n_hidden_layers=1)
    model = init_model(arch, seed=5)
    model, history = train(model, x, y, TrainConfig(max_epochs=120, patience=30, seed=5))
    assert min(history.val_loss) == history.val_loss[history.best_epoch]
    assert history.val_loss[history.best_epoch] <= history.val_loss[-1] + 1e-15


def test_training_bitwise_deterministic():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(200, 4))
    y = rng.normal(size=(200, 2)) * 0.1 + x[:, :2]
    arch = AnnArchitecture(n_in=4, n_out=2)
    runs = []
    for _ in range(2):
        model = init_model(arch, seed=13)
        model, _ = train(model, x.copy(), y.copy(),
                         TrainConfig(max_epochs=30, seed=13))
        runs.append([w.copy() for w in model.weights])
    for wa, wb in zip(*runs):
        assert np.array_equal(wa, wb)


def test_non_finite_loss_raises():
    x = np.array([[1.0, 1.0], [2.0, 2.0]])
    y = np.array([[np.nan], [np.nan]])
    arch = AnnArchitecture(n_in=2, n_out=1, n_hidden_layers=1)
    model = init_model(arch, seed=0)
    with pytest.raises(AnnError, match="non-finite"):
        train(model, x, y, TrainConfig(max_epochs=3, seed=0))


@pytest.fixture(scope="module")
def m4_training(cigre_module):
    grid = cigre_module
    spec = make_spec(grid, v_buses=[0, 6, 8, 10], s_buses=[4, 7],
                     s_lines=["1-2", "12-13"])
    scenarios = generate_set(DEFAULT_AXES, grid, 1, seed=501)[:300]
    data = build_training_set(grid, scenarios, spec,
                              [CONFIG_0, (True, False, True, False, True, False)],
                              seed=501)
    return grid, spec, data


@pytest.fixture(scope="module")
def cigre_module():
    from gridmon.grid import load_bundled

    return load_bundled("cigre_mv_mod")


def test_build_training_set_shapes(m4_training):
    grid, spec, data = m4_training
    assert data.x.shape == (600, 12 + 6)
    assert data.y_voltage.shape == (600, 15)
    assert data.y_loading.shape == (600, 15)
    assert data.skipped == 0
    assert data.spec_hash == spec.spec_hash
    # loading targets are fractions of rating, not percent
    assert data.y_loading.max() < 3.0


def test_train_monitor_pair_independent_weights(m4_training):
    grid, spec, data = m4_training
    models, histories = train_monitor_pair(
        grid, data, TrainConfig(max_epochs=10, seed=3))
    assert models["voltage"].spec_hash == spec.spec_hash
    assert models["voltage"].target_kind == "voltage"
    assert not np.array_equal(models["voltage"].weights[0],
                              models["loading"].weights[0])
    for kind in ("voltage", "loading"):
        assert len(histories[kind].train_loss) == len(histories[kind].val_loss)


def test_switch_bits_bypass_normalization(m4_training):
    grid, spec, data = m4_training
    models, _ = train_monitor_pair(grid, data, TrainConfig(max_epochs=5, seed=3))
    model = models["voltage"]
    assert not model.norm_mask[-6:].any()
    assert model.norm_mask[:-6].all()
    bits = data.x[0, -6:]
    assert np.array_equal(model.normalize(data.x[0])[None][0, -6:], bits)


def test_predict_checks_spec_hash(m4_training):
    grid, spec, data = m4_training
    models, _ = train_monitor_pair(grid, data, TrainConfig(max_epochs=5, seed=3))
    ms = MeasurementSet(values=data.x[0, :12], switch_states=data.x[0, 12:],
                        spec_hash="0000deadbeef0000")
    with pytest.raises(SpecHashMismatch):
        predict(models["voltage"], ms)
    ok = MeasurementSet(values=data.x[0, :12], switch_states=data.x[0, 12:],
                        spec_hash=spec.spec_hash)
    out = predict(models["voltage"], ok)
    assert out.shape == (15,)
    assert np.isfinite(out).all()


def test_topology_seen_flag(m4_training):
    grid, spec, data = m4_training
    models, _ = train_monitor_pair(grid, data, TrainConfig(max_epochs=5, seed=3))
    assert models["voltage"].topology_seen(CONFIG_0)
    assert not models["voltage"].topology_seen((True,) * 6)


def test_prediction_latency_batch(m4_training):
    grid, spec, data = m4_training
    models, _ = train_monitor_pair(grid, data, TrainConfig(max_epochs=5, seed=3))
    x = np.tile(data.x, (10, 1))[:5500]
    start = time.perf_counter()
    out = predict_batch(models["voltage"], x)
    elapsed = time.perf_counter() - start
    assert out.shape == (5500, 15)
    assert elapsed < 1.0


def test_prediction_is_lipschitz_in_inputs(m4_training):
    grid, spec, data = m4_training
    models, _ = train_monitor_pair(grid, data, TrainConfig(max_epochs=10, seed=3))
    model = models["voltage"]
    x = data.x[:1].copy()
    base = predict_batch(model, x)
    deltas = np.logspace(-4, -1, 8)
    outs = []
    for d in deltas:
        probe = x.copy()
        probe[0, 0] += d
        outs.append(np.abs(predict_batch(model, probe) - base).max())
    ratios = np.array(outs) / deltas
    # sensitivity stays bounded as the perturbation shrinks
    assert ratios.max() < 1e3
    assert np.isfinite(ratios).all()


def test_model_save_load_round_trip(tmp_path, m4_training):
    grid, spec, data = m4_training
    models, _ = train_monitor_pair(grid, data, TrainConfig(max_epochs=5, seed=3))
    path = tmp_path / "voltage.npz"
    save_model(models["voltage"], path)
    loaded = load_model(path, expect_spec_hash=spec.spec_hash)
    assert np.array_equal(loaded.weights[1], models["voltage"].weights[1])
    assert np.array_equal(loaded.out_mean, models["voltage"].out_mean)
    assert loaded.seen_patterns == models["voltage"].seen_patterns
    x = data.x[:5]
    assert np.array_equal(predict_batch(loaded, x),
                          predict_batch(models["voltage"], x))
    with pytest.raises(SpecHashMismatch):
        load_model(path, expect_spec_hash="ffff000011112222")
