import math

import numpy as np
import pytest

import phasezoo as pz


def small_spec(width=8, classes=3):
    spec = pz.ModelSpec()
    spec.input_dim = 2
    spec.hidden_width = width
    spec.num_hidden_layers = 2
    spec.output_dim = classes
    spec.seed = 7
    return spec


def test_parameter_count_and_build_determinism():
    spec = pz.ModelSpec()
    spec.input_dim = 2
    spec.hidden_width = 4
    spec.num_hidden_layers = 2
    spec.output_dim = 2
    assert spec.parameter_count() == 42
    a = pz.build_model(spec)
    b = pz.build_model(spec)
    assert np.array_equal(a.values, b.values)
    assert len(a) == 42


def test_datasets_are_deterministic():
    a = pz.make_spirals(120, 3, 0.05, 9)
    b = pz.make_spirals(120, 3, 0.05, 9)
    assert np.array_equal(a.inputs, b.inputs)
    assert a.labels == b.labels
    assert a.num_classes == 3


def test_forward_and_gradients():
    spec = small_spec()
    params = pz.build_model(spec)
    data = pz.make_spirals(40, 3, 0.05, 3)
    logits = pz.forward(params, spec, data.inputs, data.labels)
    assert logits.shape == (40, 3)

    loss, grad = pz.loss_and_grad(params, spec, data.inputs, data.labels)
    assert math.isfinite(loss)
    assert len(grad) == len(params)

    hv = pz.hvp(params, spec, data.inputs, data.labels, grad)
    assert np.all(np.isfinite(hv.values))


def test_training_reaches_separable_accuracy():
    spec = small_spec(width=32, classes=2)
    full = pz.make_gaussian_mixture(200, 2, 8.0, 1)
    data = pz.train_test_split(full, 0.25, 1)
    cfg = pz.TrainConfig()
    cfg.epochs = 30
    cfg.batch_size = 25
    cfg.peak_lr = 0.1
    run = pz.train(spec, data, cfg)
    assert not run.diverged
    assert run.final.train_acc == pytest.approx(1.0)
    loss, acc = pz.evaluate(run.final_params, spec, data.test)
    assert acc > 0.95


def test_lr_schedule_endpoints():
    cfg = pz.TrainConfig()
    cfg.peak_lr = 0.5
    cfg.warmup_fraction = 0.25
    assert pz.lr_at(cfg, 0, 400) == pytest.approx(0.5 / 25)
    assert pz.lr_at(cfg, 100, 400) == pytest.approx(0.5)
    assert pz.lr_at(cfg, 400, 400) == pytest.approx(0.5 / 1e4)


def test_cka_and_mode_connectivity():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(200, 3))
    assert pz.cka_similarity(x, x) == pytest.approx(1.0, abs=1e-9)
    assert pz.cka_similarity(x, 2.5 * x) == pytest.approx(1.0, abs=1e-6)

    spec = small_spec(width=6, classes=2)
    data = pz.make_gaussian_mixture(60, 2, 3.0, 2)
    a = pz.build_model(spec)
    curve = pz.fit_bezier(a, a, spec, data, steps=0)
    rep = pz.mode_connectivity(curve, spec, data)
    assert rep["mc"] == 0.0


def test_phase_classification_tree():
    t = pz.PhaseThresholds()
    t.tau_loss = 0.5
    t.tau_mc = -0.05
    t.tau_cka = 0.8
    t.tau_trace = 100.0

    rec = pz.MetricRecord()
    rec.train_loss = 2.0
    rec.mc = -0.3
    rec.cka = 0.2
    rec.hessian_trace = 400.0
    assert pz.classify(rec, t) == pz.PhaseLabel.I

    rec.train_loss = 0.05
    rec.mc = 0.0
    rec.cka = 0.9
    rec.hessian_trace = 10.0
    assert pz.classify(rec, t) == pz.PhaseLabel.IVB


def test_prune_and_average():
    spec = small_spec()
    p = pz.build_model(spec)
    pruned = pz.prune_magnitude(p, 1.0)
    weights = np.asarray(pruned.values)
    # biases survive, so not everything is zero, but most entries are
    assert (weights == 0).sum() >= len(p) - (8 + 8 + 3)
    assert np.array_equal(pz.average_naive([p, p]).values, p.values)
    assert np.array_equal(pz.interpolate(p, p, 0.5).values, p.values)


def test_weight_features_and_ridge():
    spec = small_spec()
    p = pz.build_model(spec)
    values, names = pz.weight_features(p)
    assert len(values) == len(names) == 3 * 2 * 8

    x = np.linspace(-1, 1, 50).reshape(-1, 1)
    y = (2.0 * x[:, 0] + 1.0).tolist()
    w, b = pz.fit_ridge(x, y, 0.0)
    assert w[0] == pytest.approx(2.0, abs=1e-6)
    assert b == pytest.approx(1.0, abs=1e-6)
    assert pz.r2_score(y, y) == pytest.approx(1.0)


def test_checkpoint_round_trip(tmp_path):
    spec = small_spec()
    p = pz.build_model(spec)
    pz.save_checkpoint(str(tmp_path / "ckpt"), p)
    q = pz.load_checkpoint(str(tmp_path / "ckpt"))
    assert np.array_equal(q.values, np.asarray(p.values, dtype=np.float32).astype(np.float64))
