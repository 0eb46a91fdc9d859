import numpy as np
import pytest

import oracles
from aal.datasets import AffinityDataset, generate_blobs
from aal.errors import ConfigError, InsufficientData, TrainingDiverged, UnsupportedOperation
from aal.learners import (BilinearRegressor, SoftmaxClassifier, TrainConfig, copy_params, fit,
                          params_from_json, params_to_json, train_committee)
from aal.metrics import accuracy, rmse
from aal.policies import jsd_uncertainty


def grad_errors(family, params, x, y, n_coords, rng):
    _, grads = family.loss_and_grad(params, x, y)
    errs = []
    for _ in range(n_coords):
        key = family.trainable[rng.integers(len(family.trainable))]
        idx = tuple(int(rng.integers(s)) for s in params[key].shape)
        num = oracles.finite_difference(lambda p: family.loss(p, x, y), params, key, idx)
        ana = grads[key][idx]
        errs.append(abs(ana - num) / max(abs(ana), abs(num), 1e-6))
    return errs


def test_bilinear_gradient():
    rng = np.random.default_rng(0)
    fam = BilinearRegressor(5, 4, embed_dim=3)
    params = fam.init_params(rng, rng.normal(size=10))
    for k in fam.trainable:
        params[k] = params[k] + rng.normal(0, 0.3, params[k].shape)
    x = np.stack([rng.integers(0, 5, 12), rng.integers(0, 4, 12)], axis=1)
    y = rng.normal(size=12)
    assert max(grad_errors(fam, params, x, y, 40, rng)) < 1e-4


def test_classifier_gradient():
    rng = np.random.default_rng(1)
    fam = SoftmaxClassifier(3, 4)
    params = {"w": rng.normal(size=(4, 3)), "b": rng.normal(size=4)}
    x = rng.normal(size=(9, 3))
    y = rng.integers(0, 4, 9)
    assert max(grad_errors(fam, params, x, y, 15, rng)) < 1e-4


def test_bilinear_features_and_zero_params():
    fam = BilinearRegressor(3, 2, embed_dim=128)
    params = fam.init_params(np.random.default_rng(0))
    x = np.array([[0, 0], [2, 1], [0, 0]])
    feats = fam.features(params, x)
    assert feats.shape == (3, 256)
    assert np.array_equal(feats[0], feats[2])
    zero = {k: np.zeros_like(v) for k, v in params.items()}
    assert np.all(fam.predict(zero, x) == 0)
    with pytest.raises(IndexError):
        fam.predict(params, [[3, 0]])
    with pytest.raises(UnsupportedOperation):
        fam.predict_proba(params, x)


def test_classifier_proba_and_features():
    fam = SoftmaxClassifier(2, 4)
    zero = {"w": np.zeros((4, 2)), "b": np.zeros(4)}
    assert np.allclose(fam.predict_proba(zero, [[1.0, -3.0]]), 0.25)
    params = {"w": np.random.default_rng(2).normal(size=(4, 2)) * 30, "b": np.zeros(4)}
    x = np.random.default_rng(3).normal(size=(20, 2))
    assert np.allclose(fam.predict_proba(params, x).sum(axis=1), 1.0, atol=1e-9)
    assert np.array_equal(fam.features(params, x), x)


def test_bilinear_fits_rank_one_2x2():
    # the SVD rank-1 reconstruction is exact, so a perfect fit exists
    scores = np.outer([1.0, 2.0], [0.5, -1.5])
    u, s, vt = np.linalg.svd(scores)
    assert np.allclose(s[0] * np.outer(u[:, 0], vt[0]), scores)
    ds = AffinityDataset.from_dense(scores)
    fam = BilinearRegressor(2, 2, embed_dim=2)
    x, y = ds.inputs(range(4)), ds.all_labels()
    cfg = TrainConfig(learning_rate=0.05, batch_size=4, max_epochs=3000, patience=3000,
                      validation_fraction=0.0, momentum=0.9)
    best = min(rmse(fam.predict(fit(fam, x, y, cfg, rng_seed=s), x), y) for s in range(3))
    assert best < 0.05


def test_classifier_separable_blobs_reach_full_accuracy():
    ds = generate_blobs(2, 5, 2, 100.0, 0.01, 0)
    fam = SoftmaxClassifier(2, 2)
    cfg = TrainConfig(learning_rate=0.1, batch_size=4, max_epochs=200, patience=200, validation_fraction=0.0)
    params = fit(fam, ds.features, ds.targets, cfg)
    assert accuracy(fam.predict(params, ds.features), ds.targets) == 1.0


def test_warm_start_zero_epochs_is_identity():
    fam = SoftmaxClassifier(2, 3)
    init = fam.init_params(np.random.default_rng(0))
    cfg = TrainConfig(max_epochs=0, patience=0, retrain_mode="warm_start")
    out = fit(fam, np.zeros((5, 2)), np.array([0, 1, 2, 0, 1]), cfg, init=init)
    for k in init:
        assert np.array_equal(out[k], init[k])
    assert out["w"] is not init["w"]


def test_warm_start_without_init_errors():
    with pytest.raises(ConfigError):
        fit(SoftmaxClassifier(2, 2), np.zeros((4, 2)), np.array([0, 1, 0, 1]),
            TrainConfig(retrain_mode="warm_start"))


def test_early_stopping_respects_patience():
    ds = generate_blobs(3, 30, 4, 1.0, 2.0, 0)
    fam = SoftmaxClassifier(4, 3)
    cfg = TrainConfig(learning_rate=2.0, batch_size=8, max_epochs=200, patience=3)
    history: list[float] = []
    fit(fam, ds.features, ds.targets, cfg, rng_seed=0, history=history)
    epochs = len(history) - 1
    assert epochs < 200
    best_at = int(np.argmin(history))
    assert epochs - best_at == 3


def test_returns_best_params_not_last():
    ds = generate_blobs(3, 30, 4, 1.0, 2.0, 0)
    fam = SoftmaxClassifier(4, 3)
    cfg = TrainConfig(learning_rate=2.0, batch_size=8, max_epochs=200, patience=3)
    history: list[float] = []
    params = fit(fam, ds.features, ds.targets, cfg, rng_seed=0, history=history)
    perm = np.random.default_rng(0).permutation(ds.size)
    val = perm[: round(0.2 * ds.size)]
    assert fam.loss(params, ds.features[val], ds.targets[val]) == pytest.approx(min(history))


def test_insufficient_data():
    with pytest.raises(InsufficientData):
        fit(SoftmaxClassifier(2, 2), np.zeros((2, 2)), np.array([0, 1]), TrainConfig())


def test_divergence_raises():
    fam = BilinearRegressor(4, 4, embed_dim=4)
    rng = np.random.default_rng(0)
    x = np.stack([rng.integers(0, 4, 16), rng.integers(0, 4, 16)], axis=1)
    cfg = TrainConfig(learning_rate=1e6, batch_size=4, max_epochs=20, patience=20)
    with pytest.raises(TrainingDiverged):
        fit(fam, x, rng.normal(size=16), cfg)


@pytest.mark.parametrize("kwargs", [
    {"batch_size": 0}, {"max_epochs": -1}, {"patience": 5, "max_epochs": 2},
    {"retrain_mode": "resume"}, {"validation_fraction": 1.0}, {"learning_rate": 0},
    {"momentum": 1.0}, {"grad_clip": 0.0},
])
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_committee_size_and_seeds():
    ds = generate_blobs(3, 20, 2, 3.0, 0.5, 1)
    fam = SoftmaxClassifier(2, 3)
    cfg = TrainConfig(learning_rate=0.5, batch_size=8, max_epochs=5, patience=5)
    members = train_committee(fam, ds.features, ds.targets, cfg, 5, base_seed=10)
    assert len(members) == 5
    solo = fit(fam, ds.features, ds.targets, cfg, rng_seed=12)
    assert np.array_equal(members[2]["w"], solo["w"])


def test_committee_identical_seeds_gives_zero_jsd():
    ds = generate_blobs(3, 20, 2, 3.0, 0.5, 1)
    fam = SoftmaxClassifier(2, 3)
    cfg = TrainConfig(learning_rate=0.5, batch_size=8, max_epochs=5, patience=5)
    a = train_committee(fam, ds.features, ds.targets, cfg, 1, base_seed=4)[0]
    b = train_committee(fam, ds.features, ds.targets, cfg, 1, base_seed=4)[0]
    assert params_to_json(a) == params_to_json(b)
    probs = [fam.predict_proba(m, ds.features[:1])[0] for m in (a, b)]
    assert jsd_uncertainty(probs) == 0.0


def test_committee_agrees_on_separable_training_labels():
    ds = generate_blobs(2, 5, 2, 100.0, 0.01, 0)
    fam = SoftmaxClassifier(2, 2)
    cfg = TrainConfig(learning_rate=0.1, batch_size=4, max_epochs=100, patience=100, validation_fraction=0.0)
    for m in train_committee(fam, ds.features, ds.targets, cfg, 3, base_seed=0):
        assert accuracy(fam.predict(m, ds.features), ds.targets) == 1.0


def test_committee_error_names_member():
    fam = BilinearRegressor(4, 4, embed_dim=4)
    rng = np.random.default_rng(0)
    x = np.stack([rng.integers(0, 4, 16), rng.integers(0, 4, 16)], axis=1)
    cfg = TrainConfig(learning_rate=1e6, batch_size=4, max_epochs=20, patience=20)
    with pytest.raises(TrainingDiverged, match="committee member 0"):
        train_committee(fam, x, rng.normal(size=16), cfg, 2, 0)


def test_warm_start_committee_first_round_from_scratch():
    ds = generate_blobs(3, 20, 2, 3.0, 0.5, 1)
    fam = SoftmaxClassifier(2, 3)
    cfg = TrainConfig(learning_rate=0.5, batch_size=8, max_epochs=3, patience=3, retrain_mode="warm_start")
    first = train_committee(fam, ds.features, ds.targets, cfg, 2, 0)
    second = train_committee(fam, ds.features, ds.targets, cfg, 2, 0, init=first)
    assert len(second) == 2
    with pytest.raises(ConfigError):
        train_committee(fam, ds.features, ds.targets, cfg, 3, 0, init=first)


def test_params_json_round_trip():
    fam = BilinearRegressor(3, 2, embed_dim=4)
    params = fam.init_params(np.random.default_rng(5), np.array([1.0, 2.0, 4.0]))
    again = params_from_json(params_to_json(params))
    assert again.keys() == params.keys()
    for k in params:
        assert np.array_equal(again[k], params[k])
        assert again[k].shape == params[k].shape
    assert copy_params(params)["d_w1"] is not params["d_w1"]
