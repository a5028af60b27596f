import numpy as np
import pytest

from emopair.classifiers import (
    LinearModel,
    NnModel,
    TrainConfig,
    TrainingError,
    fit_linear_batch,
    hidden_transform,
    init_nn_params,
    linear_loss_grad,
    linear_targets,
    load_model,
    nn_loss_grad,
    nn_targets,
    predict,
    predict_batch,
    save_model,
    train_logistic,
    train_nn,
    train_svm,
)
from emopair.dataset import DataError, Dataset, LabelUniverse, fit_scaler


def labelled(X, y, labels=("a", "b")):
    X = np.asarray(X, dtype=float)
    return Dataset(
        [f"r{i}" for i in range(len(X))],
        X,
        labels=[labels[k] for k in y],
        universe=LabelUniverse(labels),
    )


def clusters(seed=0, n=40, gap=4.0, d=2):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = rng.normal(scale=0.5, size=(n, d))
    X[:, 0] += np.where(y == 1, gap, -gap) / 2
    return labelled(X, y)


# --- finite-difference oracles ---------------------------------------------


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    # Floor keeps exact-zero gradient entries from amplifying 1e-11 FD noise.
    return np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b)))


@pytest.mark.parametrize("objective,K", [("logistic", 2), ("softmax", 4), ("hinge", 2), ("hinge", 3)])
@pytest.mark.parametrize("seed", range(3))
def test_linear_gradient_matches_finite_differences(objective, K, seed):
    rng = np.random.default_rng(seed)
    n, d = 12, 5
    X = rng.normal(size=(1, n, d))
    y = rng.integers(0, K, size=n)
    y[:K] = np.arange(K)
    T = linear_targets(objective, y, K)
    k = T.shape[1]
    W = rng.normal(size=(1, d, k))
    c = rng.normal(size=(1, k))
    if objective == "hinge":
        # Stay off the kink: no margin within 1e-3 of 1.
        Z = X @ W + c[:, None, :]
        assert np.min(np.abs(T * Z - 1.0)) > 1e-3
    _, gW, gc = linear_loss_grad(objective, W, c, X, T, 0.01)
    f = lambda: linear_loss_grad(objective, W, c, X, T, 0.01)[0][0]
    assert rel_err(gW, central_diff(f, W)) <= 1e-4
    assert rel_err(gc, central_diff(f, c)) <= 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_nn_backprop_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(8, 6))
    T = nn_targets(rng.integers(0, 2, size=8), 2)
    params = [p.copy() for p in init_nn_params((6, 3, 2), rng)]
    params[1] += rng.normal(scale=0.1, size=3)
    _, grads = nn_loss_grad(params, X, T, 0.01)
    for p, g in zip(params, grads):
        num = central_diff(lambda: nn_loss_grad(params, X, T, 0.01)[0], p)
        assert rel_err(g, num) <= 1e-4


# --- logistic regression -----------------------------------------------------


def test_logistic_separable():
    ds = clusters()
    model = train_logistic(ds)
    labels, _ = predict_batch(model, ds.features)
    assert list(labels) == list(ds.labels)


def test_logistic_duplicate_point_is_half():
    ds = labelled([[1.0, 2.0], [1.0, 2.0]], [0, 1])
    model = train_logistic(ds, TrainConfig(l2=0.0))
    _, s = predict(model, [1.0, 2.0])
    assert s[1] == pytest.approx(0.5, abs=1e-9)


def test_logistic_single_class_rejected():
    ds = Dataset(["a", "b"], [[0.0], [1.0]], labels=["x", "x"], universe=LabelUniverse(("x", "y")))
    with pytest.raises(TrainingError):
        train_logistic(ds)


def test_logistic_loss_monotone():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(1, 50, 4))
    y = (X[0, :, 0] + rng.normal(size=50) > 0).astype(int)
    T = linear_targets("logistic", y, 2)
    cfg = TrainConfig(learning_rate=5.0, max_epochs=1)
    losses = []
    W, c = np.zeros((1, 4, 1)), np.zeros((1, 1))
    for epochs in range(1, 60, 5):
        W, c = fit_linear_batch("logistic", X, y, 2, TrainConfig(learning_rate=5.0, max_epochs=epochs, tolerance=0))
        losses.append(linear_loss_grad("logistic", W, c, X, T, cfg.l2)[0][0])
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_logistic_multiclass_softmax():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1, 2], 20)
    centers = np.array([[4, 0], [-4, 0], [0, 4]])
    X = centers[y] + rng.normal(scale=0.5, size=(60, 2))
    ds = labelled(X, y, ("a", "b", "c"))
    model = train_logistic(ds)
    assert model.mode == "softmax"
    labels, S = predict_batch(model, ds.features)
    assert list(labels) == list(ds.labels)
    np.testing.assert_allclose(S.sum(axis=1), 1.0)


def test_logistic_row_permutation_invariant():
    ds = clusters(seed=5, gap=1.0)
    perm = np.random.default_rng(1).permutation(len(ds))
    a = train_logistic(ds)
    b = train_logistic(ds.subset(perm))
    probe = np.random.default_rng(2).normal(size=(50, 2))
    assert predict_batch(a, probe)[0] == predict_batch(b, probe)[0]


def test_training_is_deterministic(tmp_path):
    ds = clusters(seed=7, gap=1.0)
    for trainer in (train_logistic, train_svm):
        save_model(tmp_path / "a.json", trainer(ds))
        save_model(tmp_path / "b.json", trainer(ds))
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


# --- SVM --------------------------------------------------------------------


def test_svm_separable_no_margin_violations():
    ds = clusters(gap=8.0)
    model = train_svm(ds)
    labels, _ = predict_batch(model, ds.features)
    assert list(labels) == list(ds.labels)
    t = np.where(ds.label_indices == 1, 1.0, -1.0)
    margins = t * model.decision(ds.features)[:, 0]
    assert np.all(margins >= 1.0)


def test_svm_feature_scaling_regression():
    # Scaling inputs by c with l2 scaled by c**2 keeps the training labels.
    ds = clusters(seed=11, gap=2.0)
    c = 3.0
    base = train_svm(ds, TrainConfig(l2=1e-2))
    scaled = labelled(ds.features * c, ds.label_indices)
    other = train_svm(scaled, TrainConfig(l2=1e-2 * c**2))
    assert predict_batch(base, ds.features)[0] == predict_batch(other, scaled.features)[0]


def test_svm_one_vs_rest():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1, 2], 20)
    centers = np.array([[5, 0], [-5, 0], [0, 5]])
    ds = labelled(centers[y] + rng.normal(scale=0.5, size=(60, 2)), y, ("a", "b", "c"))
    model = train_svm(ds)
    assert model.mode == "ovr" and model.weights.shape == (2, 3)
    assert list(predict_batch(model, ds.features)[0]) == list(ds.labels)


# --- neural network ---------------------------------------------------------


def test_nn_shapes_emodb_size():
    rng = np.random.default_rng(0)
    y = np.arange(14) % 7
    ds = labelled(rng.normal(size=(14, 988)), y, tuple("NABHSDF"))
    model = train_nn(ds, TrainConfig(max_epochs=2), (988, 50, 7))
    assert model.W1.shape == (988, 50) and model.W2.shape == (50, 7)


def test_nn_xor():
    ds = labelled([[0, 0], [0, 1], [1, 0], [1, 1]], [0, 1, 1, 0])
    solved = 0
    for seed in range(5):
        cfg = TrainConfig(learning_rate=2.0, max_epochs=5000, tolerance=0.0, l2=0.0, seed=seed)
        model = train_nn(ds, cfg, (2, 4, 1))
        solved += predict_batch(model, ds.features)[0] == list(ds.labels)
    assert solved >= 4


def test_nn_scores_in_unit_interval():
    ds = clusters()
    model = train_nn(ds, TrainConfig(max_epochs=20), (2, 5, 2))
    _, S = predict_batch(model, np.random.default_rng(0).normal(size=(30, 2)) * 10)
    assert np.all((S > 0) & (S < 1))


def test_hidden_transform():
    model = NnModel(("a", "b"), np.zeros((3, 50)), np.zeros(50), np.ones((50, 2)), np.zeros(2))
    h = hidden_transform(model, [1.0, -2.0, 3.0])
    assert h.shape == (50,)
    assert np.all(h == 0.5)
    trained = train_nn(clusters(d=3), TrainConfig(max_epochs=10), (3, 7, 2))
    x = np.array([0.3, 0.1, -0.2])
    np.testing.assert_array_equal(hidden_transform(trained, x), hidden_transform(trained, x.copy()))
    with pytest.raises(DataError):
        hidden_transform(trained, [1.0, 2.0])


# --- prediction rules -------------------------------------------------------


def test_zero_weight_tie_goes_to_first_class():
    model = LinearModel("lr", "binary", ("x", "y"), np.zeros((3, 1)), np.zeros(1))
    label, s = predict(model, [1.0, 2.0, 3.0])
    assert label == "x" and s[0] == s[1]
    soft = LinearModel("lr", "softmax", ("p", "q", "r"), np.zeros((3, 3)), np.zeros(3))
    assert predict(soft, [1.0, 2.0, 3.0])[0] == "p"


def test_binary_scores_sum_to_one():
    model = train_logistic(clusters(gap=1.0))
    _, S = predict_batch(model, np.random.default_rng(0).normal(size=(100, 2)) * 3)
    assert np.max(np.abs(S[:, 1] - (1.0 - S[:, 0]))) <= 1e-12


def test_predict_dimension_mismatch():
    model = train_logistic(clusters())
    with pytest.raises(DataError):
        predict(model, [1.0, 2.0, 3.0])


def test_model_json_roundtrip(tmp_path):
    ds = clusters(d=3)
    scaler = fit_scaler(ds.features)
    for model in (train_logistic(ds), train_nn(ds, TrainConfig(max_epochs=5), (3, 4, 2))):
        save_model(tmp_path / "m.json", model, scaler, [0, 2, 5])
        back, sc, sub = load_model(tmp_path / "m.json")
        X = ds.features
        np.testing.assert_array_equal(back.scores(X), model.scores(X))
        np.testing.assert_array_equal(sc.mean, scaler.mean)
        assert sub == [0, 2, 5]


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=0)
