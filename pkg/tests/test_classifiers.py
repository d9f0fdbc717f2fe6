import json
import math
import random

import numpy as np
import pytest

from wfbench.classifiers import (
    KnnModel,
    LogRegModel,
    NBModel,
    PredictionDist,
    fll_distance,
    knn_predict,
    knn_predict_matrix,
    load_model,
    logreg_loss_grad,
    model_from_record,
    model_to_record,
    predict,
    predict_matrix,
    predict_nb,
    save_model,
    train_knn,
    train_logreg,
    train_nb,
)
from wfbench.errors import DataError


def make_blobs(seed=0, n_per=20, spread=0.03):
    rng = np.random.default_rng(seed)
    means = {"a": 0.1, "b": 0.5, "c": 0.9}
    X, y = [], []
    for label, mu in means.items():
        pts = rng.normal(mu, spread, size=(n_per, 5))
        X.append(np.clip(pts, 0.0, 1.0))
        y.extend([label] * n_per)
    return np.vstack(X), y


def test_logreg_separable_blobs_train_accuracy():
    X, y = make_blobs()
    model = train_logreg(X, y)
    preds = [predict(model, x).argmax_label() for x in X]
    acc = sum(p == t for p, t in zip(preds, y)) / len(y)
    assert acc >= 0.99
    # held-out points from the same blobs
    Xt, yt = make_blobs(seed=99, n_per=10)
    preds = [predict(model, x).argmax_label() for x in Xt]
    assert sum(p == t for p, t in zip(preds, yt)) / len(yt) >= 0.99


def test_logreg_gradient_matches_central_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10):
        n, d, k = 6, 4, 3
        X = rng.uniform(0, 1, size=(n, d))
        y_idx = rng.integers(0, k, size=n)
        theta = rng.normal(0, 0.5, size=k * d + k)
        _, grad = logreg_loss_grad(theta, X, y_idx, k, 128.0)
        h = 1e-5
        for j in range(len(theta)):
            e = np.zeros_like(theta)
            e[j] = h
            f_plus, _ = logreg_loss_grad(theta + e, X, y_idx, k, 128.0)
            f_minus, _ = logreg_loss_grad(theta - e, X, y_idx, k, 128.0)
            fd = (f_plus - f_minus) / (2 * h)
            rel = abs(grad[j] - fd) / max(abs(grad[j]), abs(fd), 1e-8)
            worst = max(worst, rel)
    assert worst <= 1e-4


def test_logreg_deterministic():
    X, y = make_blobs(seed=3)
    m1 = train_logreg(X, y)
    m2 = train_logreg(X, y)
    assert np.array_equal(m1.weights, m2.weights)
    assert np.array_equal(m1.bias, m2.bias)


def test_duplicate_rows_identical_distributions():
    X, y = make_blobs(seed=5)
    X = np.vstack([X, X[:1]])
    y = list(y) + [y[0]]
    model = train_logreg(X, y)
    d1 = predict(model, X[0])
    d2 = predict(model, X[-1])
    assert np.array_equal(d1.probs, d2.probs)


def test_logreg_single_class_and_nan_errors():
    with pytest.raises(DataError, match="2 classes"):
        train_logreg(np.zeros((3, 2)), ["a", "a", "a"])
    X = np.zeros((4, 2))
    X[0, 0] = np.nan
    with pytest.raises(DataError, match="NaN"):
        train_logreg(X, ["a", "b", "a", "b"])


def test_zero_weights_give_uniform():
    model = LogRegModel(("a", "b", "c"), np.zeros((3, 4)), np.zeros(3), 128.0)
    dist = predict(model, np.ones(4))
    assert np.allclose(dist.probs, 1 / 3)


def test_positive_weight_scaling_keeps_argmax():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(4, 6))
    b = rng.normal(size=4)
    model = LogRegModel(("a", "b", "c", "d"), W, b, 128.0)
    scaled = LogRegModel(("a", "b", "c", "d"), 3.5 * W, 3.5 * b, 128.0)
    for _ in range(20):
        x = rng.uniform(0, 1, size=6)
        assert predict(model, x).argmax_label() == predict(scaled, x).argmax_label()


def test_predict_dimension_mismatch():
    model = LogRegModel(("a", "b"), np.zeros((2, 3)), np.zeros(2), 128.0)
    with pytest.raises(DataError, match="dimension"):
        predict(model, np.ones(4))


def test_predict_matrix_matches_predict():
    X, y = make_blobs(seed=8, n_per=5)
    model = train_logreg(X, y)
    P = predict_matrix(model, X)
    for i in range(len(X)):
        assert np.allclose(P[i], predict(model, X[i]).probs)


def test_constant_column_pruning_preserves_model():
    X, y = make_blobs(seed=4)
    Xc = np.hstack([X, np.full((len(X), 1), 0.7)])
    m = train_logreg(Xc, y)
    assert np.all(m.weights[:, -1] == 0.0)
    base = train_logreg(X, y)
    for i in range(5):
        assert np.allclose(predict(m, Xc[i]).probs, predict(base, X[i]).probs, atol=1e-6)


def test_nb_hand_computed_posterior():
    X = np.array([[2.0, 0.0], [0.0, 2.0]])
    model = train_nb(X, ["a", "b"], alpha=1.0)
    dist = predict_nb(model, np.array([3.0, 1.0]))
    # theta_a=(3/4,1/4), theta_b=(1/4,3/4), equal priors -> P(a|x)=9/10
    assert abs(dist.as_dict()["a"] - 0.9) < 1e-12


def test_nb_single_size_class():
    # class "big" only emits feature 0, class "small" only feature 1
    X = np.array([[5.0, 0.0], [6.0, 0.0], [0.0, 4.0], [0.0, 7.0]])
    model = train_nb(X, ["big", "big", "small", "small"])
    assert predict_nb(model, np.array([3.0, 0.0])).argmax_label() == "big"


def test_nb_uniform_counts_follow_priors():
    X = np.ones((4, 3))
    model = train_nb(X, ["a", "a", "a", "b"])
    dist = predict_nb(model, np.array([2.0, 2.0, 2.0]))
    assert abs(dist.as_dict()["a"] - 0.75) < 1e-12


def test_fll_examples():
    assert fll_distance([100, -200, 300], [100, -200, 300]) == 0
    assert fll_distance([100, -200], [100, -300]) == 2
    s = [1, 2, 3, -4]
    assert fll_distance(s, []) == len(s)


def test_fll_is_metric_on_random_sequences():
    rng = random.Random(13)
    seqs = [
        [rng.choice([1, -1]) * rng.randrange(1, 50) for _ in range(rng.randrange(0, 20))]
        for _ in range(30)
    ]
    for a in seqs[:10]:
        for b in seqs[:10]:
            dab = fll_distance(a, b)
            assert dab == fll_distance(b, a)
            assert (dab == 0) == (sorted(a) == sorted(b))
            for c in seqs[:10]:
                assert dab <= fll_distance(a, c) + fll_distance(c, b)


def test_knn_exact_match_probability_one():
    train = [([100, -200], "a"), ([300, -400], "b")]
    dist = knn_predict(train, [100, -200], k=1)
    assert dist.as_dict()["a"] == 1.0


def test_knn_equidistant_pair_splits():
    train = [([100], "a"), ([300], "b")]
    dist = knn_predict(train, [200], k=2)
    d = dist.as_dict()
    assert abs(d["a"] - 0.5) < 1e-12 and abs(d["b"] - 0.5) < 1e-12


def test_knn_three_clusters_accuracy():
    rng = random.Random(21)

    def seq_for(label):
        base = {"a": [100] * 8 + [-1000] * 4, "b": [300] * 6 + [-500] * 8, "c": [700] * 12 + [-200] * 2}[label]
        noisy = list(base)
        for _ in range(rng.randrange(0, 3)):
            noisy.append(rng.choice([1, -1]) * rng.randrange(1, 2000))
        return noisy

    train = [(seq_for(l), l) for l in "abc" for _ in range(10)]
    model = train_knn([s for s, _ in train], [l for _, l in train], k=1)
    tests = [(seq_for(l), l) for l in "abc" for _ in range(20)]
    preds = knn_predict_matrix(model, [s for s, _ in tests])
    acc = sum(p.argmax_label() == t for p, (_, t) in zip(preds, tests)) / len(tests)
    assert acc >= 0.9


def test_knn_matrix_matches_scalar_path():
    rng = random.Random(3)
    train_seqs = [[rng.choice([1, -1]) * rng.randrange(1, 30) for _ in range(10)] for _ in range(12)]
    labels = [rng.choice("ab") for _ in range(12)]
    model = train_knn(train_seqs, labels, k=3)
    queries = [[rng.choice([1, -1]) * rng.randrange(1, 40) for _ in range(8)] for _ in range(6)]
    fast = knn_predict_matrix(model, queries)
    for q, dist in zip(queries, fast):
        brute = [fll_distance(q, t) for t in train_seqs]
        order = np.argsort(np.array(brute), kind="stable")[:3]
        weights = 1.0 / (1.0 + np.array(brute)[order])
        scores = {}
        for row, w in zip(order, weights):
            scores[labels[row]] = scores.get(labels[row], 0.0) + w
        total = sum(scores.values())
        for label, score in scores.items():
            assert abs(dist.as_dict()[label] - score / total) < 1e-12


def test_knn_empty_training_set_error():
    with pytest.raises(DataError, match="empty"):
        train_knn([], [])


def test_prediction_dist_invariants():
    with pytest.raises(DataError):
        PredictionDist(("a", "b"), np.array([0.7, 0.7]))
    with pytest.raises(DataError):
        PredictionDist(("a",), np.array([0.5, 0.5]))


def test_model_round_trips(tmp_path):
    X, y = make_blobs(seed=6, n_per=5)
    logreg = train_logreg(X, y)
    nb = train_nb(np.abs(X * 10), y)
    knn = train_knn([[1, -2], [3, -4]], ["a", "b"])
    for model in (logreg, nb, knn):
        path = str(tmp_path / "m.json")
        save_model(model, path)
        restored = load_model(path)
        assert type(restored) is type(model)
        assert restored.classes == model.classes
    rec = model_to_record(logreg)
    rec["version"] = 9
    with pytest.raises(DataError, match="version"):
        model_from_record(rec)


def test_model_file_deterministic(tmp_path):
    X, y = make_blobs(seed=6, n_per=5)
    p1, p2 = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    save_model(train_logreg(X, y), p1)
    save_model(train_logreg(X, y), p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_prediction_invariant_under_consistent_permutation():
    X, y = make_blobs(seed=12, n_per=8)
    model = train_logreg(X, y)
    rng = np.random.default_rng(0)
    perm = rng.permutation(X.shape[1])
    permuted = LogRegModel(model.classes, model.weights[:, perm], model.bias, model.C)
    for i in range(5):
        assert np.allclose(predict(model, X[i]).probs, predict(permuted, X[i][perm]).probs)
