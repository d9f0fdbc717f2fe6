"""Per-sample classifiers: multinomial logistic regression, multinomial naive
Bayes over size counts, and nearest-neighbor on a linear-time multiset
distance between signed packet-size sequences.

The logistic trainer minimizes sum negative log-likelihood plus
||W||^2 / (2C) (true multinomial, not one-vs-rest) with a quasi-Newton
optimizer to gradient max-norm <= 1e-5 or the epoch cap, from a zero start,
so training is fully deterministic. Constant feature columns are optimized
out and restored with zero weight, which leaves the optimum unchanged
because any constant column's contribution is absorbed by the unregularized
bias.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import DataError

MODEL_FORMAT_VERSION = 1
DEFAULT_C = 128.0
GRAD_TOL = 1e-5
MAX_EPOCHS = 1000


@dataclass(frozen=True)
class PredictionDist:
    """Probability distribution over the model's label registry."""

    labels: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.probs):
            raise DataError("labels/probs length mismatch")
        if abs(float(self.probs.sum()) - 1.0) > 1e-9 or (self.probs < 0).any():
            raise DataError("probabilities must be nonnegative and sum to 1")

    def argmax_label(self) -> str:
        return self.labels[int(np.argmax(self.probs))]

    def as_dict(self) -> dict[str, float]:
        return {l: float(p) for l, p in zip(self.labels, self.probs)}


def _registry(y: Sequence[str]) -> tuple[str, ...]:
    return tuple(sorted(set(y)))


def logreg_loss_grad(theta: np.ndarray, X: np.ndarray, y_idx: np.ndarray, n_classes: int, C: float):
    """Objective and gradient of the regularized multinomial log-loss.

    theta packs the (classes x features) weight matrix followed by the
    per-class biases; the bias is not regularized.
    """
    n, d = X.shape
    W = theta[: n_classes * d].reshape(n_classes, d)
    b = theta[n_classes * d :]
    logits = X @ W.T + b
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    denom = exp.sum(axis=1)
    logp = logits - np.log(denom)[:, None]
    loss = -logp[np.arange(n), y_idx].sum() + (W**2).sum() / (2.0 * C)
    P = exp / denom[:, None]
    P[np.arange(n), y_idx] -= 1.0
    grad_W = P.T @ X + W / C
    grad_b = P.sum(axis=0)
    return loss, np.concatenate([grad_W.ravel(), grad_b])


@dataclass(frozen=True, eq=False)
class LogRegModel:
    classes: tuple[str, ...]
    weights: np.ndarray  # (classes, features)
    bias: np.ndarray  # (classes,)
    C: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not np.isfinite(self.weights).all() or not np.isfinite(self.bias).all():
            raise DataError("non-finite model parameters")


def train_logreg(
    X: np.ndarray,
    y: Sequence[str],
    C: float = DEFAULT_C,
    grad_tol: float = GRAD_TOL,
    max_epochs: int = MAX_EPOCHS,
    seed: int = 0,
) -> LogRegModel:
    X = np.asarray(X, dtype=np.float64)
    if np.isnan(X).any():
        raise DataError("NaN in feature matrix")
    classes = _registry(y)
    if len(classes) < 2:
        raise DataError(f"need at least 2 classes, got {len(classes)}")
    index = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([index[l] for l in y])
    k = len(classes)

    lo, hi = X.min(axis=0), X.max(axis=0)
    keep = np.flatnonzero(hi > lo)
    Xk = np.ascontiguousarray(X[:, keep])
    d = len(keep)

    theta0 = np.zeros(k * d + k)
    result = minimize(
        logreg_loss_grad,
        theta0,
        args=(Xk, y_idx, k, C),
        method="L-BFGS-B",
        jac=True,
        options={"maxiter": max_epochs, "gtol": grad_tol, "ftol": 1e-14, "maxfun": 10 * max_epochs},
    )
    Wk = result.x[: k * d].reshape(k, d)
    b = result.x[k * d :]
    W = np.zeros((k, X.shape[1]))
    W[:, keep] = Wk
    _, grad = logreg_loss_grad(result.x, Xk, y_idx, k, C)
    meta = {
        "trainer": "multinomial-lbfgs",
        "seed": seed,
        "epochs": int(result.nit),
        "grad_inf_norm": float(np.abs(grad).max()),
        "n_features": int(X.shape[1]),
        "n_active_features": int(d),
    }
    return LogRegModel(classes, W, b, C, meta)


def predict(model: LogRegModel, x: np.ndarray) -> PredictionDist:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.weights.shape[1]:
        raise DataError(
            f"feature dimension mismatch: model has {model.weights.shape[1]}, input has {x.shape[-1]}"
        )
    logits = model.weights @ x + model.bias
    logits -= logits.max()
    exp = np.exp(logits)
    return PredictionDist(model.classes, exp / exp.sum())


def predict_matrix(model: LogRegModel, X: np.ndarray) -> np.ndarray:
    """Softmax probabilities for many samples at once, rows aligned to classes."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.weights.shape[1]:
        raise DataError("feature dimension mismatch")
    logits = X @ model.weights.T + model.bias
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    return exp / exp.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class NBModel:
    """Multinomial naive Bayes with add-one smoothing over count features."""

    classes: tuple[str, ...]
    log_priors: np.ndarray
    log_theta: np.ndarray  # (classes, features)
    alpha: float
    meta: dict = field(default_factory=dict)


def train_nb(X: np.ndarray, y: Sequence[str], alpha: float = 1.0) -> NBModel:
    X = np.asarray(X, dtype=np.float64)
    if np.isnan(X).any():
        raise DataError("NaN in feature matrix")
    if (X < 0).any():
        raise DataError("naive Bayes requires nonnegative count features")
    classes = _registry(y)
    if len(classes) < 2:
        raise DataError(f"need at least 2 classes, got {len(classes)}")
    index = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([index[l] for l in y])
    k, d = len(classes), X.shape[1]
    counts = np.zeros((k, d))
    class_sizes = np.zeros(k)
    for i in range(k):
        mask = y_idx == i
        counts[i] = X[mask].sum(axis=0)
        class_sizes[i] = mask.sum()
    log_theta = np.log(counts + alpha) - np.log(counts.sum(axis=1) + alpha * d)[:, None]
    log_priors = np.log(class_sizes / class_sizes.sum())
    return NBModel(classes, log_priors, log_theta, alpha, {"trainer": "multinomial-nb"})


def predict_nb(model: NBModel, x: np.ndarray) -> PredictionDist:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.log_theta.shape[1]:
        raise DataError("feature dimension mismatch")
    scores = model.log_priors + model.log_theta @ x
    scores -= scores.max()
    exp = np.exp(scores)
    return PredictionDist(model.classes, exp / exp.sum())


def signed_sizes(sample) -> list[int]:
    """Directed packet sizes of a sample (positive out, negative in)."""
    return [int(p.direction) * p.payload_size for p in sample.iter_packets()]


def fll_distance(s: Sequence[int], t: Sequence[int]) -> int:
    """Order-insensitive edit lower bound on signed-size sequences.

    Equals |s| + |t| - 2 * sum_k min(count_s(k), count_t(k)), i.e. the L1
    distance between the two multisets' count vectors; a metric.
    """
    cs, ct = Counter(s), Counter(t)
    common = sum(min(cs[k], ct[k]) for k in cs.keys() & ct.keys())
    return len(s) + len(t) - 2 * common


@dataclass(frozen=True, eq=False)
class KnnModel:
    """Nearest neighbors over signed-size count vectors (vectorized FLL)."""

    classes: tuple[str, ...]
    vocab: tuple[int, ...]
    matrix: np.ndarray  # (n_train, vocab)
    train_labels: tuple[str, ...]
    k: int
    meta: dict = field(default_factory=dict)


def train_knn(sequences: Sequence[Sequence[int]], y: Sequence[str], k: int = 1) -> KnnModel:
    if not sequences:
        raise DataError("empty training set")
    vocab = tuple(sorted({v for seq in sequences for v in seq}))
    index = {v: i for i, v in enumerate(vocab)}
    matrix = np.zeros((len(sequences), len(vocab)))
    for row, seq in enumerate(sequences):
        for v in seq:
            matrix[row, index[v]] += 1
    return KnnModel(_registry(y), vocab, matrix, tuple(y), k, {"trainer": "fll-knn"})


def _knn_vote(model: KnnModel, distances: np.ndarray) -> PredictionDist:
    order = np.argsort(distances, kind="stable")[: model.k]
    weights = 1.0 / (1.0 + distances[order])
    scores = np.zeros(len(model.classes))
    index = {c: i for i, c in enumerate(model.classes)}
    for row, w in zip(order, weights):
        scores[index[model.train_labels[row]]] += w
    return PredictionDist(model.classes, scores / scores.sum())


def knn_predict_model(model: KnnModel, seq: Sequence[int]) -> PredictionDist:
    index = {v: i for i, v in enumerate(model.vocab)}
    q = np.zeros(len(model.vocab))
    residual = 0
    for v in seq:
        if v in index:
            q[index[v]] += 1
        else:
            residual += 1
    distances = np.abs(model.matrix - q).sum(axis=1) + residual
    return _knn_vote(model, distances)


def knn_predict_matrix(model: KnnModel, sequences: Sequence[Sequence[int]]) -> list[PredictionDist]:
    index = {v: i for i, v in enumerate(model.vocab)}
    Q = np.zeros((len(sequences), len(model.vocab)))
    residual = np.zeros(len(sequences))
    for row, seq in enumerate(sequences):
        for v in seq:
            if v in index:
                Q[row, index[v]] += 1
            else:
                residual[row] += 1
    D = cdist(Q, model.matrix, metric="cityblock") + residual[:, None]
    return [_knn_vote(model, D[i]) for i in range(len(sequences))]


def knn_predict(
    train: Sequence[tuple[Sequence[int], str]], seq: Sequence[int], k: int = 1
) -> PredictionDist:
    """Distance-weighted k-nearest-neighbor vote over FLL distance."""
    model = train_knn([s for s, _ in train], [l for _, l in train], k)
    return knn_predict_model(model, seq)


def model_to_record(model) -> dict:
    if isinstance(model, LogRegModel):
        body = {
            "kind": "logreg",
            "classes": list(model.classes),
            "weights": model.weights.tolist(),
            "bias": model.bias.tolist(),
            "C": model.C,
            "meta": model.meta,
        }
    elif isinstance(model, NBModel):
        body = {
            "kind": "nb",
            "classes": list(model.classes),
            "log_priors": model.log_priors.tolist(),
            "log_theta": model.log_theta.tolist(),
            "alpha": model.alpha,
            "meta": model.meta,
        }
    elif isinstance(model, KnnModel):
        body = {
            "kind": "knn",
            "classes": list(model.classes),
            "vocab": list(model.vocab),
            "matrix": model.matrix.tolist(),
            "train_labels": list(model.train_labels),
            "k": model.k,
            "meta": model.meta,
        }
    else:
        raise DataError(f"unknown model type {type(model).__name__}")
    body["version"] = MODEL_FORMAT_VERSION
    return body


def model_from_record(rec: Mapping):
    if rec.get("version") != MODEL_FORMAT_VERSION:
        raise DataError(
            f"model format version mismatch: file has {rec.get('version')!r}, "
            f"reader supports {MODEL_FORMAT_VERSION}"
        )
    kind = rec.get("kind")
    if kind == "logreg":
        return LogRegModel(
            tuple(rec["classes"]),
            np.asarray(rec["weights"], dtype=np.float64),
            np.asarray(rec["bias"], dtype=np.float64),
            float(rec["C"]),
            dict(rec.get("meta", {})),
        )
    if kind == "nb":
        return NBModel(
            tuple(rec["classes"]),
            np.asarray(rec["log_priors"], dtype=np.float64),
            np.asarray(rec["log_theta"], dtype=np.float64),
            float(rec["alpha"]),
            dict(rec.get("meta", {})),
        )
    if kind == "knn":
        return KnnModel(
            tuple(rec["classes"]),
            tuple(rec["vocab"]),
            np.asarray(rec["matrix"], dtype=np.float64),
            tuple(rec["train_labels"]),
            int(rec["k"]),
            dict(rec.get("meta", {})),
        )
    raise DataError(f"unknown model kind {kind!r}")


def save_model(model, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(model_to_record(model), fp, separators=(",", ":"))
        fp.write("\n")


def load_model(path: str):
    with open(path, "r", encoding="utf-8") as fp:
        return model_from_record(json.load(fp))
