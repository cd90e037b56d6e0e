"""Downstream classification evaluation.

Learned representations are evaluated with a 1-NN classifier on the global
average pooled embedding (mean of the per-timestep feature vectors over the
full series). The non-SSL baselines operate on the raw series: Euclidean
distance, and dynamic time warping in its dependent (one joint multichannel
DP) and independent (per-channel DP, summed) variants. A linear softmax
probe on embeddings is available as an alternative classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import TimeSeriesDataset
from .encoder import EncoderParams, encode
from .numerics import Tensor, no_grad

EVAL_METHODS = ("embed-1nn", "embed-linear", "1nn-ed", "1nn-dtw-d", "1nn-dtw-i")


@dataclass
class EvalResult:
    method: str
    accuracy: float  # correct / total, exactly
    per_class: dict  # class id -> (correct, total)
    predictions: np.ndarray


def embed(dataset: TimeSeriesDataset, params: EncoderParams, chunk: int = 32) -> np.ndarray:
    """N×K embedding matrix: encode the full series, average over time.

    Runs with masking disabled and without gradient tracking; parameters are
    never touched.
    """
    out = np.empty((dataset.n, params.config.output_dim), dtype=np.float64)
    vals = dataset.values.data
    with no_grad():
        for start in range(0, dataset.n, chunk):
            stop = min(start + chunk, dataset.n)
            fmap = encode(Tensor(vals[start:stop]), params, training=False)
            out[start:stop] = fmap.data.mean(axis=2)
    return out


# ---------------------------------------------------------------------------
# distances


def dtw_distance(x: np.ndarray, y: np.ndarray, mode: str = "dependent",
                 window: int | None = None) -> float:
    """Dynamic time warping with squared-Euclidean step cost.

    ``x`` and ``y`` are D×L (a 1-D array is taken as one channel).
    Dependent mode runs one DP over the joint multichannel cost; independent
    mode sums per-channel univariate DTW distances. ``window`` is an
    optional Sakoe-Chiba band radius.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"channel count mismatch: {x.shape[0]} vs {y.shape[0]}")
    if window is not None and window < abs(x.shape[1] - y.shape[1]):
        raise ValueError(f"band radius {window} cannot bridge length difference "
                         f"{abs(x.shape[1] - y.shape[1])}")
    if mode == "dependent":
        cost = ((x[:, :, None] - y[:, None, :]) ** 2).sum(axis=0)  # Lx×Ly
        return _dtw_dp(cost, window)
    if mode == "independent":
        return float(np.sum([_dtw_dp((x[d, :, None] - y[d, None, :]) ** 2, window)
                             for d in range(x.shape[0])]))
    raise ValueError(f"mode must be 'dependent' or 'independent', got {mode!r}")


def _dtw_dp(cost: np.ndarray, window: int | None) -> float:
    """Classic three-way recurrence over a cost matrix, two rolling rows."""
    n, m = cost.shape
    band = max(window, abs(n - m)) if window is not None else None
    prev = np.full(m + 1, np.inf)
    prev[0] = 0.0
    curr = np.empty(m + 1)
    for i in range(1, n + 1):
        curr[:] = np.inf
        lo, hi = (1, m) if band is None else (max(1, i - band), min(m, i + band))
        for j in range(lo, hi + 1):
            curr[j] = cost[i - 1, j - 1] + min(prev[j - 1], prev[j], curr[j - 1])
        prev, curr = curr, prev
    return float(prev[m])


def _euclidean_matrix(test_x: np.ndarray, train_x: np.ndarray) -> np.ndarray:
    te = test_x.reshape(len(test_x), -1)
    tr = train_x.reshape(len(train_x), -1)
    # direct differences: better conditioned than the quadratic expansion
    return np.sqrt(((te[:, None, :] - tr[None, :, :]) ** 2).sum(axis=2))


def knn1(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray,
         metric: str = "euclidean", window: int | None = None) -> np.ndarray:
    """Label each test item by its nearest train item (ties: lowest index).

    ``metric='euclidean'`` works on embedding vectors or flattened raw
    series; the DTW metrics expect raw N×D×L arrays.
    """
    if len(train_x) == 0:
        raise ValueError("knn1 needs a nonempty train set")
    train_y = np.asarray(train_y)
    if metric == "euclidean":
        dists = _euclidean_matrix(np.asarray(test_x), np.asarray(train_x))
    elif metric in ("dtw-d", "dtw-i"):
        mode = "dependent" if metric == "dtw-d" else "independent"
        dists = np.array([[dtw_distance(t, r, mode=mode, window=window)
                           for r in train_x] for t in test_x])
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return train_y[np.argmin(dists, axis=1)]


# ---------------------------------------------------------------------------
# linear probe (optional classifier for embeddings)


def linear_probe_predict(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray,
                         num_classes: int, seed: int = 0, steps: int = 300,
                         lr: float = 0.1) -> np.ndarray:
    """Multinomial logistic regression on embeddings, full-batch gradient descent."""
    rng = np.random.default_rng(seed)
    mu, sd = train_x.mean(axis=0), train_x.std(axis=0) + 1e-8
    xtr = (train_x - mu) / sd
    w = rng.normal(0.0, 0.01, size=(train_x.shape[1], num_classes))
    b = np.zeros(num_classes)
    onehot = np.eye(num_classes)[train_y]
    for _ in range(steps):
        logits = xtr @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        grad = (p - onehot) / len(xtr)
        w -= lr * (xtr.T @ grad)
        b -= lr * grad.sum(axis=0)
    logits = ((test_x - mu) / sd) @ w + b
    return np.argmax(logits, axis=1)


# ---------------------------------------------------------------------------
# end-to-end evaluation


def evaluate(train_set: TimeSeriesDataset, test_set: TimeSeriesDataset, method: str,
             params: EncoderParams | None = None, window: int | None = None,
             seed: int = 0) -> EvalResult:
    """Run one classification method end to end and score test accuracy."""
    if method not in EVAL_METHODS:
        raise ValueError(f"method must be one of {EVAL_METHODS}, got {method!r}")
    if train_set.labels is None or test_set.labels is None:
        raise ValueError("evaluate needs labeled train and test splits")
    if train_set.num_classes != test_set.num_classes:
        raise ValueError(f"label spaces differ: {train_set.num_classes} vs "
                         f"{test_set.num_classes} classes")
    if method in ("embed-1nn", "embed-linear"):
        if params is None:
            raise ValueError(f"method {method!r} needs trained encoder params")
        train_x = embed(train_set, params)
        test_x = embed(test_set, params)
        if method == "embed-1nn":
            preds = knn1(train_x, train_set.labels, test_x, metric="euclidean")
        else:
            preds = linear_probe_predict(train_x, train_set.labels, test_x,
                                         train_set.num_classes, seed=seed)
    elif method == "1nn-ed":
        preds = knn1(train_set.values.data, train_set.labels,
                     test_set.values.data, metric="euclidean")
    else:
        metric = "dtw-d" if method == "1nn-dtw-d" else "dtw-i"
        preds = knn1(train_set.values.data, train_set.labels,
                     test_set.values.data, metric=metric, window=window)
    truth = test_set.labels
    correct = int((preds == truth).sum())
    per_class = {int(c): (int(((preds == truth) & (truth == c)).sum()),
                          int((truth == c).sum()))
                 for c in np.unique(truth)}
    return EvalResult(method=method, accuracy=correct / len(truth),
                      per_class=per_class, predictions=preds)
