"""Independent brute-force oracles for tests and derived expected values.

Everything here is written against plain numpy arrays with explicit loops
and no numerical shortcuts, deliberately sharing no code with the
production paths it checks (production modules never import this one).
All oracles run at 64-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class OracleReport:
    case: str
    production: float
    oracle: float

    @property
    def abs_error(self) -> float:
        return abs(self.production - self.oracle)

    @property
    def rel_error(self) -> float:
        return self.abs_error / max(abs(self.oracle), 1e-12)


def compare(case: str, production: float, oracle: float) -> OracleReport:
    return OracleReport(case=case, production=float(production), oracle=float(oracle))


# ---------------------------------------------------------------------------
# contrastive losses, one explicit loop per index in the definition


def oracle_temporal_loss(f: np.ndarray, g: np.ndarray) -> float:
    """Mean over (i, t), symmetrized over the two anchor directions, of
    -log[ exp(f_it·g_it) / (sum_t' exp(f_it·g_it') + sum_{t'!=t} exp(f_it·f_it')) ].

    A single timestep has no temporal negatives: defined as 0.
    """
    b, _, length = f.shape
    if length == 1:
        return 0.0

    def one_direction(a, o):
        total = 0.0
        for i in range(b):
            for t in range(length):
                pos = math.exp(float(np.dot(a[i, :, t], o[i, :, t])))
                denom = 0.0
                for tp in range(length):
                    denom += math.exp(float(np.dot(a[i, :, t], o[i, :, tp])))
                    if tp != t:
                        denom += math.exp(float(np.dot(a[i, :, t], a[i, :, tp])))
                total += -math.log(pos / denom)
        return total / (b * length)

    return 0.5 * (one_direction(f, g) + one_direction(g, f))


def oracle_instance_loss(f: np.ndarray, g: np.ndarray) -> float:
    """Mean over (i, t), symmetrized, of
    -log[ exp(f_it·g_it) / (sum_j exp(f_it·g_jt) + sum_{j!=i} exp(f_it·f_jt)) ].

    A single instance has no instance negatives: defined as 0.
    """
    b, _, length = f.shape
    if b == 1:
        return 0.0

    def one_direction(a, o):
        total = 0.0
        for i in range(b):
            for t in range(length):
                pos = math.exp(float(np.dot(a[i, :, t], o[i, :, t])))
                denom = 0.0
                for j in range(b):
                    denom += math.exp(float(np.dot(a[i, :, t], o[j, :, t])))
                    if j != i:
                        denom += math.exp(float(np.dot(a[i, :, t], a[j, :, t])))
                total += -math.log(pos / denom)
        return total / (b * length)

    return 0.5 * (one_direction(f, g) + one_direction(g, f))


def oracle_pool_halve(arr: np.ndarray, mode: str) -> np.ndarray:
    """Width-2 pooling with a singleton tail window, loop-built."""
    b, c, length = arr.shape
    out_len = (length + 1) // 2
    out = np.empty((b, c, out_len), dtype=np.float64)
    for w in range(out_len):
        window = arr[:, :, 2 * w:min(2 * w + 2, length)]
        out[:, :, w] = window.max(axis=2) if mode == "max" else window.mean(axis=2)
    return out


def oracle_hierarchical_loss(f: np.ndarray, g: np.ndarray, alpha: float,
                             pool_mode: str = "max", include_unpooled: bool = True) -> float:
    """Sum over all pyramid levels of the combined loss, pooling with the
    oracle's own halving."""
    total = 0.0
    a, o = np.asarray(f, dtype=np.float64), np.asarray(g, dtype=np.float64)
    if include_unpooled or a.shape[2] == 1:
        total += (alpha * oracle_temporal_loss(a, o)
                  + (1 - alpha) * oracle_instance_loss(a, o))
    while a.shape[2] > 1:
        a, o = oracle_pool_halve(a, pool_mode), oracle_pool_halve(o, pool_mode)
        total += (alpha * oracle_temporal_loss(a, o)
                  + (1 - alpha) * oracle_instance_loss(a, o))
    return total


# ---------------------------------------------------------------------------
# dynamic time warping, full-table fill


def oracle_dtw(x: np.ndarray, y: np.ndarray, mode: str = "dependent") -> float:
    """Textbook O(L^2) DP with squared-Euclidean step cost, no band."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if mode == "independent":
        return float(sum(oracle_dtw(x[d:d + 1], y[d:d + 1]) for d in range(x.shape[0])))
    n, m = x.shape[1], y.shape[1]
    table = np.full((n + 1, m + 1), math.inf)
    table[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            step = float(((x[:, i - 1] - y[:, j - 1]) ** 2).sum())
            table[i, j] = step + min(table[i - 1, j - 1], table[i - 1, j], table[i, j - 1])
    return float(table[n, m])


def oracle_knn1(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray,
                metric: str = "euclidean") -> np.ndarray:
    """Exhaustive nearest neighbor: every pair, running minimum, first wins ties."""
    preds = []
    for item in test_x:
        best, best_d = 0, math.inf
        for idx, ref in enumerate(train_x):
            if metric == "euclidean":
                d = math.sqrt(float(((np.asarray(item) - np.asarray(ref)) ** 2).sum()))
            elif metric == "dtw-d":
                d = oracle_dtw(item, ref, mode="dependent")
            elif metric == "dtw-i":
                d = oracle_dtw(item, ref, mode="independent")
            else:
                raise ValueError(f"unknown metric {metric!r}")
            if d < best_d:
                best, best_d = idx, d
        preds.append(train_y[best])
    return np.asarray(preds)


# ---------------------------------------------------------------------------
# scheduler distribution helpers


def oracle_softmax(values) -> np.ndarray:
    """Direct exp/sum at 64-bit, no max subtraction."""
    e = np.array([math.exp(float(v)) for v in values], dtype=np.float64)
    return e / e.sum()


def oracle_softmax_sampler(probabilities, n_draws: int, seed: int) -> np.ndarray:
    """Empirical frequency vector from a straightforward categorical sampler."""
    p = np.asarray(probabilities, dtype=np.float64)
    rng = np.random.default_rng(seed)
    draws = rng.choice(len(p), size=n_draws, p=p / p.sum())
    return np.bincount(draws, minlength=len(p)) / n_draws
