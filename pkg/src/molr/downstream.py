"""Embedding probes (logistic/AUC, ridge/RMSE) and an exact graph edit distance."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ShapeMismatch, SingleClass, TooLarge
from .graph import MolecularGraph


@dataclass
class ProbeReport:
    metric: str
    value: float
    std: float = 0.0
    values: list[float] = field(default_factory=list)
    split_sizes: tuple[int, int, int] = (0, 0, 0)
    seed: int = 0

    def to_json(self) -> dict:
        return {"metric": self.metric, "value": self.value, "std": self.std, "values": self.values,
                "split_sizes": list(self.split_sizes), "seed": self.seed}


def split_indices(n: int, seed: int, fractions=(0.8, 0.1, 0.1)) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded 8:1:1 train/validation/test split.

    From three items up, validation and test each get at least one.
    """
    order = np.random.default_rng(seed).permutation(n)
    floor = 1 if n >= 3 else 0
    n_val = max(floor, int(round(fractions[1] * n)))
    n_test = max(floor, int(round(fractions[2] * n)))
    n_train = n - n_val - n_test
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


# ---------------------------------------------------------------- classification

def _with_bias(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def logistic_loss(w: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float) -> float:
    z = _with_bias(x) @ w
    # log(1 + exp(z)) - y z, computed stably
    nll = np.mean(np.logaddexp(0.0, z) - y * z)
    return float(nll + 0.5 * l2 * np.sum(w[:-1] ** 2))


def logistic_fit(features, labels, l2: float = 1e-3, iters: int = 500) -> np.ndarray:
    """L2-regularized logistic regression by full-batch gradient descent.

    Starts from zero and uses step ``1/L`` with ``L`` the gradient's Lipschitz
    bound, so the objective never increases. The bias is the last weight and
    is not penalized.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise SingleClass("logistic regression needs both classes")
    xb = _with_bias(x)
    n = len(y)
    lipschitz = 0.25 * np.linalg.norm(xb, 2) ** 2 / n + l2
    step = 1.0 / lipschitz
    penalty = np.ones(xb.shape[1])
    penalty[-1] = 0.0
    w = np.zeros(xb.shape[1])
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(xb @ w)))
        grad = xb.T @ (p - y) / n + l2 * penalty * w
        w = w - step * grad
    return w


def logistic_predict(w: np.ndarray, features) -> np.ndarray:
    z = _with_bias(np.asarray(features, dtype=np.float64)) @ w
    return 1.0 / (1.0 + np.exp(-z))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def property_probe(embeddings, labels, repetitions: int = 20, seed: int = 0,
                   l2_grid: Sequence[float] = (1e-4, 1e-3, 1e-2, 1e-1), iters: int = 500) -> ProbeReport:
    """Test AUC of a logistic probe over repeated seeded 8:1:1 splits.

    The regularization strength is picked on the validation split. Splits
    whose test part holds a single class are skipped.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels).astype(np.float64)
    values, sizes = [], (0, 0, 0)
    for rep in range(repetitions):
        tr, va, te = split_indices(len(y), seed + rep)
        sizes = (len(tr), len(va), len(te))
        if len(np.unique(y[tr])) < 2 or len(np.unique(y[te])) < 2:
            continue
        mean, std = x[tr].mean(axis=0), x[tr].std(axis=0) + 1e-12
        z = (x - mean) / std
        best_l2, best_auc = l2_grid[0], -1.0
        if len(np.unique(y[va])) == 2:
            for l2 in l2_grid:
                w = logistic_fit(z[tr], y[tr], l2, iters)
                score = auc(logistic_predict(w, z[va]), y[va])
                if score > best_auc:
                    best_l2, best_auc = l2, score
        w = logistic_fit(z[tr], y[tr], best_l2, iters)
        values.append(auc(logistic_predict(w, z[te]), y[te]))
    if not values:
        raise SingleClass("every split had a single-class test set")
    return ProbeReport("auc", float(np.mean(values)), float(np.std(values)), values, sizes, seed)


# ---------------------------------------------------------------- regression

def ged_features(emb_a, emb_b, mode: str = "subtract") -> np.ndarray:
    a, b = np.asarray(emb_a, dtype=np.float64), np.asarray(emb_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"embedding shapes differ: {a.shape} vs {b.shape}")
    if mode == "concat":
        return np.concatenate([a, b], axis=-1)
    if mode == "subtract":
        return a - b
    raise ValueError(f"unknown feature mode {mode!r}")


def ridge_fit(features, targets, lam: float = 1.0) -> tuple[np.ndarray, float]:
    """Closed-form ridge regression with an unpenalized intercept."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"{x.shape[0]} rows but {y.shape[0]} targets")
    x_mean, y_mean = x.mean(axis=0), y.mean()
    xc = x - x_mean
    w = np.linalg.solve(xc.T @ xc + lam * np.eye(x.shape[1]), xc.T @ (y - y_mean))
    return w, float(y_mean - x_mean @ w)


def ridge_predict(model: tuple[np.ndarray, float], features) -> np.ndarray:
    w, b = model
    return np.asarray(features, dtype=np.float64) @ w + b


def rmse(pred, truth) -> float:
    p, t = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction shape {p.shape} vs truth {t.shape}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def ged_probe(emb_a, emb_b, targets, mode: str = "subtract", seed: int = 0,
              lam_grid: Sequence[float] = (1e-3, 1e-2, 1e-1, 1.0, 10.0)) -> ProbeReport:
    """Test RMSE of a ridge probe predicting GED from paired embeddings."""
    x = ged_features(emb_a, emb_b, mode)
    y = np.asarray(targets, dtype=np.float64)
    tr, va, te = split_indices(len(y), seed)
    if len(va) == 0:
        va = tr
    best = min(lam_grid, key=lambda lam: rmse(ridge_predict(ridge_fit(x[tr], y[tr], lam), x[va]), y[va]))
    model = ridge_fit(x[tr], y[tr], best)
    value = rmse(ridge_predict(model, x[te]), y[te]) if len(te) else float("nan")
    return ProbeReport("rmse", value, 0.0, [value], (len(tr), len(va), len(te)), seed)


# ---------------------------------------------------------------- graph edit distance

def ged_exact(g1: MolecularGraph, g2: MolecularGraph, node_limit: int = 8) -> int:
    """Exact unit-cost graph edit distance by depth-first branch and bound.

    Node labels are elements and edge labels bond orders; inserting,
    deleting or relabeling a node or an edge each costs 1. Nodes of ``g1``
    are assigned one at a time to an unused node of ``g2`` or deleted, and a
    branch is cut when its cost plus an admissible bound (label-multiset
    node bound plus remaining-edge-count bound) reaches the best total.
    """
    n1, n2 = g1.n_atoms, g2.n_atoms
    if n1 > node_limit or n2 > node_limit:
        raise TooLarge(f"graphs of {n1} and {n2} nodes exceed node_limit={node_limit}")
    lab1 = [a.element for a in g1.atoms]
    lab2 = [a.element for a in g2.atoms]
    e1 = [[None] * n1 for _ in range(n1)]
    for b in g1.bonds:
        e1[b.i][b.j] = e1[b.j][b.i] = b.order
    e2 = [[None] * n2 for _ in range(n2)]
    for b in g2.bonds:
        e2[b.i][b.j] = e2[b.j][b.i] = b.order

    order = sorted(range(n1), key=lambda u: (-len(g1.neighbors[u]), u))
    pos = {u: k for k, u in enumerate(order)}
    # g1 edges become "settled" once their later endpoint (in ``order``) is processed
    settle_at = Counter(max(pos[b.i], pos[b.j]) for b in g1.bonds)
    remaining_e1 = [0] * (n1 + 1)
    for k in range(n1 - 1, -1, -1):
        remaining_e1[k] = remaining_e1[k + 1] + settle_at.get(k, 0)

    image: list[int | None] = [None] * n1
    used = [False] * n2
    best = [n1 + n2 + g1.n_bonds + g2.n_bonds]

    def open_e2() -> int:
        return sum(1 for b in g2.bonds if not (used[b.i] and used[b.j]))

    def bound(k: int) -> int:
        rest1 = Counter(lab1[u] for u in order[k:])
        rest2 = Counter(lab2[v] for v in range(n2) if not used[v])
        n_r1, n_r2 = n1 - k, sum(rest2.values())
        same = sum(min(c, rest2[l]) for l, c in rest1.items())
        return max(n_r1, n_r2) - same + abs(remaining_e1[k] - open_e2())

    def search(k: int, cost: int) -> None:
        if cost + bound(k) >= best[0]:
            return
        if k == n1:
            total = cost + sum(1 for v in range(n2) if not used[v]) + open_e2()
            best[0] = min(best[0], total)
            return
        u = order[k]
        prev = order[:k]
        options = sorted((v for v in range(n2) if not used[v]), key=lambda v: lab2[v] != lab1[u])
        for v in options:
            c = int(lab1[u] != lab2[v])
            for p in prev:
                a, m = e1[u][p], image[p]
                if m is None:
                    c += a is not None
                else:
                    c += a != e2[v][m]
            used[v], image[u] = True, v
            search(k + 1, cost + c)
            used[v], image[u] = False, None
        c = 1 + sum(1 for p in prev if e1[u][p] is not None)
        search(k + 1, cost + c)

    search(0, 0)
    return best[0]
