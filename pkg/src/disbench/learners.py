"""Classifiers used by the metrics: multinomial logistic regression and boosted trees."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from . import kernels
from .errors import FitError, InputError

LOGISTIC_GRID = np.logspace(-4, 4, 10)


class ClassifierModel:
    kind = "base"
    classes: np.ndarray
    degenerate: bool = False

    def predict(self, X):
        raise NotImplementedError

    def score(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y)))


class ConstantClassifier(ClassifierModel):
    """Fallback when the training labels hold a single class."""

    def __init__(self, label, kind):
        self.kind = kind
        self.classes = np.asarray([label])
        self.degenerate = True
        self.importances = None

    def predict(self, X):
        return np.full(len(X), self.classes[0])


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y).ravel()
    if X.shape[0] != y.shape[0]:
        raise InputError("X and y differ in length")
    if X.shape[0] == 0:
        raise InputError("empty training set")
    return X, y


# -- multinomial logistic regression -----------------------------------------

class LogisticModel(ClassifierModel):
    kind = "logistic"

    def __init__(self, classes, weights, bias, C):
        self.classes = classes
        self.weights = weights
        self.bias = bias
        self.C = C
        self.degenerate = False
        self.cv_scores = None

    def decision_function(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        return X @ self.weights + self.bias

    def predict(self, X):
        return self.classes[np.argmax(self.decision_function(X), axis=1)]


def _logistic_objective(theta, X, Y, inv_reg):
    n, d = X.shape
    k = Y.shape[1]
    W = theta[:d * k].reshape(d, k)
    b = theta[d * k:]
    scores = X @ W + b
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    norm = e.sum(axis=1, keepdims=True)
    log_p = scores - np.log(norm)
    loss = -(Y * log_p).sum() / n + 0.5 * inv_reg * (W * W).sum()
    resid = (e / norm - Y) / n
    grad_w = X.T @ resid + inv_reg * W
    grad_b = resid.sum(axis=0)
    return loss, np.concatenate([grad_w.ravel(), grad_b])


def _fit_logistic_raw(X, codes, k, C, start=None, max_iter=500, gtol=1e-8):
    n, d = X.shape
    Y = np.zeros((n, k))
    Y[np.arange(n), codes] = 1.0
    theta0 = np.zeros(d * k + k) if start is None else start
    # C * sum(CE) + ||W||^2 / 2, divided through by C * n.
    inv_reg = 1.0 / (C * n)
    res = minimize(_logistic_objective, theta0, args=(X, Y, inv_reg), jac=True,
                   method="L-BFGS-B", options={"maxiter": max_iter, "gtol": gtol, "ftol": gtol * 1e-4})
    return res.x


def fit_logistic(X, y, C=1.0, max_iter=500) -> ClassifierModel:
    """L2-regularised multinomial logistic regression (C as inverse strength)."""
    X, y = _check_xy(X, y)
    classes, codes = np.unique(y, return_inverse=True)
    if classes.size < 2:
        return ConstantClassifier(classes[0], "logistic")
    k, d = classes.size, X.shape[1]
    theta = _fit_logistic_raw(X, codes, k, C, max_iter=max_iter)
    return LogisticModel(classes, theta[:d * k].reshape(d, k), theta[d * k:], C)


def fit_linear_low_reg(X_single_dim, y, strength=0.01) -> ClassifierModel:
    """Strongly regularised linear classifier on a single feature column.

    Logistic (softmax) surrogate with inverse regularisation ``strength``.
    """
    X, y = _check_xy(X_single_dim, y)
    if X.shape[1] != 1:
        raise InputError("fit_linear_low_reg takes exactly one feature column")
    model = fit_logistic(X, y, C=strength)
    model.kind = "linear_low_reg"
    return model


def stratified_folds(y, folds, rng):
    """Fold id per sample; each class is dealt round-robin after a shuffle."""
    y = np.asarray(y)
    fold_of = np.empty(len(y), dtype=np.int64)
    offset = 0
    for label in np.unique(y):
        idx = np.flatnonzero(y == label)
        idx = idx[rng.permutation(idx.size)]
        fold_of[idx] = (np.arange(idx.size) + offset) % folds
        offset += idx.size
    return fold_of


def fit_logistic_cv(X, y, folds=5, n_reg_values=10, seed=0, grid=None) -> ClassifierModel:
    """Pick C from a log grid by mean k-fold accuracy, then refit on everything.

    Ties go to the smallest C.  ``model.cv_scores`` holds the mean accuracies.
    """
    X, y = _check_xy(X, y)
    classes, codes = np.unique(y, return_inverse=True)
    if classes.size < 2:
        return ConstantClassifier(classes[0], "logistic")
    if len(y) < folds:
        raise InputError(f"need at least {folds} samples for {folds}-fold CV")
    Cs = np.asarray(grid if grid is not None else np.logspace(-4, 4, n_reg_values))
    fold_of = stratified_folds(codes, folds, np.random.default_rng(seed))
    k, d = classes.size, X.shape[1]
    accuracy = np.zeros((folds, Cs.size))
    for f in range(folds):
        train, test = fold_of != f, fold_of == f
        train_codes = codes[train]
        present = np.unique(train_codes)
        if present.size < 2:
            accuracy[f, :] = np.mean(codes[test] == present[0])
            continue
        # Remap to the classes present in this fold.
        local = np.searchsorted(present, train_codes)
        theta = None
        for j, C in enumerate(Cs):
            # Looser tolerance while scoring folds; the final refit is tight.
            theta = _fit_logistic_raw(X[train], local, present.size, C, start=theta, gtol=1e-6)
            W = theta[:d * present.size].reshape(d, present.size)
            b = theta[d * present.size:]
            pred = present[np.argmax(X[test] @ W + b, axis=1)]
            accuracy[f, j] = np.mean(pred == codes[test])
    mean_acc = accuracy.mean(axis=0)
    best = int(np.argmax(mean_acc))
    theta = _fit_logistic_raw(X, codes, k, Cs[best])
    model = LogisticModel(classes, theta[:d * k].reshape(d, k), theta[d * k:], Cs[best])
    model.cv_scores = mean_acc
    return model


# -- gradient boosted trees ---------------------------------------------------

@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    value: float = 0.0


@dataclass
class RegressionTree:
    nodes: list = field(default_factory=list)

    def predict(self, X):
        out = np.empty(len(X))
        stack = [(0, np.arange(len(X)))]
        while stack:
            node_id, rows = stack.pop()
            node = self.nodes[node_id]
            if node.feature < 0:
                out[rows] = node.value
                continue
            go_left = X[rows, node.feature] <= node.threshold
            stack.append((node.left, rows[go_left]))
            stack.append((node.right, rows[~go_left]))
        return out


def _grow_tree(X, sorted_idx, residual, hessian, depth, scale, importances):
    n, d = X.shape
    tree = RegressionTree()

    def leaf_value(rows):
        num = residual[rows].sum()
        den = hessian[rows].sum()
        return 0.0 if abs(den) < 1e-150 else scale * num / den

    def grow(rows_mask, level):
        node_id = len(tree.nodes)
        tree.nodes.append(_Node())
        rows = np.flatnonzero(rows_mask)
        best = (0.0, -1, 0.0)
        if level < depth and rows.size >= 2:
            for f in range(d):
                order = sorted_idx[f][rows_mask[sorted_idx[f]]]
                vals = X[order, f]
                gain, i = kernels.best_split(vals, residual[order])
                if i >= 0 and gain > best[0] + 1e-12 * max(1.0, abs(best[0])):
                    best = (gain, f, 0.5 * (vals[i] + vals[i + 1]))
        gain, f, threshold = best
        if f < 0:
            tree.nodes[node_id].value = leaf_value(rows)
            return node_id
        importances[f] += gain
        go_left = rows_mask & (X[:, f] <= threshold)
        go_right = rows_mask & ~go_left
        tree.nodes[node_id].feature = f
        tree.nodes[node_id].threshold = threshold
        tree.nodes[node_id].left = grow(go_left, level + 1)
        tree.nodes[node_id].right = grow(go_right, level + 1)
        return node_id

    grow(np.ones(n, dtype=bool), 0)
    return tree


class TreeEnsembleModel(ClassifierModel):
    kind = "tree_ensemble"

    def __init__(self, classes, init_scores, trees, learning_rate, importances):
        self.classes = classes
        self.init_scores = init_scores
        self.trees = trees
        self.learning_rate = learning_rate
        total = importances.sum()
        self.raw_importances = importances
        self.importances = importances / total if total > 0 else np.zeros_like(importances)
        self.importances_all_zero = bool(total <= 0)
        self.degenerate = False

    def decision_function(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        scores = np.tile(self.init_scores, (len(X), 1))
        for stage in self.trees:
            for k, tree in enumerate(stage):
                scores[:, k] += self.learning_rate * tree.predict(X)
        return scores

    def predict(self, X):
        return self.classes[np.argmax(self.decision_function(X), axis=1)]


def fit_tree_ensemble(X, y, n_stages=10, depth=2, learning_rate=0.1, seed=0) -> ClassifierModel:
    """Gradient boosting of depth-limited regression trees on the softmax log-loss.

    Each stage fits one tree per class to the residual (onehot - p) and takes a
    Newton step in every leaf.  Importances are the total squared-error
    decrease credited to each feature, normalised to sum to one.  The fit is
    deterministic; ``seed`` is accepted for interface symmetry.
    """
    X, y = _check_xy(X, y)
    if X.shape[0] < 2:
        raise InputError("need at least two samples")
    classes, codes = np.unique(y, return_inverse=True)
    d = X.shape[1]
    if classes.size < 2:
        model = ConstantClassifier(classes[0], "tree_ensemble")
        model.importances = np.zeros(d)
        model.importances_all_zero = True
        return model
    n, k = X.shape[0], classes.size
    Y = np.zeros((n, k))
    Y[np.arange(n), codes] = 1.0
    prior = Y.mean(axis=0)
    init = np.log(np.maximum(prior, 1e-300))
    scores = np.tile(init, (n, 1))
    sorted_idx = [np.argsort(X[:, f], kind="stable") for f in range(d)]
    importances = np.zeros(d)
    scale = (k - 1) / k
    stages = []
    for _ in range(n_stages):
        p = np.exp(scores - logsumexp(scores, axis=1, keepdims=True))
        stage = []
        for c in range(k):
            resid = Y[:, c] - p[:, c]
            hess = np.abs(resid) * (1.0 - np.abs(resid))
            tree = _grow_tree(X, sorted_idx, resid, hess, depth, scale, importances)
            stage.append(tree)
        for c, tree in enumerate(stage):
            scores[:, c] += learning_rate * tree.predict(X)
        stages.append(stage)
    if not np.all(np.isfinite(scores)):
        raise FitError("boosting produced non-finite scores")
    return TreeEnsembleModel(classes, init, stages, learning_rate, importances)
