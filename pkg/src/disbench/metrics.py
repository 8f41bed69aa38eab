"""Disentanglement metrics, unsupervised diagnostics and downstream evaluation.

Every metric comes in two layers: a ``*_from_samples`` function working on
arrays of factors and codes, and a wrapper that draws the samples from a
ground-truth model through a representation function ``represent(x) -> codes``.
Ties (argmax / argmin) always resolve to the lowest index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import stats
from .errors import CollapsedRepresentationError, FitError, InputError
from .learners import fit_linear_low_reg, fit_logistic, fit_logistic_cv, fit_tree_ensemble

METRIC_NAMES = ("beta_vae_score", "factor_vae_score", "mig", "modularity",
                "dci_disentanglement", "sap")
INTERVENTION_METRICS = ("beta_vae_score", "factor_vae_score")


@dataclass
class MetricReport:
    score: float
    auxiliary: dict = field(default_factory=dict)

    def to_dict(self):
        return {"score": self.score, **_jsonable(self.auxiliary)}


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def _codes(represent, x, chunk=20000):
    parts = [np.asarray(represent(x[i:i + chunk]), dtype=np.float64)
             for i in range(0, len(x), chunk)]
    out = np.concatenate(parts)
    return out.reshape(len(out), -1)


def sample_codes(ground_truth, represent, n, rng):
    factors, x = ground_truth.sample(n, rng)
    return factors, _codes(represent, x)


# -- BetaVAE metric -----------------------------------------------------------

def _beta_vae_points(ground_truth, represent, n_points, batch_size, rng, chunk=64):
    k = ground_truth.num_factors
    cards = ground_truth.factor_space.cardinalities
    features, labels = [], []
    for start in range(0, n_points, chunk):
        m = min(chunk, n_points - start)
        index = rng.integers(0, k, size=m)
        value = np.array([rng.integers(0, cards[i]) for i in index])
        f1 = ground_truth.sample_factors(m * batch_size, rng)
        f2 = ground_truth.sample_factors(m * batch_size, rng)
        rows = np.repeat(np.arange(m), batch_size)
        f1[np.arange(len(rows)), index[rows]] = value[rows]
        f2[np.arange(len(rows)), index[rows]] = value[rows]
        r1 = _codes(represent, ground_truth.observe(f1, rng))
        r2 = _codes(represent, ground_truth.observe(f2, rng))
        diff = np.abs(r1 - r2).reshape(m, batch_size, -1).mean(axis=1)
        features.append(diff)
        labels.append(index)
    return np.concatenate(features), np.concatenate(labels)


def beta_vae_metric(ground_truth, represent, rng, n_train=10000, n_test=5000, batch_size=64):
    """Accuracy of a logistic classifier guessing which factor was held fixed."""
    x_train, y_train = _beta_vae_points(ground_truth, represent, n_train, batch_size, rng)
    x_test, y_test = _beta_vae_points(ground_truth, represent, n_test, batch_size, rng)
    model = fit_logistic(x_train, y_train, C=1.0)
    return MetricReport(model.score(x_test, y_test),
                        {"train_accuracy": model.score(x_train, y_train)})


# -- FactorVAE metric ---------------------------------------------------------

def _factor_vae_votes(ground_truth, represent, n_points, batch_size, global_var, active, rng,
                      chunk=64):
    k = ground_truth.num_factors
    cards = ground_truth.factor_space.cardinalities
    dims, labels = [], []
    active_idx = np.flatnonzero(active)
    for start in range(0, n_points, chunk):
        m = min(chunk, n_points - start)
        index = rng.integers(0, k, size=m)
        value = np.array([rng.integers(0, cards[i]) for i in index])
        f = ground_truth.sample_factors(m * batch_size, rng)
        rows = np.repeat(np.arange(m), batch_size)
        f[np.arange(len(rows)), index[rows]] = value[rows]
        codes = _codes(represent, ground_truth.observe(f, rng)).reshape(m, batch_size, -1)
        if active_idx.size:
            local = codes[:, :, active_idx].var(axis=1, ddof=1) / global_var[active_idx]
            dims.append(active_idx[np.argmin(local, axis=1)])
        else:
            dims.append(np.zeros(m, dtype=np.int64))
        labels.append(index)
    return np.concatenate(dims), np.concatenate(labels)


def factor_vae_metric(ground_truth, represent, rng, n_train=10000, n_test=5000, batch_size=64,
                      prune_var=0.05, n_variance=10000, strict=True):
    """Majority-vote accuracy of "least normalised variance dimension -> factor".

    Dimensions whose variance over ``n_variance`` samples is below
    ``prune_var`` are ignored; the same estimate normalises the in-batch
    variances.  If every dimension collapses, ``strict`` raises; otherwise
    the classifier has no information and predicts the most frequent
    training factor.
    """
    _, codes = sample_codes(ground_truth, represent, n_variance, rng)
    global_var = codes.var(axis=0, ddof=1)
    active = global_var >= prune_var
    if not active.any() and strict:
        raise CollapsedRepresentationError("all dimensions collapsed")
    d, k = codes.shape[1], ground_truth.num_factors
    train_dims, train_y = _factor_vae_votes(ground_truth, represent, n_train, batch_size,
                                            global_var, active, rng)
    test_dims, test_y = _factor_vae_votes(ground_truth, represent, n_test, batch_size,
                                          global_var, active, rng)
    votes = np.zeros((d, k), dtype=np.int64)
    np.add.at(votes, (train_dims, train_y), 1)
    classifier = np.argmax(votes, axis=1)
    train_acc = float(np.mean(classifier[train_dims] == train_y))
    test_acc = float(np.mean(classifier[test_dims] == test_y))
    return MetricReport(test_acc, {"train_accuracy": train_acc,
                                   "active_dims": np.flatnonzero(active).tolist(),
                                   "collapsed": not bool(active.any()),
                                   "votes": votes})


# -- information-based metrics -----------------------------------------------

def _factor_entropies(factors, cardinalities, exact):
    if exact:
        return np.log(np.asarray(cardinalities, dtype=np.float64))
    return np.array([stats.entropy(factors[:, k]) for k in range(factors.shape[1])])


def mig_from_samples(factors, codes, cardinalities=None, bins=stats.DEFAULT_BINS,
                     exact_entropy=True):
    factors = np.asarray(factors)
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape[1] < 2:
        raise InputError("MIG needs at least two representation dimensions")
    if cardinalities is None:
        exact_entropy = False
    m = stats.mi_matrix(stats.discretize(codes, bins), factors)
    entropies = _factor_entropies(factors, cardinalities, exact_entropy)
    ordered = np.sort(m, axis=0)[::-1]
    gaps = np.zeros(factors.shape[1])
    positive = entropies > 0
    gaps[positive] = (ordered[0, positive] - ordered[1, positive]) / entropies[positive]
    return MetricReport(float(gaps.mean()), {"mi_matrix": m, "factor_entropy": entropies,
                                             "gaps": gaps, "top_dims": np.argmax(m, axis=0)})


def mig(ground_truth, represent, rng, n=10000, bins=stats.DEFAULT_BINS, exact_entropy=True):
    factors, codes = sample_codes(ground_truth, represent, n, rng)
    return mig_from_samples(factors, codes, ground_truth.factor_space.cardinalities, bins,
                            exact_entropy)


def modularity_from_mi(m):
    """Mean over dimensions of 1 - delta_i; rows are dimensions, columns factors."""
    m = np.asarray(m, dtype=np.float64)
    n_factors = m.shape[1]
    if n_factors < 2:
        raise InputError("modularity needs at least two factors")
    scores = np.ones(m.shape[0])
    for i, row in enumerate(m):
        theta = row.max()
        if theta <= 0:
            continue
        template = np.zeros_like(row)
        template[np.argmax(row)] = theta
        delta = ((row - template) ** 2).sum() / (theta ** 2 * (n_factors - 1))
        scores[i] = 1.0 - delta
    return float(scores.mean()), scores


def modularity_from_samples(factors, codes, bins=stats.DEFAULT_BINS):
    m = stats.mi_matrix(stats.discretize(np.asarray(codes, dtype=np.float64), bins), factors)
    score, per_dim = modularity_from_mi(m)
    return MetricReport(score, {"mi_matrix": m, "per_dimension": per_dim})


def modularity(ground_truth, represent, rng, n=10000, bins=stats.DEFAULT_BINS):
    factors, codes = sample_codes(ground_truth, represent, n, rng)
    return modularity_from_samples(factors, codes, bins)


# -- DCI disentanglement ------------------------------------------------------

def dci_from_importance(R):
    """Disentanglement from an importance matrix (rows factors, columns dims).

    Column entropies use log base K (number of factors); all-zero columns get
    zero weight.
    """
    R = np.abs(np.asarray(R, dtype=np.float64))
    k, d = R.shape
    total = R.sum()
    if total <= 0:
        return 0.0, np.zeros(d), np.zeros(d)
    col = R.sum(axis=0)
    weights = col / total
    per_dim = np.zeros(d)
    for j in range(d):
        if col[j] <= 0:
            continue
        p = R[:, j] / col[j]
        p = p[p > 0]
        h = float(-(p * np.log(p)).sum() / np.log(k)) if k > 1 else 0.0
        per_dim[j] = 1.0 - h
    return float((weights * per_dim).sum()), per_dim, weights


def dci_from_samples(f_train, c_train, f_test, c_test, n_stages=10, depth=2, learning_rate=0.1,
                     names=None):
    f_train = np.asarray(f_train)
    k = f_train.shape[1]
    d = np.asarray(c_train).shape[1]
    R = np.zeros((k, d))
    train_acc, test_acc = [], []
    for i in range(k):
        if np.unique(f_train[:, i]).size < 2:
            label = names[i] if names else f"factor_{i}"
            raise FitError(f"cannot fit importances for {label}: constant target")
        model = fit_tree_ensemble(c_train, f_train[:, i], n_stages=n_stages, depth=depth,
                                  learning_rate=learning_rate)
        R[i] = np.abs(model.importances)
        train_acc.append(model.score(c_train, f_train[:, i]))
        test_acc.append(model.score(c_test, np.asarray(f_test)[:, i]))
    score, per_dim, weights = dci_from_importance(R)
    return MetricReport(score, {"importance_matrix": R, "per_dimension": per_dim,
                                "dimension_weights": weights, "train_accuracy": train_acc,
                                "test_accuracy": test_acc})


def dci_disentanglement(ground_truth, represent, rng, n_train=10000, n_test=5000, n_stages=10,
                        depth=2, learning_rate=0.1):
    f_train, c_train = sample_codes(ground_truth, represent, n_train, rng)
    f_test, c_test = sample_codes(ground_truth, represent, n_test, rng)
    return dci_from_samples(f_train, c_train, f_test, c_test, n_stages, depth, learning_rate,
                            names=ground_truth.factor_space.names)


# -- SAP ----------------------------------------------------------------------

def sap_from_matrix(scores):
    """Mean over factors (rows) of best minus second-best accuracy."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[1] < 2:
        raise InputError("SAP needs at least two representation dimensions")
    ordered = np.sort(scores, axis=1)
    return float((ordered[:, -1] - ordered[:, -2]).mean())


def sap_from_samples(f_train, c_train, f_test, c_test, strength=0.01):
    f_train, f_test = np.asarray(f_train), np.asarray(f_test)
    c_train, c_test = np.asarray(c_train, dtype=np.float64), np.asarray(c_test, dtype=np.float64)
    k, d = f_train.shape[1], c_train.shape[1]
    if d < 2:
        raise InputError("SAP needs at least two representation dimensions")
    matrix = np.zeros((k, d))
    for i in range(k):
        for j in range(d):
            model = fit_linear_low_reg(c_train[:, j:j + 1], f_train[:, i], strength)
            matrix[i, j] = model.score(c_test[:, j:j + 1], f_test[:, i])
    return MetricReport(sap_from_matrix(matrix), {"score_matrix": matrix})


def sap(ground_truth, represent, rng, n_train=10000, n_test=5000, strength=0.01):
    f_train, c_train = sample_codes(ground_truth, represent, n_train, rng)
    f_test, c_test = sample_codes(ground_truth, represent, n_test, rng)
    return sap_from_samples(f_train, c_train, f_test, c_test, strength)


# -- downstream tasks ---------------------------------------------------------

DOWNSTREAM_SIZES = (10, 100, 1000, 10000)


def _fit_downstream(learner, X, y, seed, n_stages=10, depth=2):
    if learner == "logistic":
        return fit_logistic_cv(X, y, folds=min(5, len(y)), n_reg_values=10, seed=seed)
    if learner == "tree":
        return fit_tree_ensemble(X, y, n_stages=n_stages, depth=depth)
    raise InputError(f"unknown downstream learner {learner!r}")


def downstream_from_samples(f_train, c_train, f_test, c_test, learner="logistic",
                            train_sizes=DOWNSTREAM_SIZES, efficiency_sizes=None, seed=0,
                            n_stages=10, depth=2):
    """Mean test accuracy over factors for nested training subsets of each size.

    Efficiency is accuracy at the small size over accuracy at the large one
    (100 and the largest size by default).
    """
    f_train, f_test = np.asarray(f_train), np.asarray(f_test)
    sizes = sorted(int(s) for s in train_sizes)
    if sizes[-1] > len(f_train):
        raise InputError(f"train size {sizes[-1]} exceeds the {len(f_train)} available samples")
    accuracy, degenerate = {}, {}
    for s in sizes:
        accs, flags = [], 0
        for i in range(f_train.shape[1]):
            model = _fit_downstream(learner, c_train[:s], f_train[:s, i], seed, n_stages, depth)
            flags += int(model.degenerate)
            accs.append(model.score(c_test, f_test[:, i]))
        accuracy[s] = float(np.mean(accs))
        degenerate[s] = flags
    small, large = efficiency_sizes or ((100 if 100 in sizes else sizes[0]), sizes[-1])
    efficiency = accuracy[small] / accuracy[large] if accuracy[large] > 0 else float("nan")
    return {"accuracy": accuracy, "efficiency": efficiency, "efficiency_sizes": [small, large],
            "degenerate_fits": degenerate}


def downstream_eval(ground_truth, represent, rng, learner="logistic",
                    train_sizes=DOWNSTREAM_SIZES, n_test=5000, seed=0):
    f_train, c_train = sample_codes(ground_truth, represent, max(train_sizes), rng)
    f_test, c_test = sample_codes(ground_truth, represent, n_test, rng)
    return downstream_from_samples(f_train, c_train, f_test, c_test, learner, train_sizes,
                                   seed=seed)


def efficiency_ratio(acc_small, acc_large):
    return acc_small / acc_large


# -- unsupervised scores ------------------------------------------------------

def unsupervised_scores(model, ground_truth, rng, n=10000, bins=stats.DEFAULT_BINS):
    """Reconstruction, KL, ELBO and TC/MI of mean and sampled codes (per sample, nats)."""
    from .vae import VaeModel  # local import avoids a cycle at module load

    vae = model.model if not isinstance(model, VaeModel) else model
    _, x = ground_truth.sample(n, rng)
    x = x.reshape(n, -1)
    mean, log_var = vae.encode_numpy(x)
    sampled = mean + np.exp(0.5 * log_var) * rng.standard_normal(mean.shape)
    logits = vae.decode_numpy(sampled)
    recon = float((np.maximum(logits, 0) - logits * x + np.log1p(np.exp(-np.abs(logits))))
                  .sum(axis=1).mean())
    kl = float((0.5 * (mean ** 2 + np.exp(log_var) - 1.0 - log_var)).sum(axis=1).mean())
    d = mean.shape[1]
    return {
        "recon": recon,
        "kl": kl,
        "elbo": -(recon + kl),
        "tc_mean": stats.gaussian_total_correlation(mean),
        "tc_sampled": stats.gaussian_total_correlation(sampled),
        "mi_mean": stats.average_pairwise_mi(mean, bins) if d > 1 else 0.0,
        "mi_sampled": stats.average_pairwise_mi(sampled, bins) if d > 1 else 0.0,
    }
