import logging
from typing import List

import numpy as np
from scipy.special import expit
from sklearn.metrics import accuracy_score
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from core import rng
from core.contrastive import embed
from models import (EncoderParams, FairAugError, FairnessReport, Graph, LogisticModel, MetricSummary,
                    Split, SplitResult, StructuralError, UndefinedMetricError, ValidationError)

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-6
MAX_ITERATIONS = 5000
ARMIJO_C = 1e-4


def split_nodes(n: int, fraction: float, seed: int) -> Split:
    """Uniform random train/test partition with round(fraction·n) training nodes."""
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"train fraction must lie in (0, 1), got {fraction}")
    n_train = int(round(fraction * n))
    if n_train < 1 or n_train >= n:
        raise ValidationError(f"train fraction {fraction} on {n} nodes leaves an empty train or test set")
    train_idx, test_idx = train_test_split(np.arange(n), train_size=n_train, random_state=int(seed) % 2 ** 32)
    return Split(train_idx=np.sort(train_idx), test_idx=np.sort(test_idx), seed=int(seed),
                 train_fraction=float(fraction))


def logistic_objective(weights: np.ndarray, bias: float, h: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean log-loss + (l2/2)·‖w‖²; the bias is not penalized."""
    margin = h @ weights + bias
    signed = np.where(y == 1, margin, -margin)
    return float(np.mean(np.logaddexp(0.0, -signed)) + 0.5 * l2 * weights @ weights)


def _objective_gradient(weights, bias, h, y, l2):
    residual = expit(h @ weights + bias) - y
    return h.T @ residual / len(y) + l2 * weights, float(residual.mean())


def train_logistic(h_train: np.ndarray, y_train: np.ndarray, l2: float = 1.0) -> LogisticModel:
    """Full-batch gradient descent with Armijo backtracking.

    Stops when the gradient norm drops below 1e-6 or after 5000 iterations. A
    single-class training set yields a constant classifier.
    """
    h = np.asarray(h_train, dtype=np.float64)
    y = np.asarray(y_train, dtype=np.float64)
    if l2 < 0:
        raise ValidationError(f"l2 strength must be non-negative, got {l2}")
    if len(y) == 0:
        raise ValidationError("cannot train a classifier on an empty training set")
    classes = np.unique(y)
    if classes.size < 2:
        label = int(classes[0])
        logger.warning(f"training set contains only class {label}; using a constant classifier")
        return LogisticModel(weights=np.zeros(h.shape[1]), bias=1.0 if label == 1 else -1.0,
                             n_iter=0, converged=True, degenerate=True)

    w = np.zeros(h.shape[1])
    b = 0.0
    step = 1.0
    f = logistic_objective(w, b, h, y, l2)
    converged = False
    iteration = 0
    for iteration in range(1, MAX_ITERATIONS + 1):
        gw, gb = _objective_gradient(w, b, h, y, l2)
        sq_norm = float(gw @ gw + gb * gb)
        if np.sqrt(sq_norm) < GRADIENT_TOLERANCE:
            converged = True
            break
        step = min(step * 2.0, 1e6)
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            f_new = logistic_objective(w_new, b_new, h, y, l2)
            if f_new <= f - ARMIJO_C * step * sq_norm or step < 1e-16:
                break
            step *= 0.5
        w, b, f = w_new, b_new, f_new
    if not converged:
        logger.warning(f"logistic regression stopped after {MAX_ITERATIONS} iterations without converging")
    return LogisticModel(weights=w, bias=float(b), n_iter=iteration, converged=converged)


def predict(model: LogisticModel, h: np.ndarray) -> np.ndarray:
    """ŷ = 1 iff sigmoid(w·h + b) ≥ 0.5, i.e. the margin is non-negative."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[1] != model.weights.shape[0]:
        raise StructuralError(f"embedding dim {h.shape[1]} does not match classifier dim {model.weights.shape[0]}")
    return (h @ model.weights + model.bias >= 0.0).astype(np.int8)


def statistical_parity(yhat: np.ndarray, s: np.ndarray) -> float:
    """|P(ŷ=1 | s=0) - P(ŷ=1 | s=1)|."""
    yhat, s = np.asarray(yhat), np.asarray(s)
    rates = []
    for group in (0, 1):
        members = yhat[s == group]
        if members.size == 0:
            raise UndefinedMetricError(f"statistical parity undefined: sensitive group s={group} is empty")
        rates.append(np.mean(members == 1))
    return float(abs(rates[0] - rates[1]))


def equal_opportunity(yhat: np.ndarray, y: np.ndarray, s: np.ndarray) -> float:
    """|P(ŷ=1 | y=1, s=0) - P(ŷ=1 | y=1, s=1)|."""
    yhat, y, s = np.asarray(yhat), np.asarray(y), np.asarray(s)
    rates = []
    for group in (0, 1):
        members = yhat[(y == 1) & (s == group)]
        if members.size == 0:
            raise UndefinedMetricError(f"equal opportunity undefined: no positive labels with s={group}")
        rates.append(np.mean(members == 1))
    return float(abs(rates[0] - rates[1]))


def _summary(values: List[float]) -> MetricSummary:
    if not values:
        return MetricSummary(mean=float('nan'), std=float('nan'))
    arr = 100.0 * np.asarray(values)
    return MetricSummary(mean=float(arr.mean()), std=float(arr.std()))


def evaluate_split(h: np.ndarray, g: Graph, split: Split, l2: float, index: int = 0) -> SplitResult:
    result = SplitResult(index=index, seed=split.seed)
    scaler = StandardScaler().fit(h[split.train_idx])
    model = train_logistic(scaler.transform(h[split.train_idx]), g.labels[split.train_idx], l2)
    test_h = scaler.transform(h[split.test_idx])
    yhat = predict(model, test_h)
    y_test, s_test = g.labels[split.test_idx], g.sensitive[split.test_idx]
    result.accuracy = float(accuracy_score(y_test, yhat))
    result.delta_sp = statistical_parity(yhat, s_test)
    result.delta_eo = equal_opportunity(yhat, y_test, s_test)
    return result


def evaluate_embeddings(h: np.ndarray, g: Graph, n_splits: int = 3, fraction: float = 0.9,
                        l2: float = 1.0, seed: int = 0) -> FairnessReport:
    if g.labels is None:
        raise ValidationError("evaluation needs node labels")
    if n_splits < 1:
        raise ValidationError(f"n_splits must be at least 1, got {n_splits}")
    results = []
    for k in range(n_splits):
        split_seed = rng.derive_seed(seed, rng.SPLIT, k)
        try:
            split = split_nodes(g.n_nodes, fraction, split_seed)
            results.append(evaluate_split(h, g, split, l2, index=k))
        except FairAugError as e:
            logger.warning(f"evaluation split {k} failed: {e}")
            results.append(SplitResult(index=k, seed=split_seed, error=str(e)))
    ok = [r for r in results if r.ok]
    return FairnessReport(
        accuracy=_summary([r.accuracy for r in ok]),
        delta_sp=_summary([r.delta_sp for r in ok]),
        delta_eo=_summary([r.delta_eo for r in ok]),
        n_splits=n_splits,
        splits=results,
    )


def evaluate_pipeline(g: Graph, params: EncoderParams, n_splits: int = 3, fraction: float = 0.9,
                      l2: float = 1.0, seed: int = 0) -> FairnessReport:
    """Embed once, then train/test a logistic classifier on each split; metrics use test nodes only."""
    if params.dims.n_features != g.n_features:
        raise StructuralError(f"encoder expects {params.dims.n_features} features, graph has {g.n_features}")
    return evaluate_embeddings(embed(params, g).h, g, n_splits, fraction, l2, seed)
