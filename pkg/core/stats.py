import logging
from typing import NamedTuple

import numpy as np
from scipy.special import betainc
from scipy.stats import rankdata

from models import CorrelationMethod, CorrelationReport, Graph, ValidationError

logger = logging.getLogger(__name__)


class Correlation(NamedTuple):
    r: float
    p_value: float
    degenerate: bool = False


def p_value_from_r(r, n: int) -> np.ndarray:
    """Two-sided p-value of t = r·sqrt((n-2)/(1-r²)) under Student-t with n-2 dof.

    Uses P(|T| > |t|) = I_{df/(df+t²)}(df/2, 1/2), which for this t reduces to
    I_{1-r²}(df/2, 1/2); |r| = 1 gives 0.
    """
    r = np.clip(np.asarray(r, dtype=np.float64), -1.0, 1.0)
    df = n - 2
    return betainc(0.5 * df, 0.5, 1.0 - r * r)


def _pearson_columns(X: np.ndarray, s: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    n = X.shape[0]
    if n < 3:
        raise ValidationError(f"correlation needs at least 3 samples, got {n}")
    if s.shape != (n,):
        raise ValidationError(f"sensitive vector length {s.shape} does not match {n} samples")

    degenerate = (np.ptp(X, axis=0) == 0) | (np.ptp(s) == 0)
    xc = X - X.mean(axis=0)
    sc = s - s.mean()
    num = xc.T @ sc
    den = np.sqrt(np.einsum('ij,ij->j', xc, xc) * (sc @ sc))
    with np.errstate(invalid='ignore', divide='ignore'):
        r = np.where(degenerate, 0.0, num / np.where(degenerate, 1.0, den))
    r = np.clip(r, -1.0, 1.0)
    p = np.where(degenerate, 1.0, p_value_from_r(r, n))
    return r, p, degenerate


def _rank_columns(X: np.ndarray) -> np.ndarray:
    return rankdata(np.asarray(X, dtype=np.float64), method='average', axis=0)


def pearson(x, s) -> Correlation:
    r, p, degenerate = _pearson_columns(np.asarray(x, dtype=np.float64).reshape(-1, 1), s)
    return Correlation(float(r[0]), float(p[0]), bool(degenerate[0]))


def spearman(x, s) -> Correlation:
    """Pearson correlation of mid-ranks, with the same p-value formula."""
    x = np.asarray(x, dtype=np.float64)
    return pearson(_rank_columns(x), _rank_columns(np.asarray(s, dtype=np.float64)))


def correlate_columns(X: np.ndarray, s: np.ndarray, method: CorrelationMethod):
    if method is CorrelationMethod.SPEARMAN:
        return _pearson_columns(_rank_columns(X), _rank_columns(s))
    return _pearson_columns(X, s)


def feature_correlation_report(g: Graph, method: CorrelationMethod = CorrelationMethod.PEARSON) -> CorrelationReport:
    r, p, degenerate = correlate_columns(g.features, g.sensitive, method)
    if degenerate.any():
        logger.warning(f"{int(degenerate.sum())} zero-variance feature columns treated as uncorrelated (r=0, p=1)")
    return CorrelationReport(method=method, r=r, p_uncorr=p, degenerate=degenerate, n_samples=g.n_nodes)


def total_correlation(X: np.ndarray, s: np.ndarray) -> float:
    """ρ = Σ|r_i| with Pearson coefficients; degenerate columns contribute 0."""
    r, _, _ = _pearson_columns(X, s)
    return float(np.abs(r).sum())
