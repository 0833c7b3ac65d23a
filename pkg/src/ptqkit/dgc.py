"""Calibration-set selection by Mahalanobis distributional entropy.

Candidate samples are reduced to feature vectors, scored by their
Mahalanobis distance to the pool statistics (mean, ridge-regularized
covariance), and the top fraction by score is kept. Redundant
near-duplicate samples cluster near the pool mean and score low, so they
are the first to be dropped.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

DEFAULT_RIDGE_SCALE = 1e-6
_MIN_RIDGE = 1e-12


class FeatureReduce(enum.Enum):
    MEAN = "mean"
    MEAN_STD = "meanstd"


@dataclass(frozen=True)
class CalibStats:
    """Pool mean, covariance, ridge, and regularized precision matrix."""

    mean: np.ndarray
    cov: np.ndarray
    ridge: float
    precision: np.ndarray


def _feature_matrix(features):
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.ndim != 2:
        raise ConfigError(f"features must be [samples, dims], got rank {f.ndim}")
    if not np.isfinite(f).all():
        raise NumericError("features contain non-finite values")
    return f


def extract_features(x, reduce=FeatureReduce.MEAN):
    """Reduce [S, T, n] activations to one feature vector per sample.

    MEAN gives the per-channel token means (d = n); MEAN_STD appends the
    per-channel token standard deviations (d = 2n).
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ConfigError(f"activations must be [samples, tokens, channels], got rank {x.ndim}")
    reduce = FeatureReduce(reduce)
    x64 = x.astype(np.float64)
    means = x64.mean(axis=1)
    if reduce is FeatureReduce.MEAN:
        return means
    return np.concatenate([means, x64.std(axis=1)], axis=1)


def fit_set_stats(features, ridge_scale=DEFAULT_RIDGE_SCALE):
    """Mean and unbiased covariance of the pool, with ridge lambda =
    ridge_scale * trace(S)/d (forced positive when S collapses to zero)."""
    f = _feature_matrix(features)
    n, d = f.shape
    if n < 2:
        raise ConfigError(f"need at least 2 samples to fit statistics, got {n}")
    if ridge_scale < 0:
        raise ConfigError(f"ridge_scale must be >= 0, got {ridge_scale}")
    mean = f.mean(axis=0)
    centered = f - mean
    cov = centered.T @ centered / (n - 1)
    trace = float(np.trace(cov))
    ridge = ridge_scale * trace / d
    if trace == 0.0:
        ridge = max(ridge, _MIN_RIDGE)
    try:
        precision = np.linalg.inv(cov + ridge * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"covariance not invertible (ridge={ridge}); increase ridge_scale"
        ) from exc
    return CalibStats(mean=mean, cov=cov, ridge=float(ridge), precision=precision)


def mahalanobis_entropy(x, stats):
    """sqrt((x - u)^T P (x - u)) with the regularized precision P."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != stats.mean.shape:
        raise ConfigError(f"feature dim {x.shape[0]} != stats dim {stats.mean.shape[0]}")
    d = x - stats.mean
    return math.sqrt(max(float(d @ stats.precision @ d), 0.0))


def _scores(f, stats):
    centered = f - stats.mean
    q = np.einsum("nd,de,ne->n", centered, stats.precision, centered)
    return np.sqrt(np.maximum(q, 0.0))


def select_calibration(features, fraction, stats):
    """Indices of the ceil(fraction * N) highest-entropy samples.

    Ties break toward the lower index; the result is sorted ascending.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    f = _feature_matrix(features)
    if f.shape[1] != stats.mean.shape[0]:
        raise ConfigError(f"feature dim {f.shape[1]} != stats dim {stats.mean.shape[0]}")
    rho = _scores(f, stats)
    keep = math.ceil(fraction * f.shape[0])
    ranked = sorted(range(f.shape[0]), key=lambda i: (-rho[i], i))[:keep]
    return sorted(ranked)
