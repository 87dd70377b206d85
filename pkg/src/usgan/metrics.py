"""GAN-quality and classification metrics.

Inception-style score over split KL divergences, Fréchet distance between
feature Gaussians (with a symmetric-eigendecomposition matrix square
root), weighted classification metrics and the paired t-test backing the
significance claims.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .tensor import Tensor


@dataclass
class MetricsReport:
    is_mean: dict = field(default_factory=dict)  # class -> mean
    is_std: dict = field(default_factory=dict)
    fid: dict = field(default_factory=dict)
    accuracy: float = float("nan")
    precision: float = float("nan")
    recall: float = float("nan")
    f1: float = float("nan")
    t_statistic: float = float("nan")
    degrees_of_freedom: int = 0
    p_value: float = float("nan")


def inception_score(probs, n_splits=10):
    """exp of the mean KL(p(y|x) || p(y)) per contiguous split.

    Returns (mean, population std) across splits."""
    probs = np.asarray(probs, dtype=np.float64)
    n, _ = probs.shape
    if n < n_splits:
        raise ValueError(f"need at least n_splits={n_splits} rows, got {n}")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-5):
        raise ValueError("class-probability rows must sum to 1")
    scores = []
    for part in np.array_split(np.arange(n), n_splits):
        p = probs[part]
        marginal = p.mean(axis=0, keepdims=True)
        kl = (p * (np.log(np.maximum(p, 1e-16)) - np.log(np.maximum(marginal, 1e-16)))).sum(
            axis=1
        )
        scores.append(np.exp(kl.mean()))
    scores = np.asarray(scores)
    return float(scores.mean()), float(scores.std())


def default_split_count(n):
    """10 splits for large pools, fewer at desk scale."""
    return 10 if n >= 400 else max(2, n // 50)


def sqrtm_psd(a, tol=1e-8):
    """Principal square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues in [-tol, 0) are clamped to zero; asymmetry beyond ``tol``
    is an error."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got {a.shape}")
    if np.abs(a - a.T).max() > tol:
        raise ValueError("matrix is not symmetric within tolerance")
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def _moments(x, shrinkage=1e-6):
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise ValueError(f"need at least 2 samples per side, got {n}")
    mu = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1).reshape(d, d)
    if n < d + 1:
        cov = cov + shrinkage * np.eye(d)
    return mu, cov


def frechet_distance(real, fake):
    """Fréchet distance between Gaussians fit to the two feature matrices.

    ||mu1-mu2||^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2), clamped at 0."""
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    if real.shape[1] != fake.shape[1]:
        raise ValueError(
            f"feature dimensions differ: {real.shape[1]} vs {fake.shape[1]}"
        )
    mu1, s1 = _moments(real)
    mu2, s2 = _moments(fake)
    rs1 = sqrtm_psd(s1)
    inner = sqrtm_psd(rs1 @ s2 @ rs1, tol=1e-6)
    diff = mu1 - mu2
    fid = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(inner))
    return max(fid, 0.0)


def feature_extract(net, images, batch_size=64):
    """Eval-mode penultimate activations and class probabilities.

    Returns (features (n,d), probs (n,k))."""
    feats, probs = [], []
    for i in range(0, images.shape[0], batch_size):
        f, logits = net(
            Tensor(images[i : i + batch_size]), training=False, return_features=True
        )
        feats.append(f.data)
        probs.append(logits.softmax(axis=1).data)
    return np.concatenate(feats), np.concatenate(probs)


def classification_report(preds, truth):
    """Accuracy plus support-weighted precision/recall/F1 for binary labels."""
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {truth.shape}")
    n = truth.size
    accuracy = float(np.mean(preds == truth))
    precisions, recalls, f1s, weights = [], [], [], []
    for cls in (0, 1):
        tp = np.sum((preds == cls) & (truth == cls))
        fp = np.sum((preds == cls) & (truth != cls))
        fn = np.sum((preds != cls) & (truth == cls))
        support = np.sum(truth == cls)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)
        weights.append(support / n)
    weights = np.asarray(weights)
    return (
        accuracy,
        float(np.dot(weights, precisions)),
        float(np.dot(weights, recalls)),
        float(np.dot(weights, f1s)),
    )


def macro_report(preds, truth):
    """Unweighted class-average precision/recall/F1 (emitted alongside the
    weighted numbers for transparency)."""
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    stats = []
    for cls in (0, 1):
        tp = np.sum((preds == cls) & (truth == cls))
        fp = np.sum((preds == cls) & (truth != cls))
        fn = np.sum((preds != cls) & (truth == cls))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        stats.append((prec, rec, f1))
    return tuple(float(np.mean([s[i] for s in stats])) for i in range(3))


class DegenerateTTest(ValueError):
    pass


def paired_t_test(a, b):
    """Two-tailed paired t-test; p-value via the regularized incomplete
    beta function.  Returns (t, df, p)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("paired t-test needs two equal-length vectors, k >= 2")
    d = a - b
    k = d.size
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise DegenerateTTest("degenerate: zero variance of differences")
    t = d.mean() / (sd / np.sqrt(k))
    df = k - 1
    # P(|T| > t) for Student's t: I_{df/(df+t^2)}(df/2, 1/2)
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return float(t), df, p
