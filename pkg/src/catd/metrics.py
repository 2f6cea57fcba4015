"""Evaluation metrics and the k-fold classification harness.

Spatial quality: RMSE and windowed SSIM on frames. Temporal quality:
per-cell cosine similarity and concordance correlation. SNR separates a
moving-average trend from its residual. Classification scores generated
signals with stratified k-fold logistic regression.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InputError, UndefinedMetricError


def _as_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InputError("metric inputs must be finite")
    return a, b


def rmse(a, b) -> float:
    a, b = _as_pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def ssim(a, b, dynamic_range: float | None = None, win: int = 8) -> float:
    """Mean windowed SSIM, uniform win x win window, stride 1.

    C1 = (0.01 L)^2 and C2 = (0.03 L)^2 with L the joint dynamic range
    of the pair unless supplied.
    """
    a, b = _as_pair(a, b)
    if a.ndim != 2:
        raise InputError("ssim expects 2-D frames")
    if min(a.shape) < win:
        raise InputError(f"frame {a.shape} smaller than the {win}x{win} window")
    if dynamic_range is None:
        dynamic_range = float(max(a.max(), b.max()) - min(a.min(), b.min()))
    if dynamic_range == 0.0:
        dynamic_range = 1.0
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2

    wa = np.lib.stride_tricks.sliding_window_view(a, (win, win))
    wb = np.lib.stride_tricks.sliding_window_view(b, (win, win))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = wa.var(axis=(-2, -1))
    var_b = wb.var(axis=(-2, -1))
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


def cosine_per_cell(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell cosine similarities and a validity mask (zero-norm cells
    are invalid)."""
    a, b = _as_pair(a, b)
    if a.ndim == 1:
        a, b = a[None], b[None]
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    valid = (na > 0) & (nb > 0)
    vals = np.zeros(a.shape[0])
    vals[valid] = np.sum(a[valid] * b[valid], axis=1) / (na[valid] * nb[valid])
    return vals, valid


def cosine_similarity_ts(a, b) -> float:
    """Cell-averaged cosine similarity of (cells, time) series."""
    vals, valid = cosine_per_cell(a, b)
    if not valid.any():
        raise UndefinedMetricError("all cells have zero norm; cosine undefined")
    return float(vals[valid].mean())


def _ccc_1d(a: np.ndarray, b: np.ndarray) -> float:
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(), b.var()  # population moments
    cov = np.mean((a - ma) * (b - mb))
    denom = va + vb + (ma - mb) ** 2
    if denom == 0.0:
        return 1.0  # both constant with equal means
    return float(2.0 * cov / denom)


def ccc(a, b) -> float:
    """Concordance correlation; per-cell then cell-averaged for 2-D input."""
    a, b = _as_pair(a, b)
    if a.ndim == 1:
        if a.size < 2:
            raise InputError("ccc needs series of length >= 2")
        return _ccc_1d(a, b)
    if a.shape[1] < 2:
        raise InputError("ccc needs series of length >= 2")
    return float(np.mean([_ccc_1d(ra, rb) for ra, rb in zip(a, b)]))


def pearson(a, b) -> float:
    a, b = _as_pair(a, b)
    return float(np.corrcoef(a.ravel(), b.ravel())[0, 1])


SNR_CAP_DB = 120.0


class SnrEstimate(NamedTuple):
    db: float
    capped: bool


def snr_db(series, window: int = 5) -> SnrEstimate:
    """10 log10 of trend power over residual power.

    Trend = centered moving average (edges truncated); residual = series
    minus trend. Zero residual power reports the 120 dB cap with a flag.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or series.size < window:
        raise InputError(f"snr_db needs a 1-D series of length >= {window}")
    kernel = np.ones(window)
    trend = np.convolve(series, kernel, mode="same") / np.convolve(
        np.ones(series.size), kernel, mode="same"
    )
    noise = series - trend
    p_noise = float(np.mean(noise**2))
    if p_noise == 0.0:
        return SnrEstimate(SNR_CAP_DB, True)
    p_signal = float(np.mean(trend**2))
    return SnrEstimate(10.0 * np.log10(p_signal / p_noise), False)


@dataclass
class MetricReport:
    rmse: float
    ssim: float
    cosine_similarity: float
    ccc: float
    snr_db_real: float
    snr_db_synthetic: float
    snr_real_capped: bool = False
    snr_synthetic_capped: bool = False

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "ssim": self.ssim,
            "cosine_similarity": self.cosine_similarity,
            "ccc": self.ccc,
            "snr_db_real": self.snr_db_real,
            "snr_db_synthetic": self.snr_db_synthetic,
            "snr_real_capped": self.snr_real_capped,
            "snr_synthetic_capped": self.snr_synthetic_capped,
        }


@dataclass
class CVResult:
    acc: float
    pre: float
    sen: float
    f1: float
    fold_acc: list[float]
    fold_pre: list[float]
    fold_sen: list[float]
    fold_f1: list[float]
    fold_assignments: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "pre": self.pre,
            "sen": self.sen,
            "f1": self.f1,
            "fold_acc": self.fold_acc,
            "fold_pre": self.fold_pre,
            "fold_sen": self.fold_sen,
            "fold_f1": self.fold_f1,
        }


def _to_binary(labels) -> np.ndarray:
    labels = np.asarray(labels)
    uniq = sorted(set(labels.tolist()))
    if len(uniq) < 2:
        raise InputError("classification needs two classes in the labels")
    if len(uniq) > 2:
        raise InputError(f"expected binary labels, got classes {uniq}")
    if "task" in uniq:
        return (labels == "task").astype(np.float64)
    return (labels == uniq[1]).astype(np.float64)


def _fit_logistic(x, y, l2=1e-3, lr=0.2, iters=500):
    # Full-batch gradient descent on standardized features.
    w = np.zeros(x.shape[1])
    b = 0.0
    n = x.shape[0]
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        err = p - y
        w -= lr * (x.T @ err / n + l2 * w)
        b -= lr * float(err.mean())
    return w, b


def classify_kfold(features, labels, k: int = 5, seed: int = 0) -> CVResult:
    """Stratified k-fold logistic regression, positive class = task."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise InputError("features must be (samples, dims)")
    y = _to_binary(labels)
    for cls in (0.0, 1.0):
        if int((y == cls).sum()) < k:
            raise InputError(f"need at least {k} samples per class")

    rng = np.random.default_rng(seed)
    assign = np.empty(len(y), dtype=np.int64)
    for cls in (0.0, 1.0):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        assign[idx] = np.arange(len(idx)) % k

    fold_acc, fold_pre, fold_sen, fold_f1 = [], [], [], []
    for fold in range(k):
        test = assign == fold
        mu = x[~test].mean(axis=0)
        sd = x[~test].std(axis=0)
        sd[sd == 0] = 1.0
        w, b = _fit_logistic((x[~test] - mu) / sd, y[~test])
        pred = (((x[test] - mu) / sd) @ w + b) >= 0.0
        truth = y[test] == 1.0
        tp = int(np.sum(pred & truth))
        fp = int(np.sum(pred & ~truth))
        fn = int(np.sum(~pred & truth))
        acc = float(np.mean(pred == truth))
        pre = tp / (tp + fp) if tp + fp else 0.0
        sen = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * pre * sen / (pre + sen) if pre + sen else 0.0
        fold_acc.append(acc)
        fold_pre.append(pre)
        fold_sen.append(sen)
        fold_f1.append(f1)

    return CVResult(
        acc=float(np.mean(fold_acc)),
        pre=float(np.mean(fold_pre)),
        sen=float(np.mean(fold_sen)),
        f1=float(np.mean(fold_f1)),
        fold_acc=fold_acc,
        fold_pre=fold_pre,
        fold_sen=fold_sen,
        fold_f1=fold_f1,
        fold_assignments=assign,
    )
