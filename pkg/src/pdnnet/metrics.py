"""Evaluation metrics for predicted vs. reference IR drop maps.

Degenerate cases (constant label or constant prediction where a metric is
undefined) return NaN with a RuntimeWarning rather than raising.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
HOTSPOT_QUANTILE = 0.9

# report column order
METRIC_COLUMNS = ("NMAE", "R2", "PSNR", "SSIM", "Pear", "Spea", "Kend", "AUC")


@dataclass(frozen=True)
class MetricsReport:
    nmae: float
    r2: float
    psnr_db: float
    ssim: float
    pearson: float
    spearman: float
    kendall: float
    auc: float

    def row(self) -> tuple[float, ...]:
        return tuple(asdict(self).values())


def _pair(pred, label) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float)
    t = np.asarray(label, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs label {t.shape}")
    return p, t


def _undefined(name: str) -> float:
    warnings.warn(f"{name} undefined for constant input; reporting NaN", RuntimeWarning, stacklevel=3)
    return math.nan


def nmae(pred, label) -> float:
    p, t = _pair(pred, label)
    span = t.max() - t.min()
    if span <= 0:
        return _undefined("NMAE")
    return float(np.mean(np.abs(p - t)) / span)


def r2(pred, label) -> float:
    p, t = _pair(pred, label)
    ss_tot = np.sum((t - t.mean()) ** 2)
    if ss_tot <= 0:
        return _undefined("R2")
    return float(1.0 - np.sum((t - p) ** 2) / ss_tot)


def psnr(pred, label, peak: float = 1.0) -> float:
    p, t = _pair(pred, label)
    mse = float(np.mean((p - t) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak**2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def _ssim_from_moments(mu_p, mu_t, var_p, var_t, cov):
    return ((2 * mu_p * mu_t + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_p**2 + mu_t**2 + SSIM_C1) * (var_p + var_t + SSIM_C2)
    )


def ssim(pred, label) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    Borders use symmetric padding.  A map smaller than the window in either
    dimension is scored with one uniform window covering the whole map.
    """
    p, t = _pair(pred, label)
    if p.ndim != 2:
        raise ValueError("ssim expects 2-D maps")
    if min(p.shape) < SSIM_WINDOW:
        mu_p, mu_t = p.mean(), t.mean()
        var_p = np.mean((p - mu_p) ** 2)
        var_t = np.mean((t - mu_t) ** 2)
        cov = np.mean((p - mu_p) * (t - mu_t))
        return float(_ssim_from_moments(mu_p, mu_t, var_p, var_t, cov))

    w = gaussian_window()

    def blur(a):
        # scipy's "reflect" repeats the edge sample, i.e. symmetric padding
        return correlate1d(correlate1d(a, w, axis=0, mode="reflect"), w, axis=1, mode="reflect")

    mu_p, mu_t = blur(p), blur(t)
    var_p = blur(p * p) - mu_p**2
    var_t = blur(t * t) - mu_t**2
    cov = blur(p * t) - mu_p * mu_t
    return float(np.mean(_ssim_from_moments(mu_p, mu_t, var_p, var_t, cov)))


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=float).ravel()
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    boundaries = np.flatnonzero(np.diff(xs) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(xs)]])
    ranks = np.empty(len(x))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    return ranks


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    if den == 0:
        return _undefined("Pearson")
    return float(np.clip(np.sum(da * db) / den, -1.0, 1.0))


def spearman(a, b) -> float:
    return pearson(average_ranks(a), average_ranks(b))


def kendall_tau_b(a, b, block: int = 512) -> float:
    """Tie-corrected Kendall tau over all pairs."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n = len(a)
    s = n0_a = n0_b = 0
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        da = np.sign(a[lo:hi, None] - a[None, :])
        db = np.sign(b[lo:hi, None] - b[None, :])
        s += int(np.sum(da * db))
        n0_a += int(np.count_nonzero(da))
        n0_b += int(np.count_nonzero(db))
    # every unordered pair was counted twice
    if n0_a == 0 or n0_b == 0:
        return _undefined("Kendall")
    return float(np.clip(s / math.sqrt(n0_a * n0_b), -1.0, 1.0))


def correlations(pred, label) -> tuple[float, float, float]:
    p, t = _pair(pred, label)
    if p.size < 2:
        raise ValueError("correlations need at least 2 values")
    return pearson(p, t), spearman(p, t), kendall_tau_b(p, t)


def auc_hotspot(pred, label, q: float = HOTSPOT_QUANTILE) -> float:
    """ROC AUC of ``pred`` scores against hotspots ``label > quantile(label, q)``."""
    p, t = _pair(pred, label)
    positive = t.ravel() > np.quantile(t, q)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return _undefined("AUC")
    ranks = average_ranks(p)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate_maps(pred, label) -> MetricsReport:
    p, t = _pair(pred, label)
    pear, spea, kend = correlations(p, t)
    return MetricsReport(
        nmae=nmae(p, t),
        r2=r2(p, t),
        psnr_db=psnr(p, t),
        ssim=ssim(p, t),
        pearson=pear,
        spearman=spea,
        kendall=kend,
        auc=auc_hotspot(p, t),
    )


def mean_report(reports: list[MetricsReport]) -> tuple[MetricsReport, dict[str, int]]:
    """Column means ignoring NaN entries, plus the count excluded per column."""
    if not reports:
        raise ValueError("no reports to average")
    arr = np.array([r.row() for r in reports], dtype=float)
    names = list(asdict(reports[0]).keys())
    excluded = {n: int(np.isnan(arr[:, k]).sum()) for k, n in enumerate(names)}
    means = []
    for k in range(arr.shape[1]):
        col = arr[:, k][~np.isnan(arr[:, k])]
        means.append(float(col.mean()) if col.size else math.nan)
    return MetricsReport(*means), excluded
