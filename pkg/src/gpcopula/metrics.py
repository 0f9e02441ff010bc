"""Sample-based scoring: pinball loss, CRPS, CRPS-Sum, MSE and MSE-Sum.

CRPS is approximated by averaging twice the pinball loss over the midpoint
quantile levels ``(j - 0.5) / 10``; quantiles are read off the sorted
samples by nearest rank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIDPOINT_LEVELS = tuple((j - 0.5) / 10 for j in range(1, 11))


def pinball(alpha, q, y):
    """``(alpha - 1[y < q]) * (y - q)``, elementwise."""
    q = np.asarray(q, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return (alpha - (y < q)) * (y - q)


def _rank_index(level: float, s: int) -> int:
    return min(max(int(np.ceil(level * s)) - 1, 0), s - 1)


def sample_quantiles(samples, levels=MIDPOINT_LEVELS, axis: int = 0) -> np.ndarray:
    """Nearest-rank quantiles along ``axis``; the level axis replaces it at position 0."""
    samples = np.asarray(samples, dtype=np.float64)
    s = samples.shape[axis]
    if s == 0:
        raise ValueError("empty sample set")
    ordered = np.sort(samples, axis=axis)
    idx = [_rank_index(lv, s) for lv in levels]
    return np.moveaxis(np.take(ordered, idx, axis=axis), axis, 0)


@dataclass
class QuantileForecast:
    levels: np.ndarray
    values: np.ndarray

    @classmethod
    def from_samples(cls, samples, levels=MIDPOINT_LEVELS) -> "QuantileForecast":
        levels = np.asarray(levels, dtype=np.float64)
        if np.any(np.diff(levels) <= 0) or levels[0] <= 0 or levels[-1] >= 1:
            raise ValueError("levels must be strictly ascending inside (0, 1)")
        return cls(levels, sample_quantiles(np.ravel(samples), levels))


def _crps(samples, y, levels, axis=0):
    # mean_k 2*Lambda_k == sum_k c_k (y - q_k) / L^2 with c_k = 2L a_k - 2L 1[y<q_k]; the
    # (integer, for midpoint levels) coefficients of tied quantiles are merged first, so a
    # point mass gives exactly 1.0 * (y - q)
    q = sample_quantiles(samples, levels, axis=axis)  # (L, ...), sorted along L
    n = len(levels)
    w = 2.0 * n * np.asarray(levels, dtype=np.float64)
    w = np.where(np.abs(w - np.rint(w)) < 1e-9, np.rint(w), w)
    total = 0.0
    acc = 0.0
    for k in range(n):
        acc = acc + (w[k] - 2.0 * n * (y < q[k]))
        if k + 1 < n:
            tied = q[k + 1] == q[k]
            total = total + np.where(tied, 0.0, (acc / (n * n)) * (y - q[k]))
            acc = np.where(tied, acc, 0.0)
        else:
            total = total + (acc / (n * n)) * (y - q[k])
    return total


def crps_from_samples(samples, y, levels=MIDPOINT_LEVELS) -> float:
    samples = np.ravel(np.asarray(samples, dtype=np.float64))
    if samples.size == 0:
        raise ValueError("empty sample set")
    return float(_crps(samples, float(y), levels))


def _as_samples(fc) -> np.ndarray:
    samples = getattr(fc, "samples", fc)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3:
        raise ValueError("forecast samples must have shape (S, N, tau)")
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    return samples


def _check(samples, actuals):
    actuals = np.asarray(actuals, dtype=np.float64)
    if actuals.shape != samples.shape[1:]:
        raise ValueError(f"actuals shape {actuals.shape} does not match forecast {samples.shape[1:]}")
    return actuals


def crps_marginal(fc, actuals, levels=MIDPOINT_LEVELS) -> float:
    """Mean CRPS over every (series, step) cell."""
    samples = _as_samples(fc)
    actuals = _check(samples, actuals)
    return float(np.mean(_crps(samples, actuals, levels)))


def crps_sum(fc, actuals, levels=MIDPOINT_LEVELS) -> float:
    """CRPS of the series-summed forecast against the summed actuals, averaged over steps."""
    samples = _as_samples(fc)
    actuals = _check(samples, actuals)
    return float(np.mean(_crps(samples.sum(axis=1), actuals.sum(axis=0), levels)))


def mse(fc, actuals) -> float:
    samples = _as_samples(fc)
    actuals = _check(samples, actuals)
    return float(np.mean((samples.mean(axis=0) - actuals) ** 2))


def mse_sum(fc, actuals) -> float:
    samples = _as_samples(fc)
    actuals = _check(samples, actuals)
    return float(np.mean((samples.sum(axis=1).mean(axis=0) - actuals.sum(axis=0)) ** 2))


def evaluate(fc, actuals, levels=MIDPOINT_LEVELS) -> dict:
    """All four scores for one forecast window."""
    samples = _as_samples(fc)
    return {
        "crps": crps_marginal(samples, actuals, levels),
        "crps_sum": crps_sum(samples, actuals, levels),
        "mse": mse(samples, actuals),
        "mse_sum": mse_sum(samples, actuals),
    }


def summarize(window_scores: list[dict], num_samples: int, horizon: int) -> dict:
    """Average per-window scores into the metrics report."""
    if not window_scores:
        raise ValueError("no evaluation windows")
    out = {k: float(np.mean([w[k] for w in window_scores])) for k in ("crps", "crps_sum", "mse", "mse_sum")}
    out.update(num_samples=int(num_samples), horizon=int(horizon), windows=len(window_scores))
    return out
