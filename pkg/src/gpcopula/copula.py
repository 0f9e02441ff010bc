"""Nonparametric marginal transforms ``x = Phi^-1(F(z))``.

Each series gets a linearly interpolated empirical CDF built from its ``m``
most recent observations, clamped to ``[delta_m, 1 - delta_m]`` so that the
normal quantile stays finite. The interpolation puts level ``(k - 1/2)/m`` on
the k-th order statistic, which makes the median map to 0 and the slope
between neighbouring order statistics ``1 / (m * gap)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from gpcopula.errors import DataError, NumericalError

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def truncation_delta(m: int) -> float:
    """Clamp level ``1 / (4 m^(1/4) sqrt(pi log m))`` for an m-sample ECDF."""
    if m < 2:
        raise ValueError("m must be >= 2")
    return 1.0 / (4.0 * m ** 0.25 * math.sqrt(math.pi * math.log(m)))


def std_normal_cdf(x):
    return special.ndtr(x)


def std_normal_quantile(u):
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any((u_arr <= 0.0) | (u_arr >= 1.0)) or np.any(np.isnan(u_arr)):
        raise ValueError("normal quantile needs u strictly inside (0, 1)")
    return special.ndtri(u)


def std_normal_logpdf(x):
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * x * x - HALF_LOG_2PI


@dataclass(frozen=True)
class EmpiricalCdf:
    sorted_values: np.ndarray
    delta: float
    jitter_scale: float = 0.0

    @property
    def m(self) -> int:
        return self.sorted_values.shape[0]

    @property
    def levels(self) -> np.ndarray:
        return (np.arange(1, self.m + 1) - 0.5) / self.m

    @property
    def support(self) -> tuple[float, float]:
        return float(self.sorted_values[0]), float(self.sorted_values[-1])


def fit_ecdf(values, m: int, jitter_scale: float = 0.0, rng=None) -> EmpiricalCdf:
    """Fit on the last ``m`` entries of ``values``.

    With ``jitter_scale > 0`` each value gets uniform noise in
    ``[0, jitter_scale)`` before sorting, which breaks ties in count data.
    """
    values = np.asarray(values, dtype=np.float64)
    if m < 2:
        raise ValueError("m must be >= 2")
    if values.ndim != 1 or values.shape[0] < m:
        raise DataError(f"need at least m={m} observations, got {values.shape[0]}")
    if not np.all(np.isfinite(values)):
        raise DataError("ECDF input contains non-finite values")
    window = values[-m:].copy()
    if jitter_scale > 0:
        if rng is None:
            raise ValueError("jitter needs a random generator")
        window += rng.uniform(0.0, jitter_scale, size=m)
    return EmpiricalCdf(np.sort(window), truncation_delta(m), float(jitter_scale))


def ecdf_raw(cdf: EmpiricalCdf, v):
    """Interpolated ECDF without truncation; 0 below and 1 above the samples."""
    return np.interp(v, cdf.sorted_values, cdf.levels, left=0.0, right=1.0)


def ecdf_eval(cdf: EmpiricalCdf, v):
    return np.clip(ecdf_raw(cdf, v), cdf.delta, 1.0 - cdf.delta)


def ecdf_inverse(cdf: EmpiricalCdf, u):
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any((u_arr <= 0.0) | (u_arr >= 1.0)) or np.any(np.isnan(u_arr)):
        raise ValueError("ECDF inverse needs u strictly inside (0, 1)")
    # below the first / above the last knot np.interp returns the boundary sample
    return np.interp(u_arr, cdf.levels, cdf.sorted_values)


def ecdf_density(cdf: EmpiricalCdf, v):
    """Slope of the interpolated segment containing ``v``; 0 outside the samples."""
    v_arr = np.asarray(v, dtype=np.float64)
    xs = cdf.sorted_values
    seg = np.searchsorted(xs, v_arr, side="right") - 1
    inside = (v_arr >= xs[0]) & (v_arr <= xs[-1])
    seg = np.clip(seg, 0, cdf.m - 2)
    gap = xs[seg + 1] - xs[seg]
    with np.errstate(divide="ignore"):
        slope = np.where(gap > 0, (1.0 / cdf.m) / np.where(gap > 0, gap, 1.0), np.inf)
    out = np.where(inside, slope, 0.0)
    return out if out.ndim else float(out)


def log_correction(u, density):
    """``-log phi(Phi^-1(u)) + log density`` for given CDF level and density."""
    x = special.ndtri(np.asarray(u, dtype=np.float64))
    with np.errstate(divide="ignore"):
        return -std_normal_logpdf(x) + np.log(density)


@dataclass(frozen=True)
class MarginalTransform:
    """Per-series map to and from the standard-normal scale.

    ``cdf`` of None means the affine map ``(z - loc) / scale`` (the identity
    by default), used when the copula is disabled.
    """

    cdf: EmpiricalCdf | None = None
    loc: float = 0.0
    scale: float = 1.0


def transform_forward(t: MarginalTransform, z):
    if t.cdf is None:
        z = np.asarray(z, dtype=np.float64)
        return z if (t.loc == 0.0 and t.scale == 1.0) else (z - t.loc) / t.scale
    return special.ndtri(ecdf_eval(t.cdf, z))


def transform_inverse(t: MarginalTransform, x):
    if t.cdf is None:
        x = np.asarray(x, dtype=np.float64)
        return x if (t.loc == 0.0 and t.scale == 1.0) else x * t.scale + t.loc
    u = special.ndtr(x)
    # Phi saturates to exactly 0 or 1 for |x| > ~38; the boundary rule applies there anyway
    u = np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return ecdf_inverse(t.cdf, u)


def copula_log_correction(t: MarginalTransform, z):
    """Change-of-variables term so that log p(z) = Gaussian log-density of f(z) + sum of these."""
    if t.cdf is None:
        return np.full_like(np.asarray(z, dtype=np.float64), -np.log(t.scale))
    density = ecdf_density(t.cdf, z)
    if np.any(~(np.asarray(density) > 0)) or np.any(~np.isfinite(density)):
        raise NumericalError("copula correction evaluated outside the ECDF support")
    return log_correction(ecdf_eval(t.cdf, z), density)


def fit_transforms(values, m: int, jitter, rng, kind: str = "copula") -> list[MarginalTransform]:
    """One transform per row of the ``N x T`` matrix ``values``.

    ``kind`` is ``copula`` (ECDF of the last ``m`` points), ``standardize``
    (mean and standard deviation of the whole row) or ``identity``.
    ``jitter`` is a scalar or a per-series sequence of jitter scales.
    """
    values = np.asarray(values, dtype=np.float64)
    if kind == "identity":
        return [MarginalTransform(None) for _ in range(values.shape[0])]
    if kind == "standardize":
        out = []
        for row in values:
            sd = float(row.std())
            out.append(MarginalTransform(None, float(row.mean()), sd if sd > 0 else 1.0))
        return out
    if kind != "copula":
        raise ValueError(f"unknown transform kind {kind!r}")
    jitter = np.broadcast_to(np.asarray(jitter, dtype=np.float64), (values.shape[0],))
    return [
        MarginalTransform(fit_ecdf(row, m, float(j), rng)) for row, j in zip(values, jitter)
    ]


def forward_all(transforms, values) -> np.ndarray:
    """Apply per-series forward transforms along the first axis of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    return np.stack([transform_forward(t, row) for t, row in zip(transforms, values)])
