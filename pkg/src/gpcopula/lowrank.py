"""Gaussian algebra for covariances of the form ``D + V V^T``.

``D`` is diagonal with strictly positive entries and ``V`` is an ``N x r``
factor stored row-major (row ``i`` is the factor loading of series ``i``).
Everything goes through the r-by-r capacitance matrix ``C = I + V^T D^-1 V``
so that a log-density costs O(N r^2 + r^3) instead of O(N^3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from gpcopula.errors import CholeskyError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LowRankGaussian:
    mu: np.ndarray
    d: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        d = np.asarray(self.d, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if mu.ndim != 1 or d.shape != mu.shape or v.ndim != 2 or v.shape[0] != mu.shape[0]:
            raise ValueError(
                f"inconsistent shapes: mu {mu.shape}, d {d.shape}, v {v.shape}"
            )
        if v.shape[1] < 1:
            raise ValueError("rank must be at least 1")
        if not np.all(d > 0):
            raise ValueError("diagonal d must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "v", v)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def rank(self) -> int:
        return self.v.shape[1]

    def covariance(self) -> np.ndarray:
        """Dense ``D + V V^T``; O(N^2 r), meant for small N."""
        return np.diag(self.d) + self.v @ self.v.T

    def subset(self, idx) -> "LowRankGaussian":
        """Marginal over the series in ``idx`` (a principal submatrix of the covariance)."""
        idx = np.asarray(idx)
        return LowRankGaussian(self.mu[idx], self.d[idx], self.v[idx])


@dataclass(frozen=True)
class CapacitanceFactor:
    l_c: np.ndarray
    log_det_c: float
    # D^-1 V, kept so the Mahalanobis term does not redo the division
    scaled_v: np.ndarray = field(repr=False, default=None)


def _locate_failed_pivot(a: np.ndarray) -> tuple[int, float]:
    """Scalar Cholesky used only to report where factorization breaks down."""
    n = a.shape[0]
    l = np.zeros_like(a)
    for j in range(n):
        s = a[j, j] - l[j, :j] @ l[j, :j]
        if not s > 0:
            return j, float(s)
        l[j, j] = math.sqrt(s)
        l[j + 1:, j] = (a[j + 1:, j] - l[j + 1:, :j] @ l[j, :j]) / l[j, j]
    return n - 1, float("nan")


def cholesky(a: np.ndarray, context: str = "") -> np.ndarray:
    """Lower Cholesky factor of a (possibly batched) SPD matrix.

    Raises :class:`CholeskyError` naming the first non-positive pivot; for a
    batch the context also names the offending batch element.
    """
    try:
        l = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        l = None
    if l is not None and np.all(np.isfinite(l)):
        return l
    if a.ndim == 2:
        pivot, value = _locate_failed_pivot(a)
        raise CholeskyError(pivot, value, context)
    flat = a.reshape(-1, a.shape[-2], a.shape[-1])
    for b, m in enumerate(flat):
        try:
            lb = np.linalg.cholesky(m)
            if np.all(np.isfinite(lb)):
                continue
        except np.linalg.LinAlgError:
            pass
        pivot, value = _locate_failed_pivot(m)
        where = f"batch element {np.unravel_index(b, a.shape[:-2])}"
        raise CholeskyError(pivot, value, f"{context}, {where}" if context else where)
    raise CholeskyError(-1, None, context)


def _cholesky_small(a: np.ndarray, context: str) -> np.ndarray:
    # direct LAPACK call: the r x r factorization must not dominate the O(N r^2) work
    l, info = lapack.dpotrf(a, lower=1, clean=1)
    if info != 0 or not np.isfinite(l[-1, -1]):
        pivot, value = _locate_failed_pivot(a)
        raise CholeskyError(pivot, value, context)
    return l


def capacitance(g: LowRankGaussian) -> CapacitanceFactor:
    scaled_v = g.v / g.d[:, None]
    c = g.v.T @ scaled_v
    c.flat[::c.shape[0] + 1] += 1.0
    l_c = _cholesky_small(c, "capacitance matrix")
    log_det_c = 2.0 * float(np.log(l_c.diagonal()).sum())
    return CapacitanceFactor(l_c, log_det_c, scaled_v)


def logdet_lowrank(g: LowRankGaussian, cf: CapacitanceFactor) -> float:
    """log|D + V V^T| via the matrix determinant lemma."""
    return cf.log_det_c + float(np.log(g.d).sum())


def mahalanobis_lowrank(g: LowRankGaussian, cf: CapacitanceFactor, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != g.mu.shape:
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, expected {g.mu.shape}")
    diff = x - g.mu
    scaled_v = cf.scaled_v if cf.scaled_v is not None else g.v / g.d[:, None]
    y = scaled_v.T @ diff
    w, _ = lapack.dtrtrs(cf.l_c, y, lower=1)
    out = float(diff @ (diff / g.d) - w @ w)
    # cancellation can leave a tiny negative residue when x is close to mu
    return max(out, 0.0)


def logpdf_lowrank(g: LowRankGaussian, x) -> float:
    """log N(x; mu, D + V V^T) in O(N r^2 + r^3).

    Same algebra as :func:`capacitance`, :func:`logdet_lowrank` and
    :func:`mahalanobis_lowrank`, inlined to keep the per-call overhead small.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != g.mu.shape:
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, expected {g.mu.shape}")
    d, v = g.d, g.v
    r = v.shape[1]
    diff = x - g.mu
    scaled_v = v / d[:, None]
    c = scaled_v.T @ v
    c += _identity(r)
    l_c, info = lapack.dpotrf(c, lower=1, clean=0)
    if info != 0 or not np.isfinite(l_c[-1, -1]):
        pivot, value = _locate_failed_pivot(c)
        raise CholeskyError(pivot, value, "capacitance matrix")
    w, _ = lapack.dtrtrs(l_c, diff @ scaled_v, lower=1)
    maha = max(float(diff @ (diff / d) - w @ w), 0.0)
    # pivots of I + PSD are >= 1, so the product only fails by overflowing
    log_det_c = math.log(np.prod(l_c.diagonal()))
    if not math.isfinite(log_det_c):
        log_det_c = float(np.log(l_c.diagonal()).sum())
    return -0.5 * (g.dim * LOG_2PI + 2.0 * log_det_c + float(np.log(d).sum()) + maha)


_EYES: dict = {}


def _identity(r: int) -> np.ndarray:
    eye = _EYES.get(r)
    if eye is None:
        eye = _EYES[r] = np.eye(r)
        eye.flags.writeable = False
    return eye


def sample_lowrank(g: LowRankGaussian, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` rows from N(mu, D + V V^T) as ``mu + sqrt(D) e1 + V e2``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    eps_diag = rng.standard_normal((count, g.dim))
    eps_factor = rng.standard_normal((count, g.rank))
    return g.mu + eps_diag * np.sqrt(g.d) + eps_factor @ g.v.T


def dense_oracle_logpdf(g: LowRankGaussian, x) -> float:
    """Reference log-density from a dense Cholesky of the full covariance."""
    x = np.asarray(x, dtype=np.float64)
    l = cholesky(g.covariance(), "dense covariance")
    z = np.linalg.solve(l, x - g.mu)
    return -0.5 * (g.dim * LOG_2PI + 2.0 * np.sum(np.log(np.diag(l))) + z @ z)


def batch_nll_and_grads(mu, d, v, x):
    """Negative log-density and its gradients for a stack of low-rank Gaussians.

    Shapes: ``mu, d, x`` are ``(G, B)`` and ``v`` is ``(G, B, r)``. Returns
    ``(nll, dmu, dd, dv)`` where ``nll`` has shape ``(G,)`` and the gradients
    are of ``nll`` with respect to each input.

    With ``a = Sigma^-1 (x - mu)`` the gradients are ``-a`` for the mean,
    ``(diag(Sigma^-1) - a^2) / 2`` for the diagonal and
    ``Sigma^-1 V - a (V^T a)^T`` for the factor, where ``Sigma^-1 V``
    collapses to ``D^-1 V C^-1`` by Woodbury.
    """
    g, b = mu.shape
    r = v.shape[-1]
    a_mat = v / d[..., None]
    c = np.matmul(np.swapaxes(v, -1, -2), a_mat)
    c += np.eye(r)
    l_c = cholesky(c, "capacitance matrix")
    l_inv = np.linalg.inv(l_c)
    c_inv = np.matmul(np.swapaxes(l_inv, -1, -2), l_inv)

    diff = x - mu
    y = np.einsum("gbr,gb->gr", a_mat, diff)
    c_inv_y = np.einsum("grs,gs->gr", c_inv, y)
    maha = np.sum(diff * diff / d, axis=-1) - np.sum(y * c_inv_y, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.diagonal(l_c, axis1=-2, axis2=-1)), axis=-1)
    logdet += np.sum(np.log(d), axis=-1)
    nll = 0.5 * (b * LOG_2PI + logdet + maha)

    alpha = diff / d - np.einsum("gbr,gr->gb", a_mat, c_inv_y)
    sinv_v = np.matmul(a_mat, c_inv)
    sinv_diag = 1.0 / d - np.sum(sinv_v * a_mat, axis=-1)
    vt_alpha = np.einsum("gbr,gb->gr", v, alpha)
    dmu = -alpha
    dd = 0.5 * (sinv_diag - alpha * alpha)
    dv = sinv_v - alpha[..., None] * vt_alpha[:, None, :]
    return nll, dmu, dd, dv
