"""Artificial panel with an oscillating rank-2 covariance and known ground truth.

    z_t ~ N(rho_t u, U S_t U^T),   rho_t = sin(t * dt),
    S_t = [[s1^2, rho_t s1 s2], [rho_t s1 s2, s2^2]]

with the entries of ``u`` (N,) and ``U`` (N, 2) drawn uniformly in ``[a, b]``.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass

import numpy as np

from gpcopula.data import TimeSeriesPanel, atomic_write_text
from gpcopula.errors import ConfigError


@dataclass
class SyntheticSpec:
    N: int = 4
    T: int = 24000
    sigma1: float = 0.1
    sigma2: float = 0.1
    a: float = -0.5
    b: float = 0.5
    dt: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.T < 1:
            raise ConfigError("N and T must be positive")
        if not self.b > self.a:
            raise ConfigError("need b > a")
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ConfigError("sigma1 and sigma2 must be positive")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")


@dataclass
class SyntheticTruth:
    spec: SyntheticSpec
    u: np.ndarray  # (N,)
    U: np.ndarray  # (N, 2)

    def rho(self, t):
        return np.sin(np.asarray(t, dtype=np.float64) * self.spec.dt)

    def mean_cov(self, t):
        return true_cov(self.spec, self.u, self.U, t)

    def trace(self, start: int = 0, end: int | None = None):
        """Means ``(n, N)`` and covariances ``(n, N, N)`` for steps ``start .. end-1``."""
        end = self.spec.T if end is None else end
        t = np.arange(start, end)
        rho = self.rho(t)
        mean = rho[:, None] * self.u[None, :]
        return mean, _factor_cov(self.spec, self.U, rho)


def _factor_cov(spec: SyntheticSpec, U, rho):
    """``U S U^T`` for each entry of ``rho`` as a sum of symmetric outer products (exactly symmetric)."""
    U = np.asarray(U, dtype=np.float64)
    rho = np.atleast_1d(np.asarray(rho, dtype=np.float64))
    s1, s2 = spec.sigma1, spec.sigma2
    a, b = U[:, 0], U[:, 1]
    aa = s1 * s1 * np.outer(a, a)
    bb = s2 * s2 * np.outer(b, b)
    cross = s1 * s2 * (np.outer(a, b) + np.outer(b, a))
    return (aa + bb)[None] + rho[:, None, None] * cross[None]


def true_cov(spec: SyntheticSpec, u, U, t):
    """Exact ``(mean, covariance)`` at integer step ``t``."""
    rho = float(np.sin(t * spec.dt))
    return rho * np.asarray(u), _factor_cov(spec, U, rho)[0]


def generate(spec: SyntheticSpec, rng=None):
    """Return ``(panel, truth)``; the panel uses integer time indices."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    u = rng.uniform(spec.a, spec.b, spec.N)
    U = rng.uniform(spec.a, spec.b, (spec.N, 2))
    truth = SyntheticTruth(spec, u, U)
    rho = truth.rho(np.arange(spec.T))
    eps = rng.standard_normal((spec.T, 2))
    # closed-form Cholesky of S_t; exact even at rho = +-1 where S_t is singular
    latent0 = spec.sigma1 * eps[:, 0]
    latent1 = spec.sigma2 * (rho * eps[:, 0] + np.sqrt(np.maximum(1.0 - rho * rho, 0.0)) * eps[:, 1])
    z = rho[:, None] * u[None, :] + latent0[:, None] * U[:, 0] + latent1[:, None] * U[:, 1]
    panel = TimeSeriesPanel(
        z.T, [f"s{i}" for i in range(spec.N)], list(range(spec.T)), "index", ["real"] * spec.N
    )
    return panel, truth


def sample_at(truth: SyntheticTruth, t: int, count: int, rng) -> np.ndarray:
    """``count`` independent draws of ``z_t`` at a fixed step."""
    rho = float(truth.rho(t))
    s = truth.spec
    eps = rng.standard_normal((count, 2))
    l0 = s.sigma1 * eps[:, 0]
    l1 = s.sigma2 * (rho * eps[:, 0] + np.sqrt(max(1.0 - rho * rho, 0.0)) * eps[:, 1])
    return rho * truth.u + l0[:, None] * truth.U[:, 0] + l1[:, None] * truth.U[:, 1]


def lower_triangle_labels(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1)]


def write_truth(truth: SyntheticTruth, path) -> None:
    """CSV with columns ``t, mu_0..mu_{N-1}, cov_i_j`` (lower triangle, row-major)."""
    n = truth.spec.N
    pairs = lower_triangle_labels(n)
    mean, cov = truth.trace()
    rows = np.column_stack([mean] + [cov[:, i, j] for i, j in pairs])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", *(f"mu_{i}" for i in range(n)), *(f"cov_{i}_{j}" for i, j in pairs)])
    for t, row in enumerate(rows):
        writer.writerow([t, *(repr(float(v)) for v in row)])
    atomic_write_text(path, buf.getvalue())


def read_covariance_csv(path):
    """Load a truth or predicted covariance trace: ``(t, means, covs)`` with full matrices."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(c) for c in row] for row in reader if row])
    n = sum(1 for h in header if h.startswith("mu_"))
    t = data[:, 0].astype(np.int64)
    mean = data[:, 1:1 + n]
    cov = np.zeros((len(t), n, n))
    for col, (i, j) in enumerate(lower_triangle_labels(n)):
        cov[:, i, j] = cov[:, j, i] = data[:, 1 + n + col]
    return t, mean, cov
