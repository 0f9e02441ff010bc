"""Wall-clock scaling measurements for the likelihood and the sampler."""

from __future__ import annotations

import time

import numpy as np

from gpcopula.lowrank import LowRankGaussian, dense_oracle_logpdf, logpdf_lowrank


def _best_time(fn, repeats: int, min_seconds: float) -> float:
    """Per-call seconds: calls are batched until a batch lasts ``min_seconds``; best of ``repeats``."""
    calls = 1
    while True:
        start = time.perf_counter()
        for _ in range(calls):
            fn()
        elapsed = time.perf_counter() - start
        if elapsed >= min_seconds:
            break
        calls *= 2
    best = elapsed / calls
    for _ in range(repeats - 1):
        start = time.perf_counter()
        for _ in range(calls):
            fn()
        best = min(best, (time.perf_counter() - start) / calls)
    return best


def random_lowrank(n: int, rank: int, rng) -> tuple[LowRankGaussian, np.ndarray]:
    g = LowRankGaussian(rng.normal(size=n), rng.uniform(0.5, 1.5, n), rng.normal(size=(n, rank)) / np.sqrt(rank))
    return g, rng.normal(size=n)


def time_logpdf(sizes=(1024, 2048, 4096, 8192), rank: int = 10, seed: int = 0,
                repeats: int = 7, min_seconds: float = 0.1) -> list[tuple[int, float]]:
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        g, x = random_lowrank(n, rank, rng)
        rows.append((n, _best_time(lambda: logpdf_lowrank(g, x), repeats, min_seconds)))
    return rows


def time_dense(n: int = 512, rank: int = 10, seed: int = 0, repeats: int = 3,
               min_seconds: float = 0.05) -> float:
    g, x = random_lowrank(n, rank, np.random.default_rng(seed))
    return _best_time(lambda: dense_oracle_logpdf(g, x), repeats, min_seconds)


def scaling_ratios(rows) -> list[tuple[int, float]]:
    """``(N, t(2N) / t(N))`` for consecutive doublings present in ``rows``."""
    times = dict(rows)
    return [(n, times[2 * n] / times[n]) for n, _ in rows if 2 * n in times]


def time_rollout(params, state, data, origin: int, horizon: int, sample_counts=(100, 200, 400),
                 seed: int = 0, repeats: int = 3) -> list[tuple[int, float]]:
    from gpcopula.forecasting import rollout

    rows = []
    for s in sample_counts:
        best = np.inf
        for _ in range(repeats):
            start = time.perf_counter()
            rollout(params, state, data, origin, horizon, s, seed)
            best = min(best, time.perf_counter() - start)
        rows.append((s, best))
    return rows
