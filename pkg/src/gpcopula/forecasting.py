"""Conditioning on recent history and Monte Carlo rollout of joint sample paths."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from gpcopula import copula
from gpcopula.data import atomic_write_text, build_covariates
from gpcopula.errors import DataError, NumericalError
from gpcopula.net import NetworkParams, NetworkState, features, lstm_step, project_features, unroll
from gpcopula.synthetic import lower_triangle_labels
from gpcopula.training import TrainingData

# paths advanced together; fixed so results do not depend on S beyond the path count
PATH_CHUNK = 25


@dataclass
class ForecastSamples:
    samples: np.ndarray  # (S, N, tau), original scale
    origin: int  # index of the first forecast step in the panel
    start_time: object
    frequency: str
    series_ids: list[str]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def horizon(self) -> int:
        return self.samples.shape[2]


def _future_covariates(data: TrainingData, start: int, count: int) -> np.ndarray:
    """Calendar features for ``start .. start+count-1``, extrapolating timestamps if needed."""
    if start + count <= data.covariates.shape[0]:
        return data.covariates[start:start + count]
    stamps = data.panel.future_timestamps(start, count)
    return build_covariates(stamps, data.panel.frequency, data.scaled_covariates)


def _inputs_at(lag_values: np.ndarray, cov_row: np.ndarray) -> np.ndarray:
    rows = lag_values.shape[0]
    return np.concatenate([lag_values, np.broadcast_to(cov_row, (rows, cov_row.shape[0]))], axis=1)


def condition(params: NetworkParams, data: TrainingData, origin: int, context: int) -> NetworkState:
    """State of every series ready to emit step ``origin``.

    The LSTM starts from zeros and consumes the inputs of steps
    ``origin-context+1 .. origin``; their lag-1 features are the last
    ``context`` observations before ``origin``.
    """
    if origin < context:
        raise DataError(f"need {context} observed steps before the forecast origin, have {origin}")
    if origin > data.x.shape[1]:
        raise DataError(f"forecast origin {origin} lies beyond the observed panel")
    n = data.x.shape[0]
    lags = np.asarray(data.lags)
    times = origin - context + 1 + np.arange(context)
    idx = times[:, None] - lags[None, :]
    lagged = np.where(idx >= 0, data.x[:, np.clip(idx, 0, None)], 0.0)  # (N, context, L)
    cov = _future_covariates(data, times[0], context)
    inputs = np.concatenate(
        [np.transpose(lagged, (1, 0, 2)), np.broadcast_to(cov[:, None, :], (context, n, cov.shape[1]))],
        axis=-1,
    )
    _, state = unroll(params, inputs, np.arange(n))
    return state


def path_noise(seed: int, path: int, horizon: int, n: int, rank: int):
    """Standard-normal draws owned by one sample path, derived from ``(seed, path)``."""
    gen = np.random.default_rng([seed, path])
    return gen.standard_normal((horizon, n)), gen.standard_normal((horizon, rank))


def rollout(params: NetworkParams, state: NetworkState, data: TrainingData, origin: int,
            horizon: int, num_samples: int, seed: int = 0, return_transformed: bool = False):
    """Sample ``num_samples`` joint paths of length ``horizon`` starting at ``origin``.

    Each step draws ``x = mu + sqrt(d) e1 + V e2`` over all series, feeds the
    transformed draw back as the next lag feature, and the whole path is
    mapped to the original scale at the end.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    n = data.x.shape[0]
    r = params.rank
    lags = np.asarray(data.lags)
    max_lag = int(lags.max())
    hist_start = origin - max_lag
    observed = np.zeros((n, max_lag))
    lo = max(hist_start, 0)
    observed[:, lo - hist_start:] = data.x[:, lo:origin]
    cov = _future_covariates(data, origin, horizon)

    out = np.empty((num_samples, n, horizon))
    series_idx = np.arange(n)
    for c0 in range(0, num_samples, PATH_CHUNK):
        paths = range(c0, min(c0 + PATH_CHUNK, num_samples))
        m = len(paths)
        noise = [path_noise(seed, p, horizon, n, r) for p in paths]
        e_diag = np.stack([a for a, _ in noise])  # (m, tau, N)
        e_fac = np.stack([b for _, b in noise])  # (m, tau, r)
        st = NetworkState([np.tile(h, (m, 1)) for h in state.h], [np.tile(c, (m, 1)) for c in state.c])
        rows_idx = np.tile(series_idx, m)
        buf = np.concatenate([np.broadcast_to(observed, (m, n, max_lag)), np.zeros((m, n, horizon))], axis=2)
        for j in range(horizon):
            y = features(params, st.top, rows_idx)
            mu, d, v = project_features(params, y)
            mu = mu.reshape(m, n)
            d = d.reshape(m, n)
            v = v.reshape(m, n, r)
            x = mu + np.sqrt(d) * e_diag[:, j] + np.einsum("mnr,mr->mn", v, e_fac[:, j])
            if not np.all(np.isfinite(x)):
                raise NumericalError(f"non-finite sample at forecast step {j}")
            buf[:, :, max_lag + j] = x
            if j + 1 < horizon:
                pos = max_lag + j + 1 - lags  # buffer positions of each lag for step j+1
                lag_vals = buf[:, :, pos].reshape(m * n, len(lags))
                st = lstm_step(params, st, _inputs_at(lag_vals, cov[j + 1]), timestep=j + 1,
                               series_idx=rows_idx)
        out[c0:c0 + m] = buf[:, :, max_lag:]
    x_samples = out
    z = np.empty_like(x_samples)
    for i, t in enumerate(data.transforms):
        z[:, i, :] = copula.transform_inverse(t, x_samples[:, i, :])
    start_time = data.panel.future_timestamps(origin, 1)[0]
    fc = ForecastSamples(z, origin, start_time, data.panel.frequency, list(data.panel.series_ids))
    if return_transformed:
        return fc, x_samples
    return fc


def forecast(params, data: TrainingData, origin: int, context: int, horizon: int,
             num_samples: int, seed: int = 0) -> ForecastSamples:
    state = condition(params, data, origin, context)
    return rollout(params, state, data, origin, horizon, num_samples, seed)


def covariance_trace(params: NetworkParams, data: TrainingData, start: int, end: int,
                     context: int, chunk: int = 500):
    """One-step-ahead emission mean and covariance for every step in ``[start, end)``.

    Each step is conditioned on its own last ``context`` observations, as in
    forecasting. Returns ``means (n, N)`` and ``covs (n, N, N)`` on the
    transformed scale.
    """
    if start < context:
        raise DataError(f"covariance trace needs {context} steps of history before step {start}")
    n = data.x.shape[0]
    lags = np.asarray(data.lags)
    all_t = np.arange(start, end)
    means = np.empty((len(all_t), n))
    covs = np.empty((len(all_t), n, n))
    for c0 in range(0, len(all_t), chunk):
        ts = all_t[c0:c0 + chunk]
        nt = len(ts)
        times = ts[:, None] - context + 1 + np.arange(context)[None, :]  # (nt, context)
        idx = times[..., None] - lags  # (nt, context, L)
        lagged = np.where(idx >= 0, data.x[:, np.clip(idx, 0, None)], 0.0)  # (N, nt, context, L)
        lagged = np.transpose(lagged, (2, 1, 0, 3)).reshape(context, nt * n, len(lags))
        cov_feat = data.covariates[times]  # (nt, context, C)
        cov_feat = np.repeat(np.transpose(cov_feat, (1, 0, 2)), n, axis=1)
        inputs = np.concatenate([lagged, cov_feat], axis=-1)
        rows_idx = np.tile(np.arange(n), nt)
        _, state = unroll(params, inputs, rows_idx)
        mu, d, v = project_features(params, features(params, state.top, rows_idx))
        mu = mu.reshape(nt, n)
        d = d.reshape(nt, n)
        v = v.reshape(nt, n, -1)
        means[c0:c0 + nt] = mu
        covs[c0:c0 + nt] = np.einsum("tir,tjr->tij", v, v)
        covs[c0:c0 + nt, np.arange(n), np.arange(n)] += d
    return means, covs


def write_samples(fc: ForecastSamples, path) -> None:
    s, n, tau = fc.samples.shape
    buf = io.StringIO()
    buf.write("sample_id,series_id,step,value\n")
    ids = fc.series_ids
    for k in range(s):
        for i in range(n):
            for j in range(tau):
                buf.write(f"{k},{ids[i]},{j},{float(fc.samples[k, i, j])!r}\n")
    atomic_write_text(path, buf.getvalue())


def read_samples(path, series_ids=None) -> np.ndarray:
    """Inverse of :func:`write_samples`; returns ``(S, N, tau)`` in the order of ``series_ids``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        recs = [(int(r["sample_id"]), r["series_id"], int(r["step"]), float(r["value"])) for r in reader]
    if not recs:
        raise DataError(f"{path}: no samples")
    if series_ids is None:
        seen = {}
        for _, sid, _, _ in recs:
            seen.setdefault(sid, len(seen))
        series_ids = list(seen)
    pos = {sid: i for i, sid in enumerate(series_ids)}
    s = max(r[0] for r in recs) + 1
    tau = max(r[2] for r in recs) + 1
    out = np.full((s, len(series_ids), tau), np.nan)
    for k, sid, j, val in recs:
        if sid not in pos:
            raise DataError(f"{path}: unknown series id {sid!r}")
        out[k, pos[sid], j] = val
    if np.any(np.isnan(out)):
        raise DataError(f"{path}: incomplete sample grid")
    return out


QUANTILE_LEVELS = tuple(round(0.1 * k, 1) for k in range(1, 10))


def write_quantiles(fc: ForecastSamples, path, levels=QUANTILE_LEVELS) -> None:
    from gpcopula.metrics import sample_quantiles

    s, n, tau = fc.samples.shape
    q = sample_quantiles(fc.samples, levels)  # (len(levels), N, tau)
    buf = io.StringIO()
    buf.write("series_id,step," + ",".join(f"q{int(round(lv * 100))}" for lv in levels) + "\n")
    for i in range(n):
        for j in range(tau):
            buf.write(f"{fc.series_ids[i]},{j}," + ",".join(repr(float(v)) for v in q[:, i, j]) + "\n")
    atomic_write_text(path, buf.getvalue())


def write_covariance_trace(path, t, means, covs) -> None:
    """Same layout as the synthetic truth file: ``t, mu_*, cov_i_j`` (lower triangle)."""
    n = means.shape[1]
    pairs = lower_triangle_labels(n)
    buf = io.StringIO()
    buf.write(",".join(["t", *(f"mu_{i}" for i in range(n)), *(f"cov_{i}_{j}" for i, j in pairs)]) + "\n")
    for k, tt in enumerate(t):
        vals = [*means[k], *(covs[k, i, j] for i, j in pairs)]
        buf.write(f"{int(tt)}," + ",".join(repr(float(v)) for v in vals) + "\n")
    atomic_write_text(path, buf.getvalue())
