"""Maximum-likelihood training: window/series sampling, Adam, LR decay on plateaus."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from gpcopula import copula
from gpcopula.data import TimeSeriesPanel, build_covariates, default_lags
from gpcopula.errors import ConfigError, DataError, NumericalError
from gpcopula.net import NetworkParams, init_params, loss_and_grads, window_inputs

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    total_updates: int = 10000
    clip_norm: float = 10.0
    l2: float = 1e-8
    decay_patience: int = 500
    decay_factor: float = 2.0
    smoothing_window: int = 50
    rank: int = 10
    dim_batch: int = 20
    ecdf_size: int = 100
    num_eval_samples: int = 400
    seed: int = 0
    hidden_size: int = 40
    num_layers: int = 2
    embed_dim: int = 4
    dropout: float = 0.01
    embed_input: bool = True
    horizon: int = 24
    context_length: int | None = None  # None means equal to horizon
    lags: list[int] | None = None  # None means the frequency default
    transform: str = "copula"  # or "standardize" / "identity"
    jitter: float | None = None  # None: 1.0 for count series, 0.0 for real ones
    scale_time_features: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def context(self) -> int:
        return self.horizon if self.context_length is None else self.context_length

    @property
    def window_length(self) -> int:
        return self.context + self.horizon

    def validate(self) -> None:
        positive = ["learning_rate", "batch_size", "clip_norm", "decay_patience", "rank",
                    "dim_batch", "num_eval_samples", "hidden_size", "num_layers", "embed_dim",
                    "horizon", "smoothing_window"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.total_updates < 0 or self.l2 < 0 or self.checkpoint_every < 0:
            raise ConfigError("total_updates, l2 and checkpoint_every must be nonnegative")
        if not self.decay_factor > 1:
            raise ConfigError("decay_factor must exceed 1")
        if self.ecdf_size < 2:
            raise ConfigError("ecdf_size must be at least 2")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.context_length is not None and self.context_length < 1:
            raise ConfigError("context_length must be positive")
        if self.transform not in ("copula", "standardize", "identity"):
            raise ConfigError(
                f"transform must be 'copula', 'standardize' or 'identity', got {self.transform!r}"
            )
        if self.lags is not None and (not self.lags or min(self.lags) < 1):
            raise ConfigError("lags must be a non-empty list of positive integers")
        if self.jitter is not None and self.jitter < 0:
            raise ConfigError("jitter must be nonnegative")


@dataclass
class TrainingData:
    """A panel together with everything derived from it for the network."""

    panel: TimeSeriesPanel
    transforms: list
    x: np.ndarray  # N x T on the transformed scale
    covariates: np.ndarray  # T x C
    lags: list[int]
    scaled_covariates: bool = True

    @property
    def input_size(self) -> int:
        return len(self.lags) + self.covariates.shape[1]


def jitter_scales(panel: TimeSeriesPanel, cfg: TrainConfig) -> np.ndarray:
    if cfg.jitter is not None:
        return np.full(panel.num_series, cfg.jitter)
    return np.array([1.0 if dom == "count" else 0.0 for dom in panel.domain])


def prepare(panel: TimeSeriesPanel, cfg: TrainConfig, rng, transforms=None) -> TrainingData:
    """Fit (or reuse) marginal transforms and build the network's view of the panel."""
    if transforms is None:
        if cfg.transform == "copula" and panel.length < cfg.ecdf_size:
            raise DataError(
                f"panel has {panel.length} steps, ECDF needs at least {cfg.ecdf_size}"
            )
        transforms = copula.fit_transforms(
            panel.values, cfg.ecdf_size, jitter_scales(panel, cfg), rng, cfg.transform
        )
    x = copula.forward_all(transforms, panel.values)
    covariates = build_covariates(panel.timestamps, panel.frequency, cfg.scale_time_features)
    lags = list(cfg.lags) if cfg.lags is not None else default_lags(panel.frequency)
    return TrainingData(panel, transforms, x, covariates, lags, cfg.scale_time_features)


@dataclass
class TrainingInstance:
    series_indices: np.ndarray  # (B,)
    start: int
    inputs: np.ndarray  # (L, B, F)
    targets: np.ndarray  # (L, B), transformed scale


def make_instance(data: TrainingData, series_indices, start: int, length: int) -> TrainingInstance:
    idx = np.asarray(series_indices, dtype=np.int64)
    rows = data.x[idx]
    inputs = window_inputs(rows, data.covariates, data.lags, start, length)
    return TrainingInstance(idx, start, inputs, rows[:, start:start + length].T.copy())


def sample_training_instance(data: TrainingData, cfg: TrainConfig, rng) -> TrainingInstance:
    """Uniform window offset and ``min(B, N)`` distinct series drawn without replacement."""
    length = cfg.window_length
    total = data.x.shape[1]
    if total < length:
        raise DataError(f"panel of length {total} shorter than window T'+tau = {length}")
    start = int(rng.integers(0, total - length + 1))
    n = data.x.shape[0]
    idx = rng.choice(n, size=min(cfg.dim_batch, n), replace=False)
    return make_instance(data, idx, start, length)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params: NetworkParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict, clip_norm: float):
    """Rescale so the global norm is at most ``clip_norm``; returns (clipped, original_norm)."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NumericalError("non-finite gradient")
    if norm > clip_norm:
        scale = clip_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return dict(grads), norm


def adam_step(params: NetworkParams, grads: dict, state: AdamState, cfg: TrainConfig,
              learning_rate: float | None = None):
    """Clip, add the L2 term, then a bias-corrected Adam update (in place)."""
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    grads, _ = clip_gradients(grads, cfg.clip_norm)
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for name, p in params.tensors.items():
        g = grads[name] + cfg.l2 * p
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        p -= lr * (state.m[name] / corr1) / (np.sqrt(state.v[name] / corr2) + cfg.adam_eps)
    return params, state


class PlateauSchedule:
    """Divide the learning rate after ``patience`` updates without a new best smoothed loss."""

    def __init__(self, lr: float, patience: int, factor: float, window: int):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.window = window
        self.best = np.inf
        self.stale = 0
        self._recent: list[float] = []

    def update(self, loss: float) -> float:
        self._recent.append(loss)
        if len(self._recent) > self.window:
            self._recent.pop(0)
        smoothed = float(np.mean(self._recent))
        if smoothed < self.best:
            self.best = smoothed
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr /= self.factor
                self.stale = 0
        return self.lr


@dataclass
class FitResult:
    params: NetworkParams
    data: TrainingData
    trace: list = field(default_factory=list)  # (update_index, loss, learning_rate)

    @property
    def transforms(self):
        return self.data.transforms

    def losses(self) -> np.ndarray:
        return np.array([row[1] for row in self.trace])


def fit(panel: TimeSeriesPanel, cfg: TrainConfig, rng=None, callback=None) -> FitResult:
    """Train on the whole panel; ``callback(update_index, params, transforms)`` runs every
    ``cfg.checkpoint_every`` updates when that is positive."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    data = prepare(panel, cfg, rng)
    if data.x.shape[1] < cfg.window_length:
        raise DataError(
            f"panel of length {data.x.shape[1]} shorter than window T'+tau = {cfg.window_length}"
        )
    params = init_params(
        panel.num_series, data.input_size, cfg.hidden_size, cfg.num_layers, cfg.rank,
        cfg.embed_dim, cfg.dropout, rng, cfg.embed_input,
    )
    state = AdamState.zeros(params)
    schedule = PlateauSchedule(cfg.learning_rate, cfg.decay_patience, cfg.decay_factor,
                               cfg.smoothing_window)
    result = FitResult(params, data)
    dropout_rng = rng if cfg.dropout > 0 else None
    for update in range(cfg.total_updates):
        batch = [sample_training_instance(data, cfg, rng) for _ in range(cfg.batch_size)]
        lr = schedule.lr
        try:
            loss, grads = loss_and_grads(params, batch, rng=dropout_rng)
            if not np.isfinite(loss):
                raise NumericalError("divergent loss")
            adam_step(params, grads, state, cfg, lr)
        except NumericalError as exc:
            raise NumericalError(f"{exc} (update {update})") from exc
        result.trace.append((update, loss, lr))
        schedule.update(loss)
        if cfg.checkpoint_every and callback is not None and (update + 1) % cfg.checkpoint_every == 0:
            callback(update + 1, params, data.transforms)
        if update % 500 == 0:
            log.info("update %d loss %.4f lr %.2e", update, loss, lr)
    return result


def dataset_nll(params: NetworkParams, data: TrainingData, cfg: TrainConfig, stride: int | None = None) -> float:
    """Mean NLL per step and series over consecutive training windows (no dropout, no sampling)."""
    length = cfg.window_length
    stride = length if stride is None else stride
    total = data.x.shape[1]
    if total < length:
        raise DataError(f"panel of length {total} shorter than window T'+tau = {length}")
    n = data.x.shape[0]
    groups = [np.arange(i, min(i + cfg.dim_batch, n)) for i in range(0, n, cfg.dim_batch)]
    starts = range(0, total - length + 1, stride)
    weighted = 0.0
    for g in groups:
        loss, _ = loss_and_grads(params, [make_instance(data, g, s, length) for s in starts])
        weighted += loss * len(g)
    return float(weighted / n)


def config_replace(cfg: TrainConfig, **changes) -> TrainConfig:
    return dataclasses.replace(cfg, **changes)
