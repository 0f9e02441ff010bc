"""Per-series LSTM state model with shared low-rank emission heads.

Every series is unrolled separately through the same stacked LSTM. The top
hidden state ``h`` of series ``i`` is concatenated with its embedding ``e_i``
into ``y = [h; e_i]`` and mapped to

    mu_i = w_mu . y,    d_i = softplus(w_d . y),    v_i = W_v y

so a set of series at one time step carries a ``LowRankGaussian``. Gradients
come from a hand-written reverse pass over a recorded forward (:class:`Tape`),
checked against central finite differences in the test suite.

Tensor names: ``lstm{l}_w`` (input+hidden, 4*hidden) with gate blocks in the
order input, forget, output, candidate; ``lstm{l}_b`` (4*hidden,); ``w_mu``
and ``w_d`` (p,); ``w_v`` (rank, p); ``embeddings`` (N, E).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from gpcopula.copula import EmpiricalCdf, MarginalTransform
from gpcopula.errors import DataError, NumericalError
from gpcopula.lowrank import LowRankGaussian, batch_nll_and_grads


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class NetworkParams:
    tensors: dict[str, np.ndarray]
    dropout_rate: float = 0.0
    embed_input: bool = False  # e_i also appended to the first LSTM layer's input

    @property
    def num_layers(self) -> int:
        return sum(1 for k in self.tensors if k.startswith("lstm") and k.endswith("_w"))

    @property
    def hidden_size(self) -> int:
        return self.tensors["lstm0_b"].shape[0] // 4

    @property
    def input_size(self) -> int:
        extra = self.embed_dim if self.embed_input else 0
        return self.tensors["lstm0_w"].shape[0] - self.hidden_size - extra

    @property
    def rank(self) -> int:
        return self.tensors["w_v"].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.tensors["embeddings"].shape[1]

    @property
    def num_series(self) -> int:
        return self.tensors["embeddings"].shape[0]

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: v.copy() for k, v in self.tensors.items()}, self.dropout_rate,
                             self.embed_input)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_params(
    num_series: int,
    input_size: int,
    hidden_size: int = 40,
    num_layers: int = 2,
    rank: int = 10,
    embed_dim: int = 4,
    dropout_rate: float = 0.01,
    rng: np.random.Generator | None = None,
    embed_input: bool = False,
) -> NetworkParams:
    """Weights and biases uniform in +-1/sqrt(fan_in); embeddings N(0, 0.1^2).

    With ``embed_input`` the first layer reads ``[inputs; e_i]``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    k = hidden_size
    p = k + embed_dim
    tensors = {}
    fan_in = input_size + (embed_dim if embed_input else 0)
    for layer in range(num_layers):
        bound = 1.0 / np.sqrt(fan_in + k)
        tensors[f"lstm{layer}_w"] = rng.uniform(-bound, bound, (fan_in + k, 4 * k))
        tensors[f"lstm{layer}_b"] = rng.uniform(-bound, bound, 4 * k)
        fan_in = k
    bound = 1.0 / np.sqrt(p)
    tensors["w_mu"] = rng.uniform(-bound, bound, p)
    tensors["w_d"] = rng.uniform(-bound, bound, p)
    tensors["w_v"] = rng.uniform(-bound, bound, (rank, p))
    tensors["embeddings"] = rng.normal(0.0, 0.1, (num_series, embed_dim))
    return NetworkParams(tensors, dropout_rate, embed_input)


@dataclass
class NetworkState:
    """Hidden and cell vectors per layer; row ``j`` belongs to one series."""

    h: list[np.ndarray]
    c: list[np.ndarray]

    @classmethod
    def zeros(cls, params: NetworkParams, rows: int) -> "NetworkState":
        k = params.hidden_size
        return cls([np.zeros((rows, k)) for _ in range(params.num_layers)],
                   [np.zeros((rows, k)) for _ in range(params.num_layers)])

    @property
    def top(self) -> np.ndarray:
        return self.h[-1]

    def rows(self, idx) -> "NetworkState":
        return NetworkState([h[idx] for h in self.h], [c[idx] for c in self.c])


@dataclass
class Tape:
    """Forward quantities recorded for the reverse pass; ``steps[t][l]`` per layer."""

    steps: list = field(default_factory=list)


def _cell(w, b, inp, h_prev, c_prev):
    x = np.concatenate([inp, h_prev], axis=1)
    a = x @ w + b
    k = h_prev.shape[1]
    i = sigmoid(a[:, :k])
    f = sigmoid(a[:, k:2 * k])
    o = sigmoid(a[:, 2 * k:3 * k])
    g = np.tanh(a[:, 3 * k:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, i, f, o, g, c_prev, tc)


def _check_finite(h, t, series_idx):
    if not np.all(np.isfinite(h)):
        row = int(np.argwhere(~np.isfinite(h))[0, 0])
        series = int(series_idx[row]) if series_idx is not None else row
        raise NumericalError(f"non-finite LSTM activation for series {series} at timestep {t}")


def lstm_step(params: NetworkParams, state: NetworkState, inputs, masks=None,
              timestep: int = 0, series_idx=None, tape_step=None) -> NetworkState:
    """Advance every row of ``state`` by one step.

    ``masks`` holds one dropout multiplier array per layer (already scaled by
    ``1/(1-p)``) or None. The next layer reads the masked output while the
    recurrence keeps the raw hidden state.
    """
    inp = np.asarray(inputs, dtype=np.float64)
    if inp.ndim == 1:
        inp = inp[None, :]
    if params.embed_input:
        if series_idx is None:
            raise ValueError("series_idx is required when embeddings feed the LSTM")
        emb = params.tensors["embeddings"][np.asarray(series_idx)]
        inp = np.concatenate([inp, np.broadcast_to(emb, (inp.shape[0], emb.shape[1]))], axis=1)
    new_h, new_c = [], []
    for layer in range(params.num_layers):
        h, c, cache = _cell(params.tensors[f"lstm{layer}_w"], params.tensors[f"lstm{layer}_b"],
                            inp, state.h[layer], state.c[layer])
        _check_finite(h, timestep, series_idx)
        new_h.append(h)
        new_c.append(c)
        out = h if masks is None else h * masks[layer]
        if tape_step is not None:
            tape_step.append(cache + (None if masks is None else masks[layer],))
        inp = out
    return NetworkState(new_h, new_c)


def top_output(state: NetworkState, masks=None) -> np.ndarray:
    return state.top if masks is None else state.top * masks[-1]


def dropout_masks(params: NetworkParams, rows: int, rng) -> list | None:
    p = params.dropout_rate
    if rng is None or p <= 0:
        return None
    return [(rng.random((rows, params.hidden_size)) >= p) / (1.0 - p)
            for _ in range(params.num_layers)]


def unroll(params: NetworkParams, inputs, series_idx=None, state=None, rng=None,
           tape: Tape | None = None):
    """Run ``inputs`` of shape ``(T, R, F)``; return top outputs ``(T, R, k)`` and final state.

    Passing ``rng`` turns dropout on (fresh masks every step).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    steps, rows = inputs.shape[:2]
    state = NetworkState.zeros(params, rows) if state is None else state
    outs = np.empty((steps, rows, params.hidden_size))
    for t in range(steps):
        masks = dropout_masks(params, rows, rng)
        rec = [] if tape is not None else None
        state = lstm_step(params, state, inputs[t], masks, t, series_idx, rec)
        if tape is not None:
            tape.steps.append(rec)
        outs[t] = top_output(state, masks)
    return outs, state


def features(params: NetworkParams, h, series_idx) -> np.ndarray:
    """Projection inputs ``y = [h; e_i]`` for rows of ``h`` (any leading shape)."""
    emb = params.tensors["embeddings"][np.asarray(series_idx)]
    emb = np.broadcast_to(emb, h.shape[:-1] + (emb.shape[-1],))
    return np.concatenate([h, emb], axis=-1)


def project_features(params: NetworkParams, y):
    """Emission parameters from projection inputs: ``(mu, d, v)``."""
    t = params.tensors
    mu = y @ t["w_mu"]
    d = softplus(y @ t["w_d"])
    v = y @ t["w_v"].T
    return mu, d, v


def project(params: NetworkParams, h, series_index):
    """``(mu_i, d_i, v_i)`` for one series with top hidden state ``h``.

    Array ``h`` of shape ``(R, k)`` with an index array of length R also
    works and returns per-row arrays.
    """
    h = np.asarray(h, dtype=np.float64)
    return project_features(params, features(params, h, series_index))


def emission(params: NetworkParams, h, series_idx) -> LowRankGaussian:
    """Joint emission over the rows of ``h`` (one row per series)."""
    mu, d, v = project(params, h, series_idx)
    return LowRankGaussian(mu, d, v)


def kernel_eval(params: NetworkParams, y, y2) -> float:
    """GP-view covariance ``1[y == y2] d(y) + v(y) . v(y2)`` between feature vectors."""
    y = np.asarray(y, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    _, d, v = project_features(params, y)
    _, _, v2 = project_features(params, y2)
    same = float(np.array_equal(y, y2))
    return same * float(d) + float(v @ v2)


def window_inputs(x_rows, covariates, lags, start: int, length: int) -> np.ndarray:
    """Network inputs for positions ``start .. start+length-1``, shape ``(length, R, F)``.

    Features per row are the lagged transformed values ``x[t - l]`` for each
    lag ``l`` (zero before the start of the series) followed by the
    time covariates of step ``t``.
    """
    x_rows = np.asarray(x_rows, dtype=np.float64)
    lags = np.asarray(lags, dtype=np.int64)
    rows = x_rows.shape[0]
    idx = start + np.arange(length)[:, None] - lags[None, :]
    valid = idx >= 0
    lagged = x_rows[:, np.clip(idx, 0, None)] * valid
    lagged = np.transpose(lagged, (1, 0, 2))
    cov = np.asarray(covariates, dtype=np.float64)[start:start + length]
    cov = np.broadcast_to(cov[:, None, :], (length, rows, cov.shape[1]))
    return np.concatenate([lagged, cov], axis=-1)


def loss_and_grads(params: NetworkParams, batch, rng=None, return_parts=False):
    """Mean negative log-likelihood per time step and series, with gradients.

    ``batch`` is one training instance or a sequence of them; each exposes
    ``inputs`` ``(L, B, F)``, ``targets`` ``(L, B)`` on the transformed scale
    and ``series_indices`` ``(B,)``. Every step of the window contributes a
    B-dimensional low-rank Gaussian term. ``rng`` switches dropout on.
    """
    if hasattr(batch, "inputs"):
        batch = [batch]
    inputs = np.concatenate([inst.inputs for inst in batch], axis=1)
    targets = np.stack([inst.targets for inst in batch], axis=1)  # (L, n, B)
    series_idx = np.concatenate([inst.series_indices for inst in batch])
    steps, n_inst, b = targets.shape
    rows = n_inst * b

    tape = Tape()
    outs, _ = unroll(params, inputs, series_idx, rng=rng, tape=tape)
    y = features(params, outs, series_idx)  # (L, R, p)
    t = params.tensors
    mu = y @ t["w_mu"]
    pre_d = y @ t["w_d"]
    d = softplus(pre_d)
    v = y @ t["w_v"].T
    r = v.shape[-1]

    nll, dmu, dd, dv = batch_nll_and_grads(
        mu.reshape(steps * n_inst, b), d.reshape(steps * n_inst, b),
        v.reshape(steps * n_inst, b, r), targets.reshape(steps * n_inst, b),
    )
    if not np.all(np.isfinite(nll)):
        bad = int(np.argwhere(~np.isfinite(nll))[0, 0]) // n_inst
        raise NumericalError(f"non-finite loss at window step {bad}")
    scale = 1.0 / (steps * n_inst * b)
    loss = float(np.sum(nll)) * scale

    dmu = dmu.reshape(steps, rows) * scale
    dpre = dd.reshape(steps, rows) * scale * sigmoid(pre_d)
    dv = dv.reshape(steps, rows, r) * scale

    grads = params.zeros_like()
    p_dim = y.shape[-1]
    y2 = y.reshape(-1, p_dim)
    grads["w_mu"] = y2.T @ dmu.reshape(-1)
    grads["w_d"] = y2.T @ dpre.reshape(-1)
    grads["w_v"] = dv.reshape(-1, r).T @ y2
    dy = dmu[..., None] * t["w_mu"] + dpre[..., None] * t["w_d"] + dv @ t["w_v"]
    k = params.hidden_size
    np.add.at(grads["embeddings"], series_idx, dy[..., k:].sum(axis=0))
    _backward_lstm(params, tape, dy[..., :k], grads, series_idx)
    if return_parts:
        return loss, grads, {"nll": nll.reshape(steps, n_inst), "mu": mu, "d": d, "v": v}
    return loss, grads


def _backward_lstm(params: NetworkParams, tape: Tape, d_top, grads, series_idx=None) -> None:
    """Accumulate LSTM weight gradients given dLoss/d(top output) of shape ``(T, R, k)``."""
    layers = params.num_layers
    k = params.hidden_size
    rows = d_top.shape[1]
    dh_rec = [np.zeros((rows, k)) for _ in range(layers)]
    dc_rec = [np.zeros((rows, k)) for _ in range(layers)]
    for t in range(len(tape.steps) - 1, -1, -1):
        d_out = d_top[t]
        for layer in range(layers - 1, -1, -1):
            x, i, f, o, g, c_prev, tc, mask = tape.steps[t][layer]
            w = params.tensors[f"lstm{layer}_w"]
            dh = (d_out if mask is None else d_out * mask) + dh_rec[layer]
            dc = dh * o * (1.0 - tc * tc) + dc_rec[layer]
            da = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dh * tc * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ], axis=1)
            grads[f"lstm{layer}_w"] += x.T @ da
            grads[f"lstm{layer}_b"] += da.sum(axis=0)
            dx = da @ w.T
            n_in = x.shape[1] - k
            dh_rec[layer] = dx[:, n_in:]
            dc_rec[layer] = dc * f
            d_out = dx[:, :n_in]
        if params.embed_input:
            np.add.at(grads["embeddings"], series_idx, d_out[:, -params.embed_dim:])


def gradient_check(params: NetworkParams, batch, h: float = 1e-5, corrupt: str | None = None):
    """Compare analytic gradients with central finite differences, tensor by tensor.

    Returns ``{name: relative_error}`` with the error measured as
    ``|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|)`` in the
    Euclidean norm over the tensor. ``corrupt`` names a tensor whose analytic
    gradient is deliberately perturbed (a hook for testing the check itself).
    """
    _, grads = loss_and_grads(params, batch)
    if corrupt is not None:
        grads[corrupt] = grads[corrupt] * 1.01 + 1e-3
    errors = {}
    for name, tensor in params.tensors.items():
        num = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        num_flat = num.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up, _ = loss_and_grads(params, batch)
            flat[j] = old - h
            down, _ = loss_and_grads(params, batch)
            flat[j] = old
            num_flat[j] = (up - down) / (2.0 * h)
        denom = max(np.linalg.norm(grads[name]), np.linalg.norm(num), 1e-300)
        errors[name] = float(np.linalg.norm(grads[name] - num) / denom)
    return errors


CHECKPOINT_FORMAT = "gpcopula-checkpoint-v1"


def save_checkpoint(path, params: NetworkParams, transforms, meta: dict | None = None) -> None:
    """Write an ``.npz`` container; see the README for the key layout."""
    arrays = {f"param.{k}": v for k, v in params.tensors.items()}
    if all(t.cdf is None for t in transforms):
        kind = "affine"
        arrays["affine.loc"] = np.array([t.loc for t in transforms], dtype=np.float64)
        arrays["affine.scale"] = np.array([t.scale for t in transforms], dtype=np.float64)
    elif any(t.cdf is None for t in transforms):
        raise ValueError("cannot mix ECDF and affine transforms in one checkpoint")
    else:
        kind = "copula"
    if kind == "copula":
        arrays["ecdf.values"] = np.stack([t.cdf.sorted_values for t in transforms])
        arrays["ecdf.delta"] = np.array([t.cdf.delta for t in transforms])
        arrays["ecdf.jitter"] = np.array([t.cdf.jitter_scale for t in transforms])
    header = {
        "format": CHECKPOINT_FORMAT,
        "dropout_rate": params.dropout_rate,
        "embed_input": params.embed_input,
        "transform": kind,
        "num_series": len(transforms),
        "shapes": {k: list(v.shape) for k, v in params.tensors.items()},
        "meta": meta or {},
    }
    arrays["header"] = np.array(json.dumps(header, sort_keys=True))
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".npz")
    os.close(fd)
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Return ``(params, transforms, meta)`` from :func:`save_checkpoint` output."""
    with np.load(path, allow_pickle=False) as data:
        if "header" not in data:
            raise DataError(f"{path}: not a checkpoint (missing header)")
        header = json.loads(str(data["header"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
        tensors = {k[len("param."):]: data[k].copy() for k in data.files if k.startswith("param.")}
        if header["transform"] == "copula":
            vals, deltas, jit = data["ecdf.values"], data["ecdf.delta"], data["ecdf.jitter"]
            transforms = [MarginalTransform(EmpiricalCdf(vals[i].copy(), float(deltas[i]), float(jit[i])))
                          for i in range(vals.shape[0])]
        else:
            loc, scale = data["affine.loc"], data["affine.scale"]
            transforms = [MarginalTransform(None, float(loc[i]), float(scale[i]))
                          for i in range(header["num_series"])]
    params = NetworkParams(tensors, header["dropout_rate"], bool(header.get("embed_input", False)))
    return params, transforms, header["meta"]
