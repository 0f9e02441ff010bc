"""Command-line entry point: ``gpcopula {synth,train,forecast,evaluate,gradcheck,bench}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import logging
import os
import sys

import numpy as np

from gpcopula import config as config_mod
from gpcopula import metrics
from gpcopula.data import (
    TimeSeriesPanel,
    atomic_write_text,
    read_panel,
    rolling_windows,
    write_panel,
)
from gpcopula.errors import ConfigError, DataError, GPCopulaError, NumericalError
from gpcopula.forecasting import (
    condition,
    covariance_trace,
    forecast,
    read_samples,
    write_covariance_trace,
    write_quantiles,
    write_samples,
)
from gpcopula.net import gradient_check, init_params, load_checkpoint, save_checkpoint
from gpcopula.synthetic import generate, read_covariance_csv, write_truth
from gpcopula.training import TrainConfig, TrainingInstance, fit, prepare

log = logging.getLogger("gpcopula")

DEFAULTS_EPILOG = """\
training defaults (JSON section "train"):
  learning_rate 1e-3, hidden_size (LSTM cells) 40, num_layers 2, rank 10,
  num_eval_samples 400, ecdf_size (m) 100, dim_batch (B) 20, dropout 0.01,
  batch_size 16, l2 1e-8, clip_norm 10.0, total_updates 10000,
  decay_patience 500, decay_factor 2.0, context_length = horizon
"""

CHECKPOINT = "checkpoint.npz"
LOSS_TRACE = "loss_trace.csv"
MANIFEST = "manifest.json"


def _write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _resolve(args) -> config_mod.RunConfig:
    cfg = config_mod.load(getattr(args, "config", None))
    return config_mod.with_overrides(
        cfg,
        rank=getattr(args, "rank", None),
        seed=getattr(args, "seed", None),
        num_eval_samples=getattr(args, "num_eval_samples", None),
        horizon=getattr(args, "horizon", None),
        windows=getattr(args, "windows", None),
        total_updates=getattr(args, "updates", None),
    )


def _out_dir(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc.strerror}") from None
    return path


def _load_panel(path, frequency, domain=None) -> TimeSeriesPanel:
    if path is None:
        raise ConfigError("no panel given (use --panel or data.panel in the config)")
    if not os.path.exists(path):
        raise DataError(f"panel file not found: {path}")
    return read_panel(path, frequency, domain)


def _train_end(length: int, cfg: config_mod.RunConfig) -> int:
    if cfg.eval.windows == 0:
        return length
    windows = rolling_windows(length, cfg.train.horizon, cfg.eval.windows, cfg.eval.stride)
    return windows[0][0]


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    cfg = _resolve(args)
    changes = {}
    if args.num_series is not None:
        changes["N"] = args.num_series
    if args.length is not None:
        changes["T"] = args.length
    try:
        spec = dataclasses.replace(cfg.synth, **changes)
    except ConfigError:
        raise
    out = _out_dir(args.out_dir)
    panel, truth = generate(spec)
    write_panel(panel, os.path.join(out, "panel.csv"))
    write_truth(truth, os.path.join(out, "truth.csv"))
    print(f"wrote {os.path.join(out, 'panel.csv')} (N={spec.N}, T={spec.T}) and truth.csv")
    return 0


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    cfg = _resolve(args)
    panel_path = args.panel or cfg.data.panel
    frequency = args.frequency or cfg.data.frequency
    panel = _load_panel(panel_path, frequency, args.domain or cfg.data.domain)
    tcfg = cfg.train
    if panel.length < tcfg.window_length:
        raise DataError(
            f"panel has {panel.length} steps, shorter than the training window T'+tau = {tcfg.window_length}"
        )
    train_end = _train_end(panel.length, cfg)
    out = _out_dir(args.out_dir)
    meta = {
        "config": cfg.to_dict(),
        "panel": os.path.abspath(panel_path),
        "frequency": panel.frequency,
        "domain": list(panel.domain),
        "series_ids": list(panel.series_ids),
        "train_end": train_end,
    }
    ckpt = os.path.join(out, CHECKPOINT)

    def periodic(update, params, transforms):
        save_checkpoint(ckpt, params, transforms, dict(meta, updates=update))

    result = fit(panel.head(train_end), tcfg, callback=periodic)
    save_checkpoint(ckpt, result.params, result.transforms, dict(meta, updates=tcfg.total_updates))
    buf = io.StringIO()
    buf.write("update_index,loss,learning_rate\n")
    for update, loss, lr in result.trace:
        buf.write(f"{update},{float(loss)!r},{float(lr)!r}\n")
    atomic_write_text(os.path.join(out, LOSS_TRACE), buf.getvalue())
    _write_json(os.path.join(out, "run_config.json"), cfg.to_dict())
    if args.plot and result.trace:
        from gpcopula.plotting import plot_loss_trace

        rows = np.array(result.trace, dtype=float)
        plot_loss_trace(os.path.join(out, "loss_trace.png"), rows[:, 0], rows[:, 1], rows[:, 2])
    losses = result.losses()
    summary = f"final loss {losses[-1]:.4f}" if len(losses) else "no updates"
    print(f"trained on {train_end} steps, {tcfg.total_updates} updates, {summary}; wrote {ckpt}")
    return 0


# ---------------------------------------------------------------- forecast

def _checkpoint_config(meta, args) -> config_mod.RunConfig:
    cfg = config_mod.from_dict(meta.get("config", {}))
    return config_mod.with_overrides(
        cfg, seed=args.seed, num_eval_samples=args.num_eval_samples, windows=args.windows,
    )


def cmd_forecast(args) -> int:
    params, transforms, meta = load_checkpoint(args.checkpoint)
    cfg = _checkpoint_config(meta, args)
    tcfg = cfg.train
    panel_path = args.panel or meta.get("panel")
    panel = _load_panel(panel_path, meta.get("frequency", cfg.data.frequency), meta.get("domain"))
    if list(panel.series_ids) != list(meta.get("series_ids", panel.series_ids)):
        raise DataError("panel series ids do not match the checkpoint")
    if len(transforms) != panel.num_series:
        raise DataError(f"checkpoint has {len(transforms)} series, panel has {panel.num_series}")
    data = prepare(panel, tcfg, None, transforms=transforms)
    horizon = tcfg.horizon
    out = _out_dir(args.out_dir)

    if cfg.eval.windows == 0:
        origins = [panel.length]
    else:
        origins = [w[0] for w in rolling_windows(panel.length, horizon, cfg.eval.windows, cfg.eval.stride)]
    entries = []
    for k, origin in enumerate(origins):
        fc = forecast(params, data, origin, tcfg.context, horizon, tcfg.num_eval_samples, tcfg.seed + k)
        samples_name = f"samples_w{k}.csv"
        quant_name = f"quantiles_w{k}.csv"
        write_samples(fc, os.path.join(out, samples_name))
        write_quantiles(fc, os.path.join(out, quant_name))
        entry = {"origin": origin, "start_time": str(fc.start_time), "samples": samples_name,
                 "quantiles": quant_name, "actuals": None}
        if origin + horizon <= panel.length:
            actual = TimeSeriesPanel(
                panel.values[:, origin:origin + horizon], list(panel.series_ids),
                list(panel.timestamps[origin:origin + horizon]), panel.frequency, list(panel.domain),
            )
            entry["actuals"] = f"actuals_w{k}.csv"
            write_panel(actual, os.path.join(out, entry["actuals"]))
        entries.append(entry)
    manifest = {
        "frequency": panel.frequency,
        "series_ids": list(panel.series_ids),
        "horizon": horizon,
        "num_samples": tcfg.num_eval_samples,
        "seed": tcfg.seed,
        "windows": entries,
    }

    if args.cov_trace or cfg.eval.cov_trace:
        start = args.cov_start if args.cov_start is not None else int(meta.get("train_end", tcfg.context))
        end = args.cov_end if args.cov_end is not None else panel.length
        if not 0 <= start < end <= panel.length:
            raise ConfigError(f"covariance trace range [{start}, {end}) outside the panel")
        means, covs = covariance_trace(params, data, start, end, tcfg.context)
        if all(tr.cdf is None for tr in transforms):
            # affine marginals: report on the data scale
            loc = np.array([tr.loc for tr in transforms])
            scale = np.array([tr.scale for tr in transforms])
            means = means * scale + loc
            covs = covs * scale[None, :, None] * scale[None, None, :]
            manifest["cov_trace_scale"] = "data"
        else:
            manifest["cov_trace_scale"] = "gaussian"
        t = np.arange(start, end)
        write_covariance_trace(os.path.join(out, "cov_trace.csv"), t, means, covs)
        manifest["cov_trace"] = "cov_trace.csv"
        if args.plot:
            from gpcopula.plotting import plot_covariance_trace

            true_covs = None
            if args.truth:
                tt, _, tc = read_covariance_csv(args.truth)
                pos = {int(v): j for j, v in enumerate(tt)}
                if any(int(v) not in pos for v in t):
                    raise DataError(f"{args.truth} does not cover steps {start}..{end - 1}")
                true_covs = tc[[pos[int(v)] for v in t]]
            plot_covariance_trace(os.path.join(out, "cov_trace.png"), t, covs, true_covs, args.plot_steps)
    _write_json(os.path.join(out, MANIFEST), manifest)
    print(f"wrote {len(entries)} forecast window(s) with {tcfg.num_eval_samples} samples to {out}")
    return 0


# ---------------------------------------------------------------- evaluate

def evaluate_manifest(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    base = os.path.dirname(os.path.abspath(path))
    scores = []
    for w in manifest["windows"]:
        if not w.get("actuals"):
            continue
        actual = read_panel(os.path.join(base, w["actuals"]), manifest["frequency"])
        samples = read_samples(os.path.join(base, w["samples"]), list(actual.series_ids))
        if samples.shape[1:] != actual.values.shape:
            raise DataError(
                f"window at {w['origin']}: samples {samples.shape[1:]} vs actuals {actual.values.shape}"
            )
        scores.append(metrics.evaluate(samples, actual.values))
    if not scores:
        raise DataError(f"{path}: no window has actuals to score against")
    report = metrics.summarize(scores, manifest["num_samples"], manifest["horizon"])
    report["per_window"] = scores
    return report


def cmd_evaluate(args) -> int:
    report = evaluate_manifest(args.manifest)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.manifest)), "metrics.json")
    _write_json(out, report)
    print(json.dumps({k: v for k, v in report.items() if k != "per_window"}, sort_keys=True))
    return 0


# ---------------------------------------------------------------- gradcheck

def tiny_gradcheck(seed: int = 0, corrupt: str | None = None) -> dict:
    """Finite-difference check on a 3-series, 2-layer model with 4 cells over 5 steps."""
    rng = np.random.default_rng(seed)
    n, b, k, r, e, steps, feats = 3, 2, 4, 2, 2, 5, 3
    params = init_params(n, feats, k, 2, r, e, 0.0, rng, embed_input=True)
    batch = [
        TrainingInstance(rng.choice(n, b, replace=False), 0, rng.normal(size=(steps, b, feats)),
                         rng.normal(size=(steps, b)))
        for _ in range(2)
    ]
    return gradient_check(params, batch, corrupt=corrupt)


def cmd_gradcheck(args) -> int:
    errors = tiny_gradcheck(args.seed or 0, args.corrupt)
    worst = max(errors.values())
    for name, err in errors.items():
        print(f"{name:14s} {err:.3e}")
    status = "PASS" if worst <= args.tolerance else "FAIL"
    print(f"worst relative error {worst:.3e} (tolerance {args.tolerance:g}): {status}")
    if status == "FAIL":
        raise NumericalError(f"gradient check failed: worst relative error {worst:.3e}")
    return 0


# ---------------------------------------------------------------- bench

def bench_rollout_model(seed: int = 0, num_series: int = 4, length: int = 600, horizon: int = 24):
    """Untrained network on a short synthetic panel; timing does not depend on the weights."""
    from gpcopula.synthetic import SyntheticSpec

    panel, _ = generate(SyntheticSpec(N=num_series, T=length, seed=seed))
    tcfg = TrainConfig(rank=2, transform="identity", lags=[1], horizon=horizon, seed=seed)
    rng = np.random.default_rng(seed)
    data = prepare(panel, tcfg, rng)
    params = init_params(num_series, data.input_size, tcfg.hidden_size, tcfg.num_layers, tcfg.rank,
                         tcfg.embed_dim, tcfg.dropout, rng, tcfg.embed_input)
    state = condition(params, data, length, tcfg.context)
    return params, state, data, length, horizon


def cmd_bench(args) -> int:
    from gpcopula import bench

    out = _out_dir(args.out_dir)
    seed = args.seed or 0
    rows = bench.time_logpdf(seed=seed)
    ratios = dict(bench.scaling_ratios(rows))
    buf = io.StringIO()
    buf.write("N,seconds,ratio_2N_over_N\n")
    for n, sec in rows:
        buf.write(f"{n},{float(sec)!r},{float(ratios.get(n, float('nan')))!r}\n")
    atomic_write_text(os.path.join(out, "bench_logpdf.csv"), buf.getvalue())
    dense = bench.time_dense(512, seed=seed)
    t4096 = dict(rows)[4096]
    speedup = dense * (4096 / 512) ** 3 / t4096

    params, state, data, origin, horizon = bench_rollout_model(seed)
    roll = bench.time_rollout(params, state, data, origin, horizon, (100, 200, 400), seed)
    buf = io.StringIO()
    buf.write("S,seconds,ratio_to_S100\n")
    for s, sec in roll:
        buf.write(f"{s},{float(sec)!r},{float(sec / roll[0][1])!r}\n")
    atomic_write_text(os.path.join(out, "bench_rollout.csv"), buf.getvalue())

    print("N      seconds     t(2N)/t(N)")
    for n, sec in rows:
        print(f"{n:<6d} {sec:.3e}   {ratios.get(n, float('nan')):.2f}")
    print(f"dense N=512 {dense:.3e} s; cubic extrapolation to 4096 is {speedup:.0f}x the low-rank time")
    print("S      seconds     ratio to S=100")
    for s, sec in roll:
        print(f"{s:<6d} {sec:.3e}   {sec / roll[0][1]:.2f}")
    if args.plot:
        from gpcopula.plotting import plot_bench

        plot_bench(os.path.join(out, "bench.png"), rows, roll)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="gpcopula", description="Low-rank Gaussian-copula process forecasting.",
        epilog=DEFAULTS_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, overrides=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        if overrides:
            p.add_argument("--rank", type=int, help="covariance factor rank r")
            p.add_argument("--horizon", type=int, help="forecast horizon tau (also the context length)")
            p.add_argument("--windows", type=int, help="rolling evaluation windows held out (0: none)")
            p.add_argument("--num-eval-samples", type=int, help="sample paths per forecast")

    p = sub.add_parser("synth", help="generate the synthetic rank-2 panel and its truth file",
                       formatter_class=fmt)
    common(p, overrides=False)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-series", type=int, help="N (default 4)")
    p.add_argument("--length", type=int, help="T (default 24000)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model and write a checkpoint and loss trace",
                       epilog=DEFAULTS_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p.add_argument("--panel", help="panel CSV (overrides data.panel)")
    p.add_argument("--frequency", help="30min, hourly, daily or index (overrides data.frequency)")
    p.add_argument("--domain", choices=["real", "count"], help="force the domain of every series")
    p.add_argument("--updates", type=int, help="total gradient updates (default 10000)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--plot", action="store_true", help="also render loss_trace.png")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="sample joint forecasts from a checkpoint", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--panel", help="panel CSV (default: the one used for training)")
    p.add_argument("--seed", type=int)
    p.add_argument("--windows", type=int, help="rolling windows (default: as trained)")
    p.add_argument("--num-eval-samples", type=int, help="sample paths (default 400)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cov-trace", action="store_true", help="write the one-step-ahead covariance trace")
    p.add_argument("--cov-start", type=int, help="first step of the trace (default: end of training range)")
    p.add_argument("--cov-end", type=int, help="end of the trace, exclusive (default: panel end)")
    p.add_argument("--truth", help="synthetic truth CSV drawn alongside the predicted trace")
    p.add_argument("--plot", action="store_true", help="render cov_trace.png")
    p.add_argument("--plot-steps", type=int, default=1000, help="steps shown in the trace figure")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="score forecast windows against actuals", formatter_class=fmt)
    p.add_argument("--manifest", required=True, help="manifest.json written by forecast")
    p.add_argument("--out", help="metrics JSON path (default: next to the manifest)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients",
                       formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="timing of logpdf versus N and rollout versus S",
                       formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--plot", action="store_true", help="render bench.png")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GPCopulaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
