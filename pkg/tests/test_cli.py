import csv
import json

import numpy as np
import pytest

from gpcopula.cli import evaluate_manifest, main
from gpcopula.data import TimeSeriesPanel, write_panel
from gpcopula.forecasting import ForecastSamples, write_samples

SMALL = {
    "train": {"total_updates": 6, "batch_size": 2, "hidden_size": 6, "num_layers": 2, "embed_dim": 2,
              "rank": 2, "horizon": 4, "lags": [1], "transform": "identity", "num_eval_samples": 20},
    "synth": {"N": 3, "T": 120},
    "data": {"frequency": "index"},
    "eval": {"windows": 2},
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def pipeline(tmp_path, cfg_path, tag, seed=3):
    d = tmp_path / tag
    assert main(["synth", "--config", str(cfg_path), "--seed", str(seed), "--out-dir", str(d)]) == 0
    assert main(["train", "--config", str(cfg_path), "--panel", str(d / "panel.csv"), "--seed", str(seed),
                 "--out-dir", str(d / "model")]) == 0
    assert main(["forecast", "--checkpoint", str(d / "model" / "checkpoint.npz"), "--out-dir", str(d / "fc"),
                 "--cov-trace"]) == 0
    assert main(["evaluate", "--manifest", str(d / "fc" / "manifest.json")]) == 0
    return d


def test_full_pipeline_outputs(tmp_path, cfg_path, capsys):
    d = pipeline(tmp_path, cfg_path, "a")
    assert len(rows(d / "panel.csv")) == 1 + 120 and len(rows(d / "panel.csv")[0]) == 1 + 3
    assert len(rows(d / "truth.csv")) == 1 + 120
    trace = rows(d / "model" / "loss_trace.csv")
    assert trace[0] == ["update_index", "loss", "learning_rate"] and len(trace) == 1 + 6
    man = json.loads((d / "fc" / "manifest.json").read_text())
    assert [w["origin"] for w in man["windows"]] == [112, 116] and man["num_samples"] == 20
    assert len(rows(d / "fc" / "samples_w0.csv")) == 1 + 20 * 3 * 4
    assert len(rows(d / "fc" / "quantiles_w1.csv")) == 1 + 3 * 4
    cov = rows(d / "fc" / "cov_trace.csv")
    assert len(cov[0]) == 1 + 3 + 6 and len(cov) == 1 + 120 - 112
    report = json.loads((d / "fc" / "metrics.json").read_text())
    for key in ("crps", "crps_sum", "mse", "mse_sum", "num_samples", "horizon", "windows"):
        assert key in report
    assert report["windows"] == 2
    assert report["crps"] == pytest.approx(np.mean([w["crps"] for w in report["per_window"]]))


def test_pipeline_bitwise_deterministic(tmp_path, cfg_path):
    a = pipeline(tmp_path, cfg_path, "a")
    b = pipeline(tmp_path, cfg_path, "b")
    for rel in ("panel.csv", "model/loss_trace.csv", "fc/samples_w1.csv", "fc/metrics.json", "fc/cov_trace.csv"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    c = pipeline(tmp_path, cfg_path, "c", seed=4)
    assert (a / "panel.csv").read_bytes() != (c / "panel.csv").read_bytes()


def test_plots_written(tmp_path, cfg_path):
    d = tmp_path / "p"
    main(["synth", "--config", str(cfg_path), "--out-dir", str(d)])
    assert main(["train", "--config", str(cfg_path), "--panel", str(d / "panel.csv"),
                 "--out-dir", str(d / "m"), "--plot"]) == 0
    assert (d / "m" / "loss_trace.png").stat().st_size > 0
    assert main(["forecast", "--checkpoint", str(d / "m" / "checkpoint.npz"), "--out-dir", str(d / "f"),
                 "--cov-trace", "--cov-start", "50", "--truth", str(d / "truth.csv"), "--plot"]) == 0
    assert (d / "f" / "cov_trace.png").stat().st_size > 0
    assert not list(d.rglob("*.tmp*"))


def test_forecast_beyond_end_without_actuals(tmp_path, cfg_path):
    d = tmp_path / "z"
    main(["synth", "--config", str(cfg_path), "--out-dir", str(d)])
    assert main(["train", "--config", str(cfg_path), "--panel", str(d / "panel.csv"), "--windows", "0",
                 "--out-dir", str(d / "m")]) == 0
    assert main(["forecast", "--checkpoint", str(d / "m" / "checkpoint.npz"), "--out-dir", str(d / "f"),
                 "--num-eval-samples", "5"]) == 0
    man = json.loads((d / "f" / "manifest.json").read_text())
    assert man["windows"][0]["origin"] == 120 and man["windows"][0]["actuals"] is None
    assert len(rows(d / "f" / "samples_w0.csv")) == 1 + 5 * 3 * 4
    assert main(["evaluate", "--manifest", str(d / "f" / "manifest.json")]) == 3


def test_perfect_forecast_scores_zero(tmp_path):
    actual = np.arange(6.0).reshape(2, 3)
    write_panel(TimeSeriesPanel(actual, ["a", "b"], [10, 11, 12], "index"), tmp_path / "act.csv")
    write_samples(ForecastSamples(np.repeat(actual[None], 4, axis=0), 10, 10, "index", ["a", "b"]), tmp_path / "s.csv")
    man = {"frequency": "index", "series_ids": ["a", "b"], "horizon": 3, "num_samples": 4, "seed": 0,
           "windows": [{"origin": 10, "samples": "s.csv", "actuals": "act.csv"}]}
    (tmp_path / "manifest.json").write_text(json.dumps(man))
    rep = evaluate_manifest(tmp_path / "manifest.json")
    assert rep["crps"] == rep["crps_sum"] == rep["mse"] == rep["mse_sum"] == 0.0


def test_gradcheck_pass_and_corrupt(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "w_v" in out and "embeddings" in out and "PASS" in out
    assert main(["gradcheck", "--corrupt", "w_mu"]) == 4
    assert "FAIL" in capsys.readouterr().out


def test_exit_codes(tmp_path, cfg_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"learning_rat": 1.0}}))
    assert main(["synth", "--config", str(bad), "--out-dir", str(tmp_path / "x")]) == 2
    assert "learning_rat" in capsys.readouterr().err
    assert main(["train", "--config", str(cfg_path), "--panel", str(tmp_path / "none.csv"),
                 "--out-dir", str(tmp_path / "m")]) == 3
    short = tmp_path / "short.csv"
    short.write_text("timestamp,a\n0,1\n1,2\n2,3\n")
    assert main(["train", "--config", str(cfg_path), "--panel", str(short), "--out-dir", str(tmp_path / "m")]) == 3
    assert main(["train", "--config", str(cfg_path), "--rank", "0", "--panel", str(short),
                 "--out-dir", str(tmp_path / "m")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        main(["train", "--help"])
    out = capsys.readouterr().out
    for text in ("learning_rate 1e-3", "rank 10", "num_eval_samples 400", "clip_norm 10.0"):
        assert text in out


def test_bench_rows(tmp_path, monkeypatch, capsys):
    from gpcopula import bench

    monkeypatch.setattr(bench, "time_logpdf", lambda seed=0: [(1024, 1.0), (2048, 2.0), (4096, 4.1), (8192, 8.0)])
    monkeypatch.setattr(bench, "time_dense", lambda n, seed=0: 1.0)
    monkeypatch.setattr(bench, "time_rollout", lambda *a, **k: [(100, 1.0), (200, 2.0), (400, 4.0)])
    assert main(["bench", "--out-dir", str(tmp_path), "--plot"]) == 0
    lp = rows(tmp_path / "bench_logpdf.csv")
    assert [r[0] for r in lp[1:]] == ["1024", "2048", "4096", "8192"]
    assert float(lp[1][2]) == 2.0 and float(lp[2][2]) == pytest.approx(4.1 / 2)
    ro = rows(tmp_path / "bench_rollout.csv")
    assert [r[0] for r in ro[1:]] == ["100", "200", "400"] and float(ro[3][2]) == 4.0
    assert (tmp_path / "bench.png").exists()


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "gpcopula", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gradcheck" in res.stdout


def test_cov_trace_on_data_scale_for_standardized_model(tmp_path):
    from gpcopula.data import read_panel
    from gpcopula.forecasting import covariance_trace
    from gpcopula.net import load_checkpoint
    from gpcopula.synthetic import read_covariance_csv
    from gpcopula.training import TrainConfig, prepare

    doc = json.loads(json.dumps(SMALL))
    doc["train"]["transform"] = "standardize"
    doc["eval"]["cov_trace"] = True
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(doc))
    main(["synth", "--config", str(cfg_path), "--out-dir", str(tmp_path)])
    main(["train", "--config", str(cfg_path), "--panel", str(tmp_path / "panel.csv"), "--out-dir", str(tmp_path / "m")])
    assert main(["forecast", "--checkpoint", str(tmp_path / "m" / "checkpoint.npz"), "--out-dir", str(tmp_path / "f")]) == 0
    man = json.loads((tmp_path / "f" / "manifest.json").read_text())
    assert man["cov_trace_scale"] == "data"
    t, means, covs = read_covariance_csv(tmp_path / "f" / man["cov_trace"])
    params, transforms, _ = load_checkpoint(tmp_path / "m" / "checkpoint.npz")
    data = prepare(read_panel(tmp_path / "panel.csv", "index"), TrainConfig(**doc["train"]), None, transforms=transforms)
    m2, c2 = covariance_trace(params, data, int(t[0]), int(t[-1]) + 1, 4)
    s = np.array([tr.scale for tr in transforms])
    np.testing.assert_allclose(covs, c2 * np.outer(s, s), rtol=1e-12)
    np.testing.assert_allclose(means, m2 * s + np.array([tr.loc for tr in transforms]), rtol=1e-12)
