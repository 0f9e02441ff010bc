"""Panel ingestion, calendar covariates, lag sets and rolling evaluation windows.

Panel CSV layout: a header ``timestamp,<id1>,<id2>,...`` followed by one row
per timestamp. Timestamps are ISO-8601 strings, or plain integers when the
frequency is ``index`` (integer mode has no calendar features).
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from gpcopula.errors import DataError

FREQUENCIES = ("30min", "hourly", "daily", "index")

_ALIASES = {
    "30min": "30min", "30t": "30min", "30m": "30min", "half-hourly": "30min",
    "hourly": "hourly", "h": "hourly", "1h": "hourly", "hour": "hourly",
    "daily": "daily", "d": "daily", "1d": "daily", "day": "daily",
    "index": "index", "int": "index", "integer": "index",
}

_STEP = {
    "30min": timedelta(minutes=30),
    "hourly": timedelta(hours=1),
    "daily": timedelta(days=1),
}

DEFAULT_LAGS = {
    "hourly": [1, 24, 168],
    "daily": [1, 7, 14],
    "30min": [1, 2, 4, 12, 24, 48],
    "index": [1],
}


def normalize_frequency(freq: str) -> str:
    try:
        return _ALIASES[freq.strip().lower()]
    except KeyError:
        raise DataError(f"unknown frequency {freq!r}; expected one of {FREQUENCIES}") from None


@dataclass
class TimeSeriesPanel:
    values: np.ndarray  # N x T
    series_ids: list[str]
    timestamps: list  # datetime objects, or ints in index mode
    frequency: str
    domain: list[str] = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError("panel values must be an N x T matrix")
        self.frequency = normalize_frequency(self.frequency)
        if len(self.series_ids) != self.values.shape[0]:
            raise DataError("series_ids length does not match N")
        if len(self.timestamps) != self.values.shape[1]:
            raise DataError("timestamps length does not match T")
        if self.domain is None:
            self.domain = infer_domain(self.values)

    @property
    def num_series(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def head(self, end: int) -> "TimeSeriesPanel":
        """Panel restricted to time indices ``[0, end)``."""
        return TimeSeriesPanel(
            self.values[:, :end], list(self.series_ids), list(self.timestamps[:end]),
            self.frequency, list(self.domain),
        )

    def future_timestamps(self, start: int, count: int) -> list:
        """Timestamps for indices ``start .. start+count-1``, extrapolating past the end."""
        out = []
        for j in range(start, start + count):
            if j < self.length:
                out.append(self.timestamps[j])
            elif self.frequency == "index":
                out.append(self.timestamps[-1] + (j - self.length + 1))
            else:
                out.append(self.timestamps[-1] + _STEP[self.frequency] * (j - self.length + 1))
        return out


def infer_domain(values: np.ndarray) -> list[str]:
    out = []
    for row in np.asarray(values):
        is_count = bool(np.all(row >= 0) and np.all(np.floor(row) == row))
        out.append("count" if is_count else "real")
    return out


def _parse_time(text: str, frequency: str, row: int):
    text = text.strip()
    if frequency == "index":
        try:
            return int(text)
        except ValueError:
            raise DataError(f"row {row}: integer timestamp expected, got {text!r}") from None
    try:
        return datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise DataError(f"row {row}: unparseable timestamp {text!r}") from None


def _check_spacing(timestamps: list, frequency: str) -> None:
    step = 1 if frequency == "index" else _STEP[frequency]
    for j in range(1, len(timestamps)):
        prev, cur = timestamps[j - 1], timestamps[j]
        if cur <= prev:
            raise DataError(f"row {j + 2}: timestamp {cur} is not after {prev}")
        if cur - prev != step:
            diff = cur - prev
            if diff % step == (0 if frequency == "index" else timedelta(0)):
                raise DataError(f"row {j + 2}: gap in timestamps, expected {prev + step} before {cur}")
            raise DataError(f"row {j + 2}: timestamp {cur} is off the {frequency} grid")


def read_panel(path, frequency: str, domain=None) -> TimeSeriesPanel:
    """Load and validate a panel CSV.

    ``domain`` overrides the per-series inference: a single string applies to
    all series, a list sets each one.
    """
    frequency = normalize_frequency(frequency)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: header needs a timestamp column and at least one series")
        ids = [h.strip() for h in header[1:]]
        stamps, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(rec)} fields, expected {len(header)}"
                )
            stamps.append(_parse_time(rec[0], frequency, lineno))
            vals = []
            for col, cell in enumerate(rec[1:], start=1):
                try:
                    val = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {header[col]!r}: unparseable number {cell!r}"
                    ) from None
                if not np.isfinite(val):
                    raise DataError(
                        f"{path}: row {lineno}, column {header[col]!r}: missing or non-finite value"
                    )
                vals.append(val)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    _check_spacing(stamps, frequency)
    values = np.asarray(rows, dtype=np.float64).T
    if isinstance(domain, str):
        domain = [domain] * values.shape[0]
    return TimeSeriesPanel(values, ids, stamps, frequency, domain)


def _format_time(ts) -> str:
    return str(ts) if isinstance(ts, int) else ts.isoformat()


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_panel(panel: TimeSeriesPanel, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["timestamp", *panel.series_ids])
    for j, ts in enumerate(panel.timestamps):
        writer.writerow([_format_time(ts), *(repr(float(v)) for v in panel.values[:, j])])
    atomic_write_text(path, buf.getvalue())


def covariate_names(frequency: str) -> list[str]:
    return {
        "hourly": ["hour_of_day", "day_of_week", "day_of_month"],
        "daily": ["day_of_week"],
        "30min": ["minute_of_hour", "hour_of_day", "day_of_week"],
        "index": [],
    }[normalize_frequency(frequency)]


def build_covariates(timestamps, frequency: str, scaled: bool = True) -> np.ndarray:
    """Calendar features, one number each, shape ``(T, num_features)``.

    Scaled encodings divide by the period (hour 13 -> 13/24, zero-based day of
    month 4 -> 4/31) so every feature lies in ``[0, 1)``.
    """
    frequency = normalize_frequency(frequency)
    names = covariate_names(frequency)
    out = np.zeros((len(timestamps), len(names)))
    if not names:
        return out
    period = {"hour_of_day": 24, "day_of_week": 7, "day_of_month": 31, "minute_of_hour": 60}
    for j, ts in enumerate(timestamps):
        raw = {
            "hour_of_day": ts.hour,
            "day_of_week": ts.weekday(),
            "day_of_month": ts.day - 1,
            "minute_of_hour": ts.minute,
        }
        for c, name in enumerate(names):
            out[j, c] = raw[name] / period[name] if scaled else raw[name]
    return out


def default_lags(frequency: str) -> list[int]:
    return list(DEFAULT_LAGS[normalize_frequency(frequency)])


def rolling_windows(length: int, horizon: int, num_windows: int, stride: int | None = None):
    """Equally spaced evaluation windows ending at the panel end.

    Returns ``[(train_end, (start, end)), ...]`` in chronological order, where
    ``start == train_end`` and ``end == start + horizon``. The model is meant
    to be trained once on ``[0, first train_end)``.
    """
    if horizon < 1 or num_windows < 1:
        raise DataError("horizon and num_windows must be positive")
    stride = horizon if stride is None else stride
    if stride < 1:
        raise DataError("stride must be positive")
    first = length - horizon - (num_windows - 1) * stride
    if first < 1:
        raise DataError(
            f"panel of length {length} too short for {num_windows} windows of horizon {horizon}"
        )
    return [(first + k * stride, (first + k * stride, first + k * stride + horizon))
            for k in range(num_windows)]
