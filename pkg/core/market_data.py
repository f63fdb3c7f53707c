"""OHLCV ingestion: CSV parsing with invariant checks, resampling, export."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np
import pandas as pd

from core.errors import (
    IncompatibleInterval,
    InvariantViolation,
    MissingColumn,
    SeriesTooShort,
    UnparseableRow,
)
from core.models import OHLCV_COLUMNS, TIMESTAMP_COLUMN, OhlcvSeries, default_schema

logger = logging.getLogger(__name__)

_FIELDS = [TIMESTAMP_COLUMN] + OHLCV_COLUMNS
_EXPORT_TIME_FORMAT = "%Y-%m-%dT%H:%M"

# Checked in this order; the first failing rule is the one reported.
_BAR_RULES = [
    ("low <= high", lambda f: f["low"] <= f["high"]),
    ("low <= open <= high", lambda f: (f["low"] <= f["open"]) & (f["open"] <= f["high"])),
    ("low <= close <= high", lambda f: (f["low"] <= f["close"]) & (f["close"] <= f["high"])),
    ("volume >= 0", lambda f: f["volume"] >= 0),
]


def _empty_frame() -> pd.DataFrame:
    frame = pd.DataFrame({name: pd.Series(dtype="float64") for name in OHLCV_COLUMNS})
    frame["volume"] = frame["volume"].astype("int64")
    frame.index = pd.DatetimeIndex([], name=TIMESTAMP_COLUMN)
    return frame


def _resolve_schema(schema: Optional[Mapping[str, str]]) -> Dict[str, str]:
    resolved = default_schema()
    if schema:
        resolved.update(schema)
    return resolved


def _infer_interval(index: pd.DatetimeIndex) -> pd.Timedelta:
    if len(index) < 2:
        return pd.Timedelta(0)
    return pd.Series(index).diff().dropna().min()


def parse_csv(
    path: str | Path,
    schema: Optional[Mapping[str, str]] = None,
    interval: Optional[str | pd.Timedelta] = None,
) -> OhlcvSeries:
    """Read an OHLCV CSV into a validated series.

    ``schema`` maps canonical field names (timestamp, open, high, low, close,
    volume) to the vendor's header names. The first offending row aborts the
    parse; reported line numbers count the header as line 1.
    """
    resolved = _resolve_schema(schema)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True, encoding="utf-8")
    except pd.errors.EmptyDataError:
        logger.info("%s is empty", path)
        return OhlcvSeries(_empty_frame(), pd.Timedelta(interval or 0))

    raw.columns = [str(c).strip() for c in raw.columns]
    for field_name in _FIELDS:
        if resolved[field_name] not in raw.columns:
            raise MissingColumn(f"column {resolved[field_name]!r} (for {field_name}) not found in {path}")

    if raw.empty:
        return OhlcvSeries(_empty_frame(), pd.Timedelta(interval or 0))

    lines = np.arange(len(raw)) + 2
    timestamps = pd.to_datetime(raw[resolved[TIMESTAMP_COLUMN]].str.strip(), errors="coerce", format="ISO8601")
    values = {name: pd.to_numeric(raw[resolved[name]].str.strip(), errors="coerce") for name in OHLCV_COLUMNS}

    problems: list[tuple[int, Exception]] = []

    bad_ts = timestamps.isna().to_numpy()
    if bad_ts.any():
        pos = int(np.argmax(bad_ts))
        problems.append((pos, UnparseableRow(int(lines[pos]), f"bad timestamp {raw.iloc[pos][resolved[TIMESTAMP_COLUMN]]!r}")))
    for name, column in values.items():
        bad = column.isna().to_numpy()
        if name == "volume":
            bad |= ~np.isfinite(column.fillna(0).to_numpy()) | (column.fillna(0) % 1 != 0).to_numpy()
        if bad.any():
            pos = int(np.argmax(bad))
            problems.append((pos, UnparseableRow(int(lines[pos]), f"bad {name} value {raw.iloc[pos][resolved[name]]!r}")))

    frame = pd.DataFrame(values)
    for rule, check in _BAR_RULES:
        broken = ~check(frame).to_numpy()
        if broken.any():
            pos = int(np.argmax(broken))
            problems.append((pos, InvariantViolation(int(lines[pos]), rule)))
    ts_values = timestamps.to_numpy()
    not_increasing = np.zeros(len(raw), dtype=bool)
    not_increasing[1:] = ts_values[1:] <= ts_values[:-1]
    if not_increasing.any():
        pos = int(np.argmax(not_increasing))
        problems.append((pos, InvariantViolation(int(lines[pos]), "timestamps strictly increasing")))

    if problems:
        # earliest row wins; within a row, parse errors precede invariant errors
        _, error = min(problems, key=lambda item: (item[0], isinstance(item[1], InvariantViolation)))
        raise error

    frame["volume"] = frame["volume"].astype("int64")
    frame.index = pd.DatetimeIndex(timestamps, name=TIMESTAMP_COLUMN)
    step = pd.Timedelta(interval) if interval is not None else _infer_interval(frame.index)
    logger.debug("parsed %d bars from %s (interval %s)", len(frame), path, step)
    return OhlcvSeries(frame, step)


def resample(series: OhlcvSeries, target: str | pd.Timedelta) -> OhlcvSeries:
    """Aggregate bars into ``target`` buckets aligned to wall-clock boundaries."""
    target = pd.Timedelta(target)
    if len(series) == 0:
        raise SeriesTooShort("cannot resample an empty series", module="market_data")
    if series.interval > pd.Timedelta(0):
        if target < series.interval or target % series.interval != pd.Timedelta(0):
            raise IncompatibleInterval(f"target {target} is not a multiple of the source interval {series.interval}")
    if target == series.interval:
        return series

    # origin="start_day" puts bucket edges on multiples of target from midnight
    grouped = series.frame.resample(target, origin="start_day", label="left", closed="left")
    out = grouped.agg({"open": "first", "high": "max", "low": "min", "close": "last", "volume": "sum"})
    out = out.dropna(subset=["close"])
    out["volume"] = out["volume"].astype("int64")
    out.index.name = TIMESTAMP_COLUMN
    logger.info("resampled %d bars at %s into %d bars at %s", len(series), series.interval, len(out), target)
    return OhlcvSeries(out, target)


def export_csv(series: OhlcvSeries, path: str | Path, schema: Optional[Mapping[str, str]] = None) -> Path:
    """Write ``series`` in the dialect :func:`parse_csv` reads."""
    resolved = _resolve_schema(schema)
    out = series.frame.copy()
    out.insert(0, TIMESTAMP_COLUMN, out.index.strftime(_EXPORT_TIME_FORMAT))
    out = out.rename(columns=resolved)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out.to_csv(path, index=False, encoding="utf-8")
    return path


def synthetic_bars(
    n: int,
    seed: int = 0,
    interval: str = "1h",
    start: str = "2015-01-01 00:00",
    level: float = 100.0,
    amplitude: float = 20.0,
    noise: float = 0.02,
    periods: tuple[float, ...] = (24.0, 24.0 * 7, 24.0 * 30),
) -> OhlcvSeries:
    """Noisy multi-sine close series with a consistent OHLC envelope.

    Noise standard deviation is ``noise * amplitude``. Bars are contiguous.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=float)
    weights = [1.0, 0.5, 0.3, 0.2][: len(periods)]
    signal = sum(w * np.sin(2.0 * np.pi * t / p) for w, p in zip(weights, periods))
    close = level + amplitude * signal / sum(weights) + rng.normal(0.0, noise * amplitude, n)
    open_ = np.concatenate([[close[0]], close[:-1]])
    wiggle = np.abs(rng.normal(0.0, 0.25 * noise * amplitude, (2, n)))
    high = np.maximum(open_, close) + wiggle[0]
    low = np.minimum(open_, close) - wiggle[1]
    volume = rng.integers(1_000, 50_000, n)
    index = pd.date_range(start, periods=n, freq=pd.Timedelta(interval), name=TIMESTAMP_COLUMN)
    frame = pd.DataFrame({"open": open_, "high": high, "low": low, "close": close, "volume": volume}, index=index)
    return OhlcvSeries(frame, pd.Timedelta(interval))
