"""Technical indicators over a close series and correlation-based selection.

Every indicator returns a Series aligned to the input index, NaN during its
warm-up prefix. Windowed indicators are evaluated directly on each window
(no running sums), so they are exactly shift-equivariant.
"""
from __future__ import annotations

import logging
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from core.errors import DegenerateVariance, SeriesTooShort
from core.models import (
    OHLCV_COLUMNS,
    TARGET_COLUMN,
    FeatureFrame,
    IndicatorParams,
    IndicatorSeries,
    OhlcvSeries,
)

logger = logging.getLogger(__name__)

BOLLINGER_NAMES = ("lowerband", "middleband", "upperband")


def _as_series(close) -> pd.Series:
    if isinstance(close, pd.Series):
        return close.astype(float)
    return pd.Series(np.asarray(close, dtype=float))


def _require(values: np.ndarray, needed: int, what: str) -> None:
    if len(values) < needed:
        raise SeriesTooShort(f"{what} needs at least {needed} values, got {len(values)}")


def _check_period(period: int) -> None:
    if period < 1:
        raise ValueError(f"period must be >= 1, got {period}")


def _rolling_mean(values: np.ndarray, period: int) -> np.ndarray:
    out = np.full(len(values), np.nan)
    if len(values) >= period:
        out[period - 1:] = sliding_window_view(values, period).mean(axis=1)
    return out


def sma(close, period: int) -> IndicatorSeries:
    _check_period(period)
    series = _as_series(close)
    values = series.to_numpy()
    _require(values, period, f"SMA{period}")
    return pd.Series(_rolling_mean(values, period), index=series.index, name=f"SMA{period}")


def ema(close, period: int, k: float = 2.0) -> IndicatorSeries:
    """EMA_t = C_t*a + EMA_{t-1}*(1-a), a = k/(period+1), seeded by the first SMA."""
    _check_period(period)
    series = _as_series(close)
    values = series.to_numpy()
    _require(values, max(period, 1), f"EMA{period}")
    alpha = k / (period + 1)
    out = np.full(len(values), np.nan)
    out[period - 1] = values[:period].mean()
    for t in range(period, len(values)):
        out[t] = values[t] * alpha + out[t - 1] * (1.0 - alpha)
    return pd.Series(out, index=series.index, name=f"EMA{period}")


def trima(close, period: int, variant: str = "literal") -> IndicatorSeries:
    """Triangular moving average.

    ``literal``: SMA(SMA(C, n), n), warm-up 2(n-1).
    ``halfwindow``: the usual library form, two SMAs over roughly n/2 each,
    warm-up n-1.
    """
    _check_period(period)
    series = _as_series(close)
    values = series.to_numpy()
    if variant == "literal":
        first = second = period
    elif variant == "halfwindow":
        if period % 2:
            first = second = (period + 1) // 2
        else:
            first, second = period // 2, period // 2 + 1
    else:
        raise ValueError(f"unknown TRIMA variant {variant!r}")
    _require(values, first + second - 1, f"TRIMA{period}")
    inner = _rolling_mean(values, first)
    outer = np.full(len(values), np.nan)
    outer[first - 1:] = _rolling_mean(inner[first - 1:], second)
    return pd.Series(outer, index=series.index, name=f"TRIMA{period}")


def kama(close, period: int = 10, fast: int = 2, slow: int = 30) -> IndicatorSeries:
    """Kaufman adaptive moving average, seeded with C at index ``period``."""
    _check_period(period)
    series = _as_series(close)
    values = series.to_numpy()
    _require(values, period + 1, f"KAMA{period}")
    fast_sc = 2.0 / (fast + 1)
    slow_sc = 2.0 / (slow + 1)
    steps = np.abs(np.diff(values))
    out = np.full(len(values), np.nan)
    out[period] = values[period]
    for t in range(period + 1, len(values)):
        direction = abs(values[t] - values[t - period])
        volatility = steps[t - period:t].sum()
        er = direction / volatility if volatility != 0 else 0.0
        sc = (er * (fast_sc - slow_sc) + slow_sc) ** 2
        out[t] = out[t - 1] + sc * (values[t] - out[t - 1])
    return pd.Series(out, index=series.index, name=f"KAMA{period}")


def bollinger(close, period: int = 20, dev: float = 2.0) -> Tuple[IndicatorSeries, IndicatorSeries, IndicatorSeries]:
    """(lower, middle, upper); sigma is the population standard deviation."""
    _check_period(period)
    series = _as_series(close)
    values = series.to_numpy()
    _require(values, period, f"Bollinger{period}")
    middle = np.full(len(values), np.nan)
    sigma = np.full(len(values), np.nan)
    windows = sliding_window_view(values, period)
    middle[period - 1:] = windows.mean(axis=1)
    sigma[period - 1:] = windows.std(axis=1, ddof=0)
    lower = middle - dev * sigma
    upper = middle + dev * sigma
    return tuple(
        pd.Series(values_, index=series.index, name=name)
        for values_, name in zip((lower, middle, upper), BOLLINGER_NAMES)
    )


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError(f"pearson needs two equal-length series of length >= 2, got {len(x)} and {len(y)}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateVariance("correlation undefined for a constant series")
    r = float(np.dot(dx, dy)) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def compute_indicators(close, params: IndicatorParams | None = None) -> FeatureFrame:
    """All configured indicators as one frame (warm-up rows still NaN)."""
    params = params or IndicatorParams()
    lower, middle, upper = bollinger(close, params.bollinger_period, params.bollinger_dev)
    columns = [
        sma(close, params.sma_period),
        ema(close, params.ema_period, params.ema_k),
        trima(close, params.trima_period, params.trima_variant),
        kama(close, params.kama_period, params.kama_fast, params.kama_slow),
        lower,
        middle,
        upper,
    ]
    return pd.concat(columns, axis=1)


def build_feature_frame(series: OhlcvSeries, params: IndicatorParams | None = None) -> FeatureFrame:
    """OHLCV plus indicators, with warm-up rows trimmed frame-wide."""
    base = series.frame[OHLCV_COLUMNS].astype(float)
    frame = pd.concat([base, compute_indicators(base[TARGET_COLUMN], params)], axis=1)
    trimmed = frame.dropna()
    logger.info("feature frame: %d rows x %d columns (%d warm-up rows trimmed)",
                len(trimmed), trimmed.shape[1], len(frame) - len(trimmed))
    return trimmed


def correlation_table(
    candidates: FeatureFrame | Sequence[FeatureFrame],
    threshold: float = 0.99,
    target: str = TARGET_COLUMN,
    always_keep: Iterable[str] = OHLCV_COLUMNS,
) -> pd.DataFrame:
    """Per-candidate average Pearson r against ``target``, with keep/drop status.

    With several frames (one per stock) r is the unweighted mean of the
    per-frame values. Columns in ``always_keep`` are retained whatever their
    correlation; the threshold applies to the rest. A column that is constant
    in any frame gets r = NaN and is dropped unless always kept.
    """
    frames = [candidates] if isinstance(candidates, pd.DataFrame) else list(candidates)
    if not frames:
        raise ValueError("no candidate frames given")
    keep_set = set(always_keep)
    rows = []
    for column in frames[0].columns:
        rs = []
        for frame in frames:
            try:
                rs.append(pearson(frame[column], frame[target]))
            except DegenerateVariance:
                logger.debug("column %s is constant; excluded from selection", column)
                rs.append(np.nan)
        avg = float(np.mean(rs))
        if column in keep_set or column == target:
            status = "keep"
        elif not np.isnan(avg) and abs(avg) > threshold:
            status = "keep"
        else:
            status = "drop"
        rows.append({"column": column, "r": avg, "status": status})
    table = pd.DataFrame(rows)
    table["abs_r"] = table["r"].abs()
    table = table.sort_values(["abs_r"], ascending=False, na_position="last", kind="mergesort")
    return table.drop(columns="abs_r").reset_index(drop=True)


def select_features(
    candidates: FeatureFrame | Sequence[FeatureFrame],
    target: str = TARGET_COLUMN,
    threshold: float = 0.99,
    always_keep: Iterable[str] = OHLCV_COLUMNS,
) -> List[str]:
    """Retained column names, ordered by descending |r| (target first)."""
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    table = correlation_table(candidates, threshold, target, always_keep)
    kept = [c for c in table.loc[table["status"] == "keep", "column"] if c != target]
    return [target] + kept


def format_selection_report(table: pd.DataFrame, threshold: float) -> str:
    lines = [f"Feature selection (|r| > {threshold} against {TARGET_COLUMN}; OHLCV always kept)", ""]
    lines.append(f"{'column':<14}{'avg r':>12}  status")
    for row in table.itertuples(index=False):
        r_text = "n/a" if np.isnan(row.r) else f"{row.r:.6f}"
        lines.append(f"{row.column:<14}{r_text:>12}  {row.status}")
    kept = int((table["status"] == "keep").sum())
    lines.append("")
    lines.append(f"{kept} of {len(table)} columns kept")
    return "\n".join(lines) + "\n"


def describe_frame(frame: FeatureFrame) -> pd.DataFrame:
    """count/mean/std/min/quartiles/max per column."""
    return frame.describe().T


def save_frame(frame: FeatureFrame, path) -> None:
    frame.to_csv(path, index_label=frame.index.name or "timestamp", encoding="utf-8")


def load_frame(path) -> FeatureFrame:
    frame = pd.read_csv(path, index_col=0, parse_dates=True, encoding="utf-8")
    return frame.astype(float)
