"""Normalization, sliding windows and chronological splits."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import ColumnMismatch, ConstantColumn, EmptySplit, SeriesTooShort
from core.models import (
    SPLIT_ORDER_OPTIONS,
    TARGET_COLUMN,
    Boundaries,
    FeatureFrame,
    Scaler,
    WindowedDataset,
)

logger = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1


# Scaling -------------------------------------------------------------------

def fit_scaler(frame: FeatureFrame, fit_range: Optional[Tuple[int, int]] = None) -> Scaler:
    """Per-column min/max over rows ``fit_range`` (half-open, positional)."""
    start, stop = fit_range if fit_range is not None else (0, len(frame))
    if stop <= start:
        raise ValueError(f"fit range {start}:{stop} is empty")
    window = frame.iloc[start:stop]
    minimum = {c: float(window[c].min()) for c in frame.columns}
    maximum = {c: float(window[c].max()) for c in frame.columns}
    for column in frame.columns:
        if maximum[column] == minimum[column]:
            raise ConstantColumn(f"column {column!r} is constant over rows {start}:{stop}")
    return Scaler(tuple(frame.columns), minimum, maximum, (start, stop))


def transform(frame: FeatureFrame, scaler: Scaler) -> FeatureFrame:
    """x' = (x - min) / (max - min); no clipping outside the fitted range."""
    if tuple(frame.columns) != scaler.columns:
        raise ColumnMismatch(f"frame columns {list(frame.columns)} do not match scaler columns {list(scaler.columns)}")
    out = frame.astype(float).copy()
    for column in scaler.columns:
        low, high = scaler.minimum[column], scaler.maximum[column]
        out[column] = (out[column] - low) / (high - low)
    return out


def inverse_transform(values, scaler: Scaler, column: Optional[str] = None):
    """Map normalized values back to original units.

    ``values`` is either a frame with the scaler's columns, or a scalar/array
    of one ``column``.
    """
    if isinstance(values, pd.DataFrame):
        if tuple(values.columns) != scaler.columns:
            raise ColumnMismatch(f"frame columns {list(values.columns)} do not match scaler columns")
        out = values.copy()
        for name in scaler.columns:
            out[name] = out[name] * (scaler.maximum[name] - scaler.minimum[name]) + scaler.minimum[name]
        return out
    if column is None or column not in scaler.columns:
        raise ColumnMismatch(f"scaler was not fitted for column {column!r}")
    low, high = scaler.minimum[column], scaler.maximum[column]
    if np.isscalar(values):
        return float(values) * (high - low) + low
    return np.asarray(values, dtype=float) * (high - low) + low


# Windows and splits --------------------------------------------------------

def make_windows(frame: FeatureFrame, window: int = 24, target_column: str = TARGET_COLUMN) -> WindowedDataset:
    """Pair every W consecutive rows with the target one row later.

    Pair j covers rows j .. j+W-1 and targets row j+W, giving T - W pairs.
    """
    if target_column not in frame.columns:
        raise ColumnMismatch(f"target column {target_column!r} not in frame")
    rows = len(frame)
    if window < 1 or rows < window + 1:
        raise SeriesTooShort(f"need at least W + 1 = {window + 1} rows, got {rows}", module="pipeline")
    data = frame.to_numpy(dtype=float)
    count = rows - window
    X = np.lib.stride_tricks.sliding_window_view(data, window, axis=0)[:count]
    X = np.ascontiguousarray(np.moveaxis(X, -1, 1))
    y = frame[target_column].to_numpy(dtype=float)[window:].copy()
    end_rows = np.arange(window - 1, window - 1 + count)
    for array in (X, y, end_rows):
        array.setflags(write=False)
    return WindowedDataset(
        X=X,
        y=y,
        window=window,
        feature_names=tuple(frame.columns),
        target_column=target_column,
        end_rows=end_rows,
        target_index=frame.index[window:],
    )


def split_counts(n: int, fractions: Sequence[float]) -> List[int]:
    """Largest-remainder rounding of ``n * f``; ties go to the later segment.

    Reproduces 10838 -> 7586/1626/1626 and 10 -> 7/1/2.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {list(fractions)}")
    exact = [f * n for f in fractions]
    counts = [math.floor(e + 1e-9) for e in exact]
    remainders = [round(e - c, 9) for e, c in zip(exact, counts)]
    left = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-remainders[i], -i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def split(dataset: WindowedDataset, fractions: Sequence[float] = (0.70, 0.15, 0.15), order: str = SPLIT_ORDER_OPTIONS[0]) -> WindowedDataset:
    """Chronological train/val/test boundaries. ``fractions`` is (train, val, test)."""
    boundaries = split_boundaries(len(dataset), fractions, order)
    logger.info("split %d windows: train=%d val=%d test=%d", len(dataset),
                boundaries.train[1] - boundaries.train[0],
                boundaries.val[1] - boundaries.val[0],
                boundaries.test[1] - boundaries.test[0])
    return WindowedDataset(
        X=dataset.X,
        y=dataset.y,
        window=dataset.window,
        feature_names=dataset.feature_names,
        target_column=dataset.target_column,
        end_rows=dataset.end_rows,
        target_index=dataset.target_index,
        boundaries=boundaries,
    )


def split_boundaries(n: int, fractions: Sequence[float], order: str = SPLIT_ORDER_OPTIONS[0]) -> Boundaries:
    n_train, n_val, n_test = split_counts(n, fractions)
    for name, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        if count == 0:
            raise EmptySplit(f"{name} segment would be empty for {n} windows and fractions {list(fractions)}")
    train = (0, n_train)
    if order == "train_val_test":
        val = (n_train, n_train + n_val)
        test = (n_train + n_val, n)
    elif order == "train_test_val":
        test = (n_train, n_train + n_test)
        val = (n_train + n_test, n)
    else:
        raise ValueError(f"unknown split order {order!r}")
    return Boundaries(train, val, test)


def train_row_range(rows: int, window: int, fractions: Sequence[float], order: str = SPLIT_ORDER_OPTIONS[0]) -> Tuple[int, int]:
    """Frame rows touched by training windows (inputs and targets)."""
    boundaries = split_boundaries(rows - window, fractions, order)
    return 0, boundaries.train[1] + window


# Persistence ---------------------------------------------------------------

def save_dataset(dataset: WindowedDataset, path: str | Path) -> Path:
    """npz archive: X, y, end_rows, target timestamps and a JSON header."""
    header = {
        "version": DATASET_FORMAT_VERSION,
        "W": dataset.window,
        "F": dataset.n_features,
        "N": len(dataset),
        "feature_names": list(dataset.feature_names),
        "target_column": dataset.target_column,
        "boundaries": {k: list(v) for k, v in dataset.boundaries.as_dict().items()} if dataset.boundaries else None,
    }
    index = dataset.target_index
    header["datetime_index"] = isinstance(index, pd.DatetimeIndex)
    stamps = np.asarray(index.astype("int64")) if header["datetime_index"] else np.arange(len(dataset))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        np.savez(handle, X=dataset.X, y=dataset.y, end_rows=dataset.end_rows, target_index=stamps,
                 header=np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8))
    return path


def load_dataset(path: str | Path) -> WindowedDataset:
    with np.load(Path(path)) as archive:
        header = json.loads(archive["header"].tobytes().decode("utf-8"))
        if header.get("version") != DATASET_FORMAT_VERSION:
            raise ValueError(f"unsupported dataset version {header.get('version')}")
        bounds = header["boundaries"]
        dataset = WindowedDataset(
            X=archive["X"],
            y=archive["y"],
            window=header["W"],
            feature_names=tuple(header["feature_names"]),
            target_column=header["target_column"],
            end_rows=archive["end_rows"],
            target_index=_restore_index(archive["target_index"], header.get("datetime_index", False)),
            boundaries=Boundaries(**{k: tuple(v) for k, v in bounds.items()}) if bounds else None,
        )
    return dataset


def _restore_index(stamps: np.ndarray, is_datetime: bool) -> pd.Index:
    if is_datetime:
        return pd.DatetimeIndex(stamps.astype("datetime64[ns]"), name="timestamp")
    return pd.RangeIndex(len(stamps))


def save_scaler(scaler: Scaler, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(asdict(scaler), indent=2) + "\n", encoding="utf-8")
    return path


def load_scaler(path: str | Path) -> Scaler:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return Scaler(tuple(raw["columns"]), dict(raw["minimum"]), dict(raw["maximum"]), tuple(raw["fit_range"]))
