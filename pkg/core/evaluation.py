"""Regression metrics, the long/flat backtest, and comparison tables."""
from __future__ import annotations

import logging
from dataclasses import asdict
from typing import Dict, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import DegenerateVariance, EmptyInput, LengthMismatch, ZeroActual
from core.models import BacktestReport, MetricsReport

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["R2", "MAE", "RMSE", "MAPE"]
# R2 is better when larger; the error metrics when smaller
_HIGHER_IS_BETTER = {"R2": True, "MAE": False, "RMSE": False, "MAPE": False}


def _pair(actual, predicted, minimum: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    actual = np.asarray(actual, dtype=float).ravel()
    predicted = np.asarray(predicted, dtype=float).ravel()
    if actual.shape != predicted.shape:
        raise LengthMismatch(f"{len(actual)} actual vs {len(predicted)} predicted values")
    if len(actual) < minimum:
        raise EmptyInput(f"need at least {minimum} values, got {len(actual)}")
    return actual, predicted


def r2_score(actual, predicted) -> float:
    actual, predicted = _pair(actual, predicted, minimum=2)
    ss_res = float(np.sum((actual - predicted) ** 2))
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateVariance("R2 undefined for a constant actual series", module="evaluation")
    return 1.0 - ss_res / ss_tot


def mae(actual, predicted) -> float:
    actual, predicted = _pair(actual, predicted)
    return float(np.mean(np.abs(actual - predicted)))


def rmse(actual, predicted) -> float:
    actual, predicted = _pair(actual, predicted)
    return float(np.sqrt(np.mean((actual - predicted) ** 2)))


def mape(actual, predicted) -> float:
    """Mean absolute percentage error, in percent."""
    actual, predicted = _pair(actual, predicted)
    if np.any(actual == 0.0):
        raise ZeroActual(f"actual value at position {int(np.argmax(actual == 0.0))} is zero")
    return float(np.mean(np.abs((actual - predicted) / actual)) * 100.0)


def _tolerant_mape(actual, predicted, label: str) -> float:
    try:
        return mape(actual, predicted)
    except ZeroActual as exc:
        logger.warning("%s MAPE undefined (%s); recorded as NaN", label, exc)
        return float("nan")


def evaluate(
    actual,
    predicted,
    actual_price=None,
    predicted_price=None,
) -> MetricsReport:
    """All four metrics on normalized values, plus price-unit MAE/RMSE/MAPE when given.

    A zero actual leaves MAPE as NaN instead of failing the run.
    """
    actual, predicted = _pair(actual, predicted, minimum=2)
    price_mae = price_rmse = price_mape = None
    if actual_price is not None and predicted_price is not None:
        price_mae = mae(actual_price, predicted_price)
        price_rmse = rmse(actual_price, predicted_price)
        price_mape = _tolerant_mape(actual_price, predicted_price, "price")
    return MetricsReport(
        r2=r2_score(actual, predicted),
        mae=mae(actual, predicted),
        rmse=rmse(actual, predicted),
        mape=_tolerant_mape(actual, predicted, "normalized"),
        n=len(actual),
        mae_price=price_mae,
        rmse_price=price_rmse,
        mape_price=price_mape,
    )


def backtest(actual_close, predicted_close) -> BacktestReport:
    """Long over (t, t+1] iff predicted[t+1] > actual[t], flat otherwise.

    Both series are in price units and aligned: predicted[t] is the forecast
    of actual[t]. No costs or slippage.
    """
    actual, predicted = _pair(actual_close, predicted_close)
    if len(actual) < 2:
        raise EmptyInput("backtest needs at least two prices")
    forecast_move = np.sign(predicted[1:] - actual[:-1])
    actual_move = np.sign(actual[1:] - actual[:-1])
    accuracy = float(np.mean(forecast_move == actual_move))

    long = predicted[1:] > actual[:-1]
    step_returns = actual[1:] / actual[:-1] - 1.0
    cumulative = float(np.prod(1.0 + step_returns[long]) - 1.0)
    entries = int(long[0]) + int(np.sum(long[1:] & ~long[:-1]))
    logger.debug("backtest over %d steps: %d entries, long %d steps", len(long), entries, int(long.sum()))
    return BacktestReport(directional_accuracy=accuracy, cumulative_return=cumulative, trade_count=entries, steps=len(long))


# Tables --------------------------------------------------------------------

def metrics_row(label: str, report: MetricsReport) -> Dict[str, object]:
    row: Dict[str, object] = {"model": label, "R2": report.r2, "MAE": report.mae, "RMSE": report.rmse, "MAPE": report.mape, "n": report.n}
    if report.mae_price is not None:
        row["MAE_price"] = report.mae_price
        row["RMSE_price"] = report.rmse_price
        row["MAPE_price"] = report.mape_price
    return row


def metrics_frame(report: MetricsReport) -> pd.DataFrame:
    return pd.DataFrame([asdict(report)])


def backtest_frame(report: BacktestReport) -> pd.DataFrame:
    return pd.DataFrame([asdict(report)])


def comparison_table(rows: Sequence[Dict[str, object]]) -> pd.DataFrame:
    """Rank variants by R2 (descending); ties keep input order."""
    table = pd.DataFrame(list(rows))
    return table.sort_values("R2", ascending=False, kind="mergesort").reset_index(drop=True)


def best_positions(table: pd.DataFrame) -> Dict[str, int]:
    """Row position of the best value per metric column."""
    best: Dict[str, int] = {}
    for column in METRIC_COLUMNS:
        if column not in table:
            continue
        values = table[column].to_numpy(dtype=float)
        if np.isnan(values).all():
            continue
        best[column] = int(np.nanargmax(values) if _HIGHER_IS_BETTER[column] else np.nanargmin(values))
    return best


def format_table(table: pd.DataFrame, title: str = "") -> str:
    """Plain-text results table, best value per column marked with '*'."""
    best = best_positions(table)
    width = max([len("Model")] + [len(str(m)) for m in table["model"]]) + 2
    lines = []
    if title:
        lines.append(title)
    header = f"{'Model':<{width}}" + "".join(f"{c:>12}" for c in METRIC_COLUMNS)
    lines.append(header)
    lines.append("-" * len(header))
    for pos, row in enumerate(table.itertuples(index=False)):
        cells = []
        for column in METRIC_COLUMNS:
            value = getattr(row, column)
            text = f"{value:.4f}" if column in ("R2", "MAPE") else f"{value:.6f}"
            if best.get(column) == pos:
                text += "*"
            cells.append(f"{text:>12}")
        lines.append(f"{row.model:<{width}}" + "".join(cells))
    return "\n".join(lines) + "\n"


def average_reports(tables: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Per-variant mean of every metric across several stocks' tables."""
    combined = pd.concat(list(tables), ignore_index=True)
    numeric = [c for c in combined.columns if c not in ("model", "stock")]
    order = list(dict.fromkeys(combined["model"]))
    averaged = combined.groupby("model", sort=False)[numeric].mean().reindex(order).reset_index()
    return comparison_table(averaged.to_dict("records"))


def seed_medians(runs: pd.DataFrame) -> pd.DataFrame:
    """Collapse repeated seeds of each model to the per-metric median."""
    numeric = [c for c in runs.columns if c not in ("model", "stock", "seed")]
    grouped = runs.groupby("model", sort=False)
    table = grouped[numeric].median()
    table["seeds"] = grouped.size()
    return comparison_table(table.reset_index().to_dict("records"))
