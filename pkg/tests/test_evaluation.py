import math

import numpy as np
import pandas as pd
import pytest

from core.errors import DegenerateVariance, EmptyInput, LengthMismatch, ZeroActual
from core.evaluation import (
    average_reports,
    backtest,
    best_positions,
    comparison_table,
    evaluate,
    format_table,
    mae,
    mape,
    metrics_row,
    r2_score,
    rmse,
    seed_medians,
)

ACTUAL = [1.0, 2.0, 3.0, 4.0, 5.0]
PREDICTED = [1.1, 1.9, 3.2, 3.8, 5.0]


# metrics -------------------------------------------------------------------

def test_five_point_fixture():
    report = evaluate(ACTUAL, PREDICTED)
    assert report.r2 == pytest.approx(0.99, abs=1e-12)
    assert report.mae == pytest.approx(0.12, abs=1e-12)
    assert report.rmse == pytest.approx(math.sqrt(0.02), abs=1e-12)
    assert report.mape == pytest.approx((0.1 + 0.05 + 0.2 / 3 + 0.05) / 5 * 100, abs=1e-12)
    assert report.n == 5
    assert report.mae_price is None


def test_small_examples():
    assert mae([1, 2], [2, 4]) == 1.5
    assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))
    assert mape([100], [101]) == pytest.approx(1.0)
    assert r2_score([1, 2, 3], [2, 2, 2]) == pytest.approx(0.0)
    assert r2_score(ACTUAL, ACTUAL) == 1.0


def test_r2_can_be_negative():
    assert r2_score([1, 2, 3], [3, 2, 1]) < 0


def test_metric_errors():
    with pytest.raises(DegenerateVariance):
        r2_score([2, 2, 2], [1, 2, 3])
    with pytest.raises(ZeroActual):
        mape([1, 0, 2], [1, 1, 1])
    with pytest.raises(LengthMismatch):
        mae([1, 2], [1])
    with pytest.raises(EmptyInput):
        rmse([], [])
    with pytest.raises(EmptyInput):
        r2_score([1.0], [1.0])


def test_price_unit_errors_are_reported():
    report = evaluate(ACTUAL, PREDICTED, [100.0, 101.0], [100.5, 100.0])
    assert report.mae_price == pytest.approx(0.75)
    assert report.rmse_price == pytest.approx(math.sqrt((0.25 + 1.0) / 2))
    row = metrics_row("x", report)
    assert row["MAE_price"] == report.mae_price


def test_metric_properties_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 30))
        actual = rng.uniform(1, 10, n)
        predicted = actual + rng.normal(size=n)
        assert rmse(actual, predicted) >= mae(actual, predicted) - 1e-12
        assert r2_score(actual, predicted) <= 1.0
        assert mae(actual, predicted) >= 0


def test_invariances():
    rng = np.random.default_rng(1)
    actual = rng.uniform(1, 10, 50)
    predicted = actual + rng.normal(scale=0.5, size=50)
    a, b = 3.0, 7.0
    assert r2_score(a * actual + b, a * predicted + b) == pytest.approx(r2_score(actual, predicted), rel=1e-12)
    assert mae(actual + b, predicted + b) == pytest.approx(mae(actual, predicted), rel=1e-12)
    assert rmse(actual + b, predicted + b) == pytest.approx(rmse(actual, predicted), rel=1e-12)
    assert mape(a * actual, a * predicted) == pytest.approx(mape(actual, predicted), rel=1e-12)


# backtest ------------------------------------------------------------------

def test_perfect_foresight():
    prices = np.array([10.0, 11.0, 10.5, 12.0, 11.0, 13.0])
    report = backtest(prices, prices)
    assert report.directional_accuracy == 1.0
    expected = (11 / 10) * (12 / 10.5) * (13 / 11) - 1
    assert report.cumulative_return == pytest.approx(expected)
    assert report.trade_count == 3
    assert report.steps == 5


def test_persistence_forecast_is_never_long():
    prices = np.array([10.0, 11.0, 10.5, 12.0])
    predicted = np.concatenate([[10.0], prices[:-1]])
    report = backtest(prices, predicted)
    assert report.cumulative_return == 0.0
    assert report.trade_count == 0


def test_contiguous_long_run_is_one_trade():
    prices = np.array([1.0, 2.0, 3.0, 4.0, 3.0])
    predicted = np.array([1.0, 9.0, 9.0, 9.0, 0.0])
    assert backtest(prices, predicted).trade_count == 1


def test_random_forecast_accuracy_near_half():
    rng = np.random.default_rng(2024)
    prices = 100 + np.cumsum(rng.normal(size=10_001))
    predicted = prices + rng.normal(scale=5.0, size=10_001)
    assert backtest(prices, predicted).directional_accuracy == pytest.approx(0.5, abs=0.05)


def test_backtest_needs_two_prices():
    with pytest.raises(EmptyInput):
        backtest([1.0], [1.0])


# tables --------------------------------------------------------------------

def _rows():
    return [
        {"model": "Univariate LSTM", "R2": 0.90, "MAE": 0.03, "RMSE": 0.04, "MAPE": 3.0},
        {"model": "Multivariate bi-LSTM", "R2": 0.97, "MAE": 0.02, "RMSE": 0.03, "MAPE": 2.5},
        {"model": "Multivariate LSTM", "R2": 0.95, "MAE": 0.01, "RMSE": 0.035, "MAPE": 2.0},
    ]


def test_comparison_sorted_by_r2():
    table = comparison_table(_rows())
    assert table["model"].tolist() == ["Multivariate bi-LSTM", "Multivariate LSTM", "Univariate LSTM"]
    assert best_positions(table) == {"R2": 0, "MAE": 1, "RMSE": 0, "MAPE": 1}


def test_format_table_marks_best_values():
    text = format_table(comparison_table(_rows()), title="Results")
    lines = text.splitlines()
    assert lines[0] == "Results"
    bi = next(line for line in lines if line.startswith("Multivariate bi-LSTM"))
    assert "0.9700*" in bi and "0.030000*" in bi
    uni = next(line for line in lines if line.startswith("Univariate LSTM"))
    assert "*" not in uni


def test_average_reports_means_per_model():
    a = comparison_table([dict(r, stock="A") for r in _rows()])
    b = comparison_table([dict(r, stock="B", R2=r["R2"] - 0.1) for r in _rows()])
    averaged = average_reports([a, b])
    row = averaged.loc[averaged["model"] == "Univariate LSTM"].iloc[0]
    assert row["R2"] == pytest.approx(0.85)
    assert row["MAE"] == pytest.approx(0.03)
    assert "stock" not in averaged.columns


def test_seed_medians():
    runs = pd.DataFrame([
        {"model": "m1", "seed": 1, "R2": 0.9, "MAE": 0.3, "RMSE": 0.4, "MAPE": 3.0},
        {"model": "m1", "seed": 2, "R2": 0.8, "MAE": 0.1, "RMSE": 0.2, "MAPE": 1.0},
        {"model": "m1", "seed": 3, "R2": 0.7, "MAE": 0.2, "RMSE": 0.3, "MAPE": 2.0},
        {"model": "m2", "seed": 1, "R2": 0.95, "MAE": 0.05, "RMSE": 0.06, "MAPE": 0.5},
    ])
    table = seed_medians(runs)
    assert table["model"].tolist() == ["m2", "m1"]
    m1 = table.iloc[1]
    assert (m1["R2"], m1["MAE"], m1["MAPE"]) == pytest.approx((0.8, 0.2, 2.0))
    assert m1["seeds"] == 3
    assert "seed" not in table.columns


def test_zero_normalized_actual_gives_nan_mape(caplog):
    actual = [0.0, 0.5, 1.0]
    predicted = [0.1, 0.5, 0.9]
    with caplog.at_level("WARNING", logger="core.evaluation"):
        report = evaluate(actual, predicted, [50.0, 75.0, 100.0], [55.0, 75.0, 95.0])
    assert math.isnan(report.mape)
    assert "MAPE undefined" in caplog.text
    assert report.r2 == pytest.approx(1.0 - 0.02 / 0.5)
    assert report.mape_price == pytest.approx((0.1 + 0.0 + 0.05) / 3 * 100)


def test_price_mape_in_row_and_best_positions_skip_nan():
    report = evaluate(ACTUAL, PREDICTED, [100.0, 101.0], [100.5, 100.0])
    assert report.mape_price == pytest.approx((0.5 / 100 + 1.0 / 101) / 2 * 100)
    assert metrics_row("x", report)["MAPE_price"] == report.mape_price
    rows = _rows()
    rows[0]["MAPE"] = float("nan")
    table = comparison_table(rows)
    assert best_positions(table)["MAPE"] == 1
    only_nan = comparison_table([dict(r, MAPE=float("nan")) for r in _rows()])
    assert "MAPE" not in best_positions(only_nan)
    assert "nan" in format_table(only_nan)
