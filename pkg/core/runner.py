"""End-to-end experiment wiring: ingest, features, train, evaluate, report."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core import charts, exporter
from core.errors import FeatureCountMismatch, InconsistentDataset, InvalidConfig
from core.evaluation import average_reports, backtest, evaluate, metrics_row, seed_medians
from core.indicators import (
    build_feature_frame,
    correlation_table,
    describe_frame,
    format_selection_report,
    save_frame,
)
from core.market_data import export_csv, parse_csv, resample
from core.models import (
    OHLCV_COLUMNS,
    TARGET_COLUMN,
    ExperimentConfig,
    FeatureFrame,
    ModelSpec,
    OhlcvSeries,
    RunArtifacts,
    Scaler,
    WindowedDataset,
)
from core.neural import load_checkpoint, predict_batched
from core.pipeline import (
    fit_scaler,
    inverse_transform,
    load_dataset,
    load_scaler,
    make_windows,
    save_dataset,
    save_scaler,
    split,
    train_row_range,
    transform,
)
from core.storage import save_experiment_config
from core.training import train, write_history_csv

logger = logging.getLogger(__name__)

# File names inside a run directory
BARS_CSV = "bars.csv"
FEATURES_CSV = "features.csv"
DESCRIPTION_CSV = "description.csv"
SELECTION_TXT = "selection.txt"
DATASET_NPZ = "dataset.npz"
SCALER_JSON = "scaler.json"
CHECKPOINT = "model.ckpt"
HISTORY_CSV = "history.csv"
METRICS_CSV = "metrics.csv"
BACKTEST_CSV = "backtest.csv"
TRACE_CSV = "trace.csv"
REPORT_TXT = "report.txt"
CHART_PNG = "chart.png"
CONFIG_JSON = "config.json"


@dataclass
class PreparedData:
    series: OhlcvSeries
    frame: FeatureFrame
    selection: pd.DataFrame
    scaler: Scaler
    dataset: WindowedDataset


def run_dir(config: ExperimentConfig) -> Path:
    """<output_dir>/<stock or name>/<variant>/seed<seed>"""
    return Path(config.output_dir) / (config.stock or config.name) / config.variant / f"seed{config.train.seed}"


# Data preparation ----------------------------------------------------------

def load_series(config: ExperimentConfig) -> OhlcvSeries:
    if not config.data.path:
        raise InvalidConfig("data.path is not set")
    series = parse_csv(config.data.path, config.data.schema, config.data.source_interval)
    logger.info("ingested %d bars from %s", len(series), config.data.path)
    if config.data.resample:
        series = resample(series, config.data.resample)
        logger.info("resampled to %s: %d bars", config.data.resample, len(series))
    return series


def feature_columns(frame: FeatureFrame, config: ExperimentConfig) -> Tuple[List[str], pd.DataFrame]:
    """Columns fed to the model for ``config.approach``, plus the correlation table.

    The indicators approach ranks all candidates by |r| against close. Without
    ``strict_selection`` columns under the threshold are kept with a warning;
    with it they are dropped, and the feature count is then checked.
    """
    table = correlation_table(frame, config.threshold, TARGET_COLUMN, OHLCV_COLUMNS)
    if config.approach == "univariate":
        columns = [TARGET_COLUMN]
    elif config.approach == "ohlcv":
        columns = list(OHLCV_COLUMNS)
    else:
        ranked = [c for c in table["column"] if c != TARGET_COLUMN]
        below = table.loc[table["status"] == "drop", "column"].tolist()
        if config.strict_selection:
            ranked = [c for c in ranked if c not in below]
        elif below:
            logger.warning("%d indicator(s) at or under |r| = %s kept: %s", len(below), config.threshold, ", ".join(below))
        columns = [TARGET_COLUMN] + ranked
    check_feature_count(len(columns), config)
    return columns, table


def check_feature_count(count: int, config: ExperimentConfig) -> None:
    if count != config.expected_features:
        raise FeatureCountMismatch(
            f"approach {config.approach!r} needs F={config.expected_features}, got F={count}"
        )


def prepare_data(config: ExperimentConfig, series: Optional[OhlcvSeries] = None) -> PreparedData:
    """Series -> feature frame -> scaled, windowed, split dataset."""
    series = series if series is not None else load_series(config)
    full = build_feature_frame(series, config.indicators)
    columns, table = feature_columns(full, config)
    frame = full[columns]
    return _window(series, frame, table, config)


def _window(series: OhlcvSeries, frame: FeatureFrame, table: pd.DataFrame, config: ExperimentConfig) -> PreparedData:
    if config.scaler_fit == "train":
        fit_range = train_row_range(len(frame), config.window, config.split, config.split_order)
    else:
        fit_range = (0, len(frame))
    scaler = fit_scaler(frame, fit_range)
    scaled = transform(frame, scaler)
    dataset = split(make_windows(scaled, config.window, TARGET_COLUMN), config.split, config.split_order)
    return PreparedData(series, frame, table, scaler, dataset)


# Model stages --------------------------------------------------------------

def model_spec(config: ExperimentConfig, dataset: WindowedDataset) -> ModelSpec:
    return ModelSpec(direction=config.direction, hidden_size=config.hidden_size, n_features=dataset.n_features)


def predict_test_segment(dataset: WindowedDataset, spec: ModelSpec, params, scaler: Scaler):
    """Normalized and price-unit (actual, predicted) pairs on the test segment."""
    X_test, y_test = dataset.segment("test")
    preds = predict_batched(X_test, spec, params)
    start, stop = dataset.boundaries.test
    stamps = dataset.target_index[start:stop] if dataset.target_index is not None else np.arange(start, stop)
    actual_price = inverse_transform(y_test, scaler, dataset.target_column)
    predicted_price = inverse_transform(preds, scaler, dataset.target_column)
    return stamps, y_test, preds, actual_price, predicted_price


def run_experiment(config: ExperimentConfig, series: Optional[OhlcvSeries] = None) -> RunArtifacts:
    """Full pipeline for one config; every artifact lands in ``run_dir(config)``."""
    out = run_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    logger.info("run %s (%s) -> %s", config.label, config.variant, out)
    save_experiment_config(out / CONFIG_JSON, config)

    prepared = prepare_data(config, series)
    selection_txt = out / SELECTION_TXT
    selection_txt.write_text(format_selection_report(prepared.selection, config.threshold), encoding="utf-8")

    dataset = prepared.dataset
    spec = model_spec(config, dataset)
    checkpoint = out / CHECKPOINT
    params, history = train(spec, dataset, config.train, checkpoint_path=checkpoint)
    history_csv = write_history_csv(history, out / HISTORY_CSV)

    stamps, y_test, preds, actual_price, predicted_price = predict_test_segment(dataset, spec, params, prepared.scaler)
    metrics = evaluate(y_test, preds, actual_price, predicted_price)
    trading = backtest(actual_price, predicted_price)
    logger.info("test R2=%.4f MAE=%.6f RMSE=%.6f MAPE=%.4f%%", metrics.r2, metrics.mae, metrics.rmse, metrics.mape)

    report = exporter.render_report(config, dataset, history, metrics, trading)
    artifacts = RunArtifacts(
        output_dir=out,
        checkpoint=checkpoint,
        history_csv=history_csv,
        metrics_csv=exporter.write_metrics_csv(metrics, out / METRICS_CSV),
        trace_csv=exporter.write_trace_csv(stamps, actual_price, predicted_price, out / TRACE_CSV),
        report_txt=exporter.write_report(out / REPORT_TXT, report),
        metrics=metrics,
        backtest=trading,
        history=history,
        backtest_csv=exporter.write_backtest_csv(trading, out / BACKTEST_CSV),
        selection_txt=selection_txt,
    )
    if config.plot:
        emit_plot_trace(artifacts, title=f"{config.stock or config.name}: {config.label}")
    return artifacts


def emit_plot_trace(artifacts: RunArtifacts, title: str = "") -> Tuple[Path, Optional[Path]]:
    """Chart the stored test trace; the image is best-effort, the CSV is not."""
    trace = exporter.read_trace_csv(artifacts.trace_csv)
    artifacts.chart = charts.try_render_chart(
        trace["actual_price"].to_numpy(), trace["predicted_price"].to_numpy(),
        artifacts.output_dir / CHART_PNG, title,
    )
    return artifacts.trace_csv, artifacts.chart


# Matrix --------------------------------------------------------------------

def _dataset_key(config: ExperimentConfig):
    data = config.data
    return (data.path, tuple(sorted(data.schema.items())), data.resample, data.source_interval)


def check_consistent(configs: Sequence[ExperimentConfig]) -> None:
    """Same split everywhere; one input dataset per stock."""
    if not configs:
        raise InvalidConfig("matrix has no experiments")
    first = configs[0]
    per_stock = {}
    for config in configs:
        if (config.window, list(config.split), config.split_order) != (first.window, list(first.split), first.split_order):
            raise InconsistentDataset(
                f"{config.variant} (seed {config.train.seed}) uses W={config.window}, split {config.split} "
                f"{config.split_order}; expected W={first.window}, split {first.split} {first.split_order}"
            )
        key = _dataset_key(config)
        if per_stock.setdefault(config.stock, key) != key:
            raise InconsistentDataset(f"stock {config.stock!r} is configured with two different inputs")


def run_matrix(configs: Sequence[ExperimentConfig], workers: int = 1, output_dir: Optional[str | Path] = None) -> pd.DataFrame:
    """Run every config and rank variants by R2.

    Seeds of one variant collapse to their median; several stocks are then
    averaged per variant. Tables are written under ``output_dir`` (default:
    the first config's output directory).
    """
    configs = list(configs)
    check_consistent(configs)
    out = Path(output_dir or configs[0].output_dir)

    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_experiment, configs))
    else:
        results = [run_experiment(config) for config in configs]

    rows = []
    for config, artifacts in zip(configs, results):
        row = metrics_row(config.label, artifacts.metrics)
        row.update({"stock": config.stock, "seed": config.train.seed,
                    "directional_accuracy": artifacts.backtest.directional_accuracy,
                    "cumulative_return": artifacts.backtest.cumulative_return})
        rows.append(row)
    runs = pd.DataFrame(rows)
    exporter.write_csv(runs, out / "runs.csv")

    stocks = list(dict.fromkeys(runs["stock"]))
    tables = []
    for stock in stocks:
        table = seed_medians(runs[runs["stock"] == stock])
        stem = f"comparison_{stock}" if stock else "comparison"
        exporter.write_comparison(table, out, title=f"{stock or configs[0].name}: test metrics", stem=stem)
        tables.append(table)
    if len(tables) == 1:
        return tables[0]
    averaged = average_reports(tables)
    exporter.write_comparison(averaged, out, title=f"Average over {len(tables)} stocks", stem="comparison")
    return averaged


# Stage subcommands ---------------------------------------------------------

def ingest_stage(config: ExperimentConfig, out: Path) -> Path:
    series = load_series(config)
    return export_csv(series, Path(out) / BARS_CSV)


def features_stage(config: ExperimentConfig, out: Path, bars: Optional[Path] = None) -> Path:
    """Feature frame, description, selection report, scaler and windowed dataset."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    series = parse_csv(bars) if bars is not None else load_series(config)
    full = build_feature_frame(series, config.indicators)
    save_frame(full, out / FEATURES_CSV)
    describe_frame(full).to_csv(out / DESCRIPTION_CSV, index_label="column", float_format="%.17g")
    columns, table = feature_columns(full, config)
    (out / SELECTION_TXT).write_text(format_selection_report(table, config.threshold), encoding="utf-8")
    prepared = _window(series, full[columns], table, config)
    save_scaler(prepared.scaler, out / SCALER_JSON)
    return save_dataset(prepared.dataset, out / DATASET_NPZ)


def train_stage(config: ExperimentConfig, dataset_path: Path, out: Path) -> Path:
    dataset = load_dataset(dataset_path)
    check_feature_count(dataset.n_features, config)
    spec = model_spec(config, dataset)
    checkpoint = Path(out) / CHECKPOINT
    _, history = train(spec, dataset, config.train, checkpoint_path=checkpoint)
    write_history_csv(history, Path(out) / HISTORY_CSV)
    return checkpoint


def evaluate_stage(dataset_path: Path, checkpoint: Path, scaler_path: Path, out: Path, plot: bool = True) -> Path:
    out = Path(out)
    dataset = load_dataset(dataset_path)
    spec, params, _ = load_checkpoint(checkpoint)
    scaler = load_scaler(scaler_path)
    stamps, y_test, preds, actual_price, predicted_price = predict_test_segment(dataset, spec, params, scaler)
    metrics = evaluate(y_test, preds, actual_price, predicted_price)
    exporter.write_metrics_csv(metrics, out / METRICS_CSV)
    trace = exporter.write_trace_csv(stamps, actual_price, predicted_price, out / TRACE_CSV)
    if plot:
        charts.try_render_chart(actual_price, predicted_price, out / CHART_PNG, "test segment")
    return trace


def backtest_stage(trace_path: Path, out: Path) -> Path:
    trace = exporter.read_trace_csv(trace_path)
    report = backtest(trace["actual_price"].to_numpy(), trace["predicted_price"].to_numpy())
    return exporter.write_backtest_csv(report, Path(out) / BACKTEST_CSV)
