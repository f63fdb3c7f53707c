from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from core.evaluation import backtest_frame, format_table, metrics_frame
from core.models import (
    BacktestReport,
    ExperimentConfig,
    MetricsReport,
    TrainHistory,
    WindowedDataset,
)

_TEMPLATES_DIR = Path(__file__).resolve().parent / "templates"
_FLOAT_FORMAT = "%.17g"


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=_FLOAT_FORMAT, lineterminator="\n")
    return path


def write_metrics_csv(report: MetricsReport, path: Path, label: str = "") -> Path:
    frame = metrics_frame(report)
    if label:
        frame.insert(0, "model", label)
    return write_csv(frame, path)


def write_backtest_csv(report: BacktestReport, path: Path) -> Path:
    return write_csv(backtest_frame(report), path)


def trace_frame(timestamps: Sequence, actual: np.ndarray, predicted: np.ndarray) -> pd.DataFrame:
    index = pd.Index(timestamps)
    stamps = index.strftime("%Y-%m-%dT%H:%M") if isinstance(index, pd.DatetimeIndex) else index.astype(str)
    return pd.DataFrame({"timestamp": stamps, "actual_price": actual, "predicted_price": predicted})


def write_trace_csv(timestamps: Sequence, actual: np.ndarray, predicted: np.ndarray, path: Path) -> Path:
    return write_csv(trace_frame(timestamps, actual, predicted), path)


def read_trace_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, encoding="utf-8")


def write_comparison(table: pd.DataFrame, output_dir: Path, title: str = "", stem: str = "comparison") -> dict[str, Path]:
    """CSV, text and Excel renderings of a comparison table."""
    from export_matrix_excel import write_excel

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": write_csv(table, output_dir / f"{stem}.csv")}
    text_path = output_dir / f"{stem}.txt"
    text_path.write_text(format_table(table, title), encoding="utf-8")
    paths["txt"] = text_path
    paths["xlsx"] = output_dir / f"{stem}.xlsx"
    write_excel(table, paths["xlsx"], title or stem)
    return paths


def render_report(
    config: ExperimentConfig,
    dataset: WindowedDataset,
    history: TrainHistory,
    metrics: MetricsReport,
    backtest: BacktestReport,
    template_path: Path | None = None,
) -> str:
    """Fill the report template with one experiment's results."""
    template = (template_path or _TEMPLATES_DIR / "report_template.txt").read_text(encoding="utf-8")
    replacements = {
        "[PLACEHOLDER_NAME]": config.name + (f" / {config.stock}" if config.stock else ""),
        "[PLACEHOLDER_LABEL]": config.label,
        "[PLACEHOLDER_VARIANT]": config.variant,
        "[PLACEHOLDER_DATA]": _render_data(config, dataset),
        "[PLACEHOLDER_FEATURES]": _render_features(dataset),
        "[PLACEHOLDER_MODEL]": _render_model(config),
        "[PLACEHOLDER_HISTORY]": _render_history(history),
        "[PLACEHOLDER_METRICS]": _render_metrics(metrics),
        "[PLACEHOLDER_BACKTEST]": _render_backtest(backtest),
    }
    for placeholder, value in replacements.items():
        template = template.replace(placeholder, value)
    return template


def write_report(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _render_data(config: ExperimentConfig, dataset: WindowedDataset) -> str:
    lines = [
        f"input = {Path(config.data.path).name}",
        f"resample = {config.data.resample or 'none'}",
        f"window W = {dataset.window}",
        f"windows N = {len(dataset)}",
    ]
    if dataset.boundaries is not None:
        for name, (start, stop) in dataset.boundaries.as_dict().items():
            lines.append(f"{name} = [{start}, {stop}) ({stop - start} windows)")
    lines.append(f"split order = {config.split_order}")
    lines.append(f"scaler fit = {config.scaler_fit}")
    return "\n".join(lines)


def _render_features(dataset: WindowedDataset) -> str:
    lines = [f"F = {dataset.n_features}", f"target = {dataset.target_column}"]
    lines.extend(f"  - {name}" for name in dataset.feature_names)
    return "\n".join(lines)


def _render_model(config: ExperimentConfig) -> str:
    train = config.train
    clip = "off" if train.clip_norm is None else f"{train.clip_norm:g}"
    return "\n".join([
        f"direction = {config.direction}",
        f"hidden size H = {config.hidden_size}",
        f"epochs = {train.epochs}, patience = {train.patience}, batch = {train.batch_size}",
        f"adam lr = {train.learning_rate:g}, betas = ({train.beta1:g}, {train.beta2:g}), eps = {train.eps:g}",
        f"clip norm = {clip}, shuffle = {train.shuffle}, seed = {train.seed}",
    ])


def _render_history(history: TrainHistory) -> str:
    lines = ["epoch   train_loss      val_loss"]
    for epoch, (tr, va) in enumerate(zip(history.train_loss, history.val_loss), start=1):
        marker = " *" if epoch == history.best_epoch else ""
        lines.append(f"{epoch:>5}  {tr:>12.6g}  {va:>12.6g}{marker}")
    if history.stopped_early:
        lines.append(f"stopped early; best epoch {history.best_epoch}")
    return "\n".join(lines)


def _render_metrics(metrics: MetricsReport) -> str:
    lines = [
        f"R2   = {metrics.r2:.6f}",
        f"MAE  = {metrics.mae:.6f}",
        f"RMSE = {metrics.rmse:.6f}",
        f"MAPE = {metrics.mape:.4f} %",
        f"n    = {metrics.n}",
    ]
    if metrics.mae_price is not None:
        lines.append(f"MAE (price units)  = {metrics.mae_price:.6f}")
        lines.append(f"RMSE (price units) = {metrics.rmse_price:.6f}")
    if metrics.mape_price is not None:
        lines.append(f"MAPE (price units) = {metrics.mape_price:.4f} %")
    return "\n".join(lines)


def _render_backtest(report: BacktestReport) -> str:
    return "\n".join([
        f"directional accuracy = {report.directional_accuracy:.4f}",
        f"cumulative return    = {report.cumulative_return:.6f}",
        f"trades               = {report.trade_count}",
        f"steps                = {report.steps}",
    ])
