from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from core.market_data import export_csv, synthetic_bars
from core.models import DataConfig, ExperimentConfig, TrainConfig

CSV_HEADER = "timestamp,open,high,low,close,volume\n"


@pytest.fixture
def write_csv(tmp_path):
    """Write raw CSV text (header added unless given) and return its path."""

    def _write(body: str, name: str = "bars.csv", header: str = CSV_HEADER) -> Path:
        path = tmp_path / name
        path.write_text(header + body, encoding="utf-8")
        return path

    return _write


@pytest.fixture
def random_walk():
    def _walk(n: int = 1000, seed: int = 7, start: float = 100.0) -> pd.Series:
        rng = np.random.default_rng(seed)
        return pd.Series(start + np.cumsum(rng.normal(0.0, 1.0, n)))

    return _walk


@pytest.fixture
def hourly_bars():
    return synthetic_bars(600, seed=3)


@pytest.fixture
def bars_csv(tmp_path, hourly_bars):
    return export_csv(hourly_bars, tmp_path / "synthetic.csv")


@pytest.fixture
def small_config(tmp_path, bars_csv):
    """A config that trains in seconds: tiny model, two epochs."""

    def _config(approach: str = "indicators", direction: str = "bi", **overrides) -> ExperimentConfig:
        train = overrides.pop("train", TrainConfig(epochs=2, batch_size=64, seed=5))
        return ExperimentConfig(
            data=DataConfig(path=str(bars_csv)),
            name="tiny",
            approach=approach,
            direction=direction,
            hidden_size=4,
            train=train,
            output_dir=str(tmp_path / "runs"),
            plot=False,
            **overrides,
        )

    return _config
