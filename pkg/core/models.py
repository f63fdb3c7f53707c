from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from core.errors import InvalidConfig

OHLCV_COLUMNS = ["open", "high", "low", "close", "volume"]
TARGET_COLUMN = "close"
TIMESTAMP_COLUMN = "timestamp"

APPROACH_OPTIONS = ["univariate", "ohlcv", "indicators"]
DEFAULT_APPROACH = "indicators"
APPROACH_FEATURE_COUNTS = {"univariate": 1, "ohlcv": 5, "indicators": 12}

DIRECTION_OPTIONS = ["uni", "bi"]
DEFAULT_DIRECTION = "bi"

SPLIT_ORDER_OPTIONS = ["train_val_test", "train_test_val"]
SCALER_FIT_OPTIONS = ["train", "full"]
TRIMA_VARIANTS = ["literal", "halfwindow"]

VARIANT_LABELS = {
    ("univariate", "uni"): "Univariate LSTM",
    ("univariate", "bi"): "Univariate bi-LSTM",
    ("ohlcv", "uni"): "Multivariate OHLCV LSTM",
    ("ohlcv", "bi"): "Multivariate OHLCV bi-LSTM",
    ("indicators", "uni"): "Multivariate LSTM",
    ("indicators", "bi"): "Multivariate bi-LSTM",
}

GATES = ("i", "f", "o", "g")
LSTM_TENSOR_NAMES = tuple(f"{kind}_{gate}" for kind in ("w", "u", "b") for gate in GATES)

# A FeatureFrame is a DataFrame over a shared DatetimeIndex, one column per
# feature; an IndicatorSeries is a named Series with NaN during warm-up.
FeatureFrame = pd.DataFrame
IndicatorSeries = pd.Series


# Market data ---------------------------------------------------------------

@dataclass(frozen=True)
class Bar:
    timestamp: datetime
    open: float
    high: float
    low: float
    close: float
    volume: int


@dataclass(frozen=True)
class OhlcvSeries:
    frame: pd.DataFrame
    interval: pd.Timedelta

    def __len__(self) -> int:
        return len(self.frame)

    def bars(self) -> Iterator[Bar]:
        for ts, row in zip(self.frame.index, self.frame.itertuples(index=False)):
            yield Bar(ts.to_pydatetime(), row.open, row.high, row.low, row.close, int(row.volume))


# Pipeline ------------------------------------------------------------------

@dataclass(frozen=True)
class Scaler:
    columns: Tuple[str, ...]
    minimum: Dict[str, float]
    maximum: Dict[str, float]
    fit_range: Tuple[int, int]


@dataclass(frozen=True)
class Boundaries:
    train: Tuple[int, int]
    val: Tuple[int, int]
    test: Tuple[int, int]

    def as_dict(self) -> Dict[str, Tuple[int, int]]:
        return {"train": self.train, "val": self.val, "test": self.test}


@dataclass(frozen=True)
class WindowedDataset:
    X: np.ndarray
    y: np.ndarray
    window: int
    feature_names: Tuple[str, ...]
    target_column: str
    end_rows: np.ndarray
    target_index: Optional[pd.Index] = None
    boundaries: Optional[Boundaries] = None

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def segment(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        if self.boundaries is None:
            raise ValueError("dataset has not been split")
        start, stop = self.boundaries.as_dict()[name]
        return self.X[start:stop], self.y[start:stop]


# Neural core ---------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    direction: str = DEFAULT_DIRECTION
    hidden_size: int = 64
    n_features: int = 1
    output_dim: int = 1

    @property
    def pooled_dim(self) -> int:
        return 2 * self.hidden_size if self.direction == "bi" else self.hidden_size


@dataclass
class LstmParams:
    w_i: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_g: np.ndarray
    u_i: np.ndarray
    u_f: np.ndarray
    u_o: np.ndarray
    u_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_i.shape[0]

    @property
    def n_features(self) -> int:
        return self.w_i.shape[1]

    def tensors(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in LSTM_TENSOR_NAMES}


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class ModelParams:
    """Full learnable parameter set: one LSTM per direction plus the dense head."""

    forward: LstmParams
    backward: Optional[LstmParams]
    head_w: np.ndarray
    head_b: np.ndarray

    def named_tensors(self) -> Dict[str, np.ndarray]:
        # insertion order is the checkpoint order
        named: Dict[str, np.ndarray] = {}
        for name, value in self.forward.tensors().items():
            named[f"forward.{name}"] = value
        if self.backward is not None:
            for name, value in self.backward.tensors().items():
                named[f"backward.{name}"] = value
        named["head.w"] = self.head_w
        named["head.b"] = self.head_b
        return named

    @classmethod
    def from_named(cls, tensors: Dict[str, np.ndarray]) -> "ModelParams":
        def _lstm(prefix: str) -> Optional[LstmParams]:
            if f"{prefix}.w_i" not in tensors:
                return None
            return LstmParams(**{name: tensors[f"{prefix}.{name}"] for name in LSTM_TENSOR_NAMES})

        forward = _lstm("forward")
        if forward is None:
            raise KeyError("forward.w_i")
        return cls(forward, _lstm("backward"), tensors["head.w"], tensors["head.b"])

    def copy(self) -> "ModelParams":
        return ModelParams.from_named({k: v.copy() for k, v in self.named_tensors().items()})


# Training ------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.001
    patience: int = 5
    batch_size: int = 32
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: Optional[float] = 5.0
    shuffle: bool = False
    min_delta: float = 0.0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise InvalidConfig(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.patience < 1:
            raise InvalidConfig(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise InvalidConfig(f"clip_norm must be > 0 or null, got {self.clip_norm}")


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_loss(self) -> float:
        return min(self.val_loss) if self.val_loss else float("inf")


# Evaluation ----------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    r2: float
    mae: float
    rmse: float
    mape: float
    n: int
    mae_price: Optional[float] = None
    rmse_price: Optional[float] = None
    mape_price: Optional[float] = None


@dataclass(frozen=True)
class BacktestReport:
    directional_accuracy: float
    cumulative_return: float
    trade_count: int
    steps: int


# Runner --------------------------------------------------------------------

def default_schema() -> Dict[str, str]:
    return {name: name for name in [TIMESTAMP_COLUMN] + OHLCV_COLUMNS}


@dataclass
class DataConfig:
    path: str = ""
    schema: Dict[str, str] = field(default_factory=default_schema)
    resample: Optional[str] = "1h"
    source_interval: Optional[str] = None


@dataclass
class IndicatorParams:
    sma_period: int = 5
    ema_period: int = 5
    ema_k: float = 2.0
    trima_period: int = 5
    trima_variant: str = TRIMA_VARIANTS[0]
    kama_period: int = 10
    kama_fast: int = 2
    kama_slow: int = 30
    bollinger_period: int = 20
    bollinger_dev: float = 2.0

    def __post_init__(self) -> None:
        if self.trima_variant not in TRIMA_VARIANTS:
            raise InvalidConfig(f"trima_variant must be one of {TRIMA_VARIANTS}, got {self.trima_variant!r}")
        for name in ("sma_period", "ema_period", "trima_period", "kama_period", "kama_fast", "kama_slow", "bollinger_period"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.bollinger_dev < 0:
            raise InvalidConfig("bollinger_dev must be >= 0")


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    name: str = "experiment"
    stock: str = ""
    approach: str = DEFAULT_APPROACH
    direction: str = DEFAULT_DIRECTION
    window: int = 24
    split: List[float] = field(default_factory=lambda: [0.70, 0.15, 0.15])
    split_order: str = SPLIT_ORDER_OPTIONS[0]
    scaler_fit: str = SCALER_FIT_OPTIONS[0]
    hidden_size: int = 64
    threshold: float = 0.99
    strict_selection: bool = False
    indicators: IndicatorParams = field(default_factory=IndicatorParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs"
    plot: bool = True

    def __post_init__(self) -> None:
        if self.approach not in APPROACH_OPTIONS:
            raise InvalidConfig(f"approach must be one of {APPROACH_OPTIONS}, got {self.approach!r}")
        if self.direction not in DIRECTION_OPTIONS:
            raise InvalidConfig(f"direction must be one of {DIRECTION_OPTIONS}, got {self.direction!r}")
        if self.split_order not in SPLIT_ORDER_OPTIONS:
            raise InvalidConfig(f"split_order must be one of {SPLIT_ORDER_OPTIONS}, got {self.split_order!r}")
        if self.scaler_fit not in SCALER_FIT_OPTIONS:
            raise InvalidConfig(f"scaler_fit must be one of {SCALER_FIT_OPTIONS}, got {self.scaler_fit!r}")
        if self.window < 1:
            raise InvalidConfig(f"window must be >= 1, got {self.window}")
        if self.hidden_size < 1:
            raise InvalidConfig(f"hidden_size must be >= 1, got {self.hidden_size}")
        if len(self.split) != 3 or any(f < 0 for f in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise InvalidConfig(f"split must be three non-negative fractions summing to 1, got {self.split}")
        if not 0 < self.threshold <= 1:
            raise InvalidConfig(f"threshold must lie in (0, 1], got {self.threshold}")

    @property
    def variant(self) -> str:
        return f"{self.approach}x{self.direction}"

    @property
    def label(self) -> str:
        return VARIANT_LABELS[(self.approach, self.direction)]

    @property
    def expected_features(self) -> int:
        return APPROACH_FEATURE_COUNTS[self.approach]


@dataclass
class RunArtifacts:
    output_dir: Path
    checkpoint: Path
    history_csv: Path
    metrics_csv: Path
    trace_csv: Path
    report_txt: Path
    metrics: MetricsReport
    backtest: BacktestReport
    history: TrainHistory
    chart: Optional[Path] = None
    backtest_csv: Optional[Path] = None
    selection_txt: Optional[Path] = None
