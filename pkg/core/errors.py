"""Error hierarchy shared by every pipeline stage.

Each error names the stage that raised it (``module``) and the process exit
code the CLI reports for it (``exit_code``).
"""
from __future__ import annotations


class ForecastError(ValueError):
    exit_code = 2
    module = "core"

    def __init__(self, message: str = "", *, module: str | None = None) -> None:
        super().__init__(message)
        if module is not None:
            self.module = module

    def describe(self) -> str:
        return f"[{self.module}] {type(self).__name__}: {self}"

    def __reduce__(self):
        # subclasses take differing constructor arguments; rebuild from state
        return _rebuild_error, (type(self), str(self), dict(self.__dict__))


def _rebuild_error(cls, message: str, state: dict) -> ForecastError:
    error = cls.__new__(cls)
    ValueError.__init__(error, message)
    error.__dict__.update(state)
    return error


# Configuration -------------------------------------------------------------

class ConfigError(ForecastError):
    exit_code = 1
    module = "runner"


class InvalidConfig(ConfigError):
    pass


class InconsistentDataset(ConfigError):
    pass


# Data ----------------------------------------------------------------------

class DataError(ForecastError):
    exit_code = 2


class MissingColumn(DataError):
    module = "market_data"


class UnparseableRow(DataError):
    module = "market_data"

    def __init__(self, line: int, detail: str) -> None:
        super().__init__(f"line {line}: {detail}")
        self.line = line


class InvariantViolation(DataError):
    module = "market_data"

    def __init__(self, line: int, rule: str) -> None:
        super().__init__(f"line {line}: violates {rule}")
        self.line = line
        self.rule = rule


class IncompatibleInterval(DataError):
    module = "market_data"


class SeriesTooShort(DataError):
    module = "indicators"


class DegenerateVariance(DataError):
    module = "indicators"


class ConstantColumn(DataError):
    module = "pipeline"


class ColumnMismatch(DataError):
    module = "pipeline"


class EmptySplit(DataError):
    module = "pipeline"


class FeatureCountMismatch(DataError):
    module = "runner"


class EmptyInput(DataError):
    module = "evaluation"


class ZeroActual(DataError):
    module = "evaluation"


class LengthMismatch(DataError):
    module = "evaluation"


# Model ---------------------------------------------------------------------

class ModelError(ForecastError):
    exit_code = 2
    module = "neural"


class ShapeMismatch(ModelError):
    pass


class NonFiniteActivation(ModelError):
    pass


class StaleCache(ModelError):
    pass


# Training ------------------------------------------------------------------

class TrainingError(ForecastError):
    exit_code = 3
    module = "training"


class DivergenceDetected(TrainingError):
    def __init__(self, message: str, params=None, history=None) -> None:
        super().__init__(message)
        # last finite parameters and the epochs completed before divergence
        self.params = params
        self.history = history
