import json
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from core.errors import InvalidConfig
from core.models import (
    APPROACH_OPTIONS,
    DIRECTION_OPTIONS,
    DataConfig,
    ExperimentConfig,
    IndicatorParams,
    TrainConfig,
    default_schema,
)

_SECTIONS = {"data": DataConfig, "indicators": IndicatorParams, "train": TrainConfig}


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    return asdict(config)


def canonical_json(config: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


def save_experiment_config(filename, config: ExperimentConfig) -> Path:
    path = Path(filename)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(config), encoding="utf-8")
    return path


def load_experiment_config(filename) -> ExperimentConfig:
    return config_from_dict(_read_json(filename), base_dir=Path(filename).resolve().parent)


def _read_json(filename) -> Dict[str, Any]:
    try:
        with open(filename, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{filename}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise InvalidConfig(f"{filename}: top level must be an object")
    return data


def _build(cls, raw: Any, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise InvalidConfig(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise InvalidConfig(f"{where}: {exc}") from exc


def config_from_dict(data: Dict[str, Any], base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Build a config from a (possibly partial) dict; missing keys take defaults.

    A relative ``data.path`` is resolved against ``base_dir`` when it does not
    exist relative to the working directory.
    """
    data = dict(data)
    sections = {}
    for key, cls in _SECTIONS.items():
        sections[key] = _build(cls, data.pop(key, None), key)

    schema = default_schema()
    schema.update(sections["data"].schema or {})
    sections["data"].schema = schema
    if base_dir is not None and sections["data"].path:
        candidate = Path(sections["data"].path)
        if not candidate.is_absolute() and not candidate.exists() and (base_dir / candidate).exists():
            sections["data"].path = str(base_dir / candidate)

    if "split" in data:
        data["split"] = [float(f) for f in data["split"]]
    return _build(ExperimentConfig, {**data, **sections}, "experiment")


def parse_variant(text: str) -> Tuple[str, str]:
    """'indicatorsxbi' -> ('indicators', 'bi')."""
    approach, sep, direction = text.strip().rpartition("x")
    if not sep or approach not in APPROACH_OPTIONS or direction not in DIRECTION_OPTIONS:
        raise InvalidConfig(
            f"variant must look like <{'|'.join(APPROACH_OPTIONS)}>x<{'|'.join(DIRECTION_OPTIONS)}>, got {text!r}"
        )
    return approach, direction


def with_overrides(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    out: Optional[str] = None,
    variant: Optional[str] = None,
) -> ExperimentConfig:
    changes: Dict[str, Any] = {}
    if seed is not None:
        changes["train"] = replace(config.train, seed=int(seed))
    if out is not None:
        changes["output_dir"] = str(out)
    if variant is not None:
        changes["approach"], changes["direction"] = parse_variant(variant)
    return replace(config, **changes) if changes else config


def load_matrix_config(filename) -> List[ExperimentConfig]:
    """Expand a matrix file into experiment configs.

    Keys: ``base`` (an experiment config), ``variants`` (list of
    ``<approach>x<direction>``), optional ``seeds`` and ``stocks`` (each a
    ``{"stock": name, "path": csv}`` object). The product is returned in
    stock, variant, seed order.
    """
    raw = _read_json(filename)
    base_dir = Path(filename).resolve().parent
    base = config_from_dict(raw.get("base", {}), base_dir=base_dir)
    variants = raw.get("variants") or [base.variant]
    seeds = raw.get("seeds") or [base.train.seed]
    stocks = raw.get("stocks") or [{"stock": base.stock, "path": base.data.path}]

    configs: List[ExperimentConfig] = []
    for entry in stocks:
        data_raw = asdict(base.data)
        data_raw["path"] = entry.get("path", base.data.path)
        stock_base = config_from_dict({**config_to_dict(base), "data": data_raw, "stock": entry.get("stock", "")}, base_dir)
        for variant in variants:
            for seed in seeds:
                configs.append(with_overrides(stock_base, seed=seed, variant=variant))
    return configs
