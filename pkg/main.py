# Entry point for the forecasting command line
# Each subcommand runs one pipeline stage, or the whole pipeline, from a JSON config

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from core import runner
from core.errors import ForecastError
from core.market_data import export_csv, synthetic_bars
from core.storage import load_experiment_config, load_matrix_config, with_overrides

logger = logging.getLogger("main")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument("--config", type=Path, required=config_required, help="Experiment config (JSON)")
    parser.add_argument("--seed", type=int, help="Override train.seed")
    parser.add_argument("--out", help="Output directory (defaults to the run directory of the config)")
    parser.add_argument("--variant", help="<univariate|ohlcv|indicators>x<uni|bi>")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="LSTM / BiLSTM forecasting of hourly OHLCV series.")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("run", help="Full pipeline for one experiment"))
    _add_common(sub.add_parser("ingest", help="Parse and resample the input CSV into bars.csv"))

    features = sub.add_parser("features", help="Feature frame, selection report and windowed dataset")
    _add_common(features)
    features.add_argument("--bars", type=Path, help="Use an ingested bars.csv instead of the config input")

    train = sub.add_parser("train", help="Train on a saved dataset.npz")
    _add_common(train)
    train.add_argument("--dataset", type=Path, help="Defaults to <out>/dataset.npz")

    evaluate = sub.add_parser("evaluate", help="Test metrics and prediction trace from a checkpoint")
    _add_common(evaluate, config_required=False)
    evaluate.add_argument("--dataset", type=Path)
    evaluate.add_argument("--checkpoint", type=Path)
    evaluate.add_argument("--scaler", type=Path)
    evaluate.add_argument("--no-plot", action="store_true")

    backtest = sub.add_parser("backtest", help="Long/flat backtest of a prediction trace")
    _add_common(backtest, config_required=False)
    backtest.add_argument("--trace", type=Path)

    matrix = sub.add_parser("matrix", help="Run a variant x seed (x stock) matrix and rank by R2")
    matrix.add_argument("--config", type=Path, required=True, help="Matrix config (JSON)")
    matrix.add_argument("--out", help="Directory for the comparison tables")
    matrix.add_argument("--workers", type=int, default=1)
    matrix.add_argument("-v", "--verbose", action="store_true")

    synth = sub.add_parser("synthesize", help="Write a synthetic noisy multi-sine OHLCV CSV")
    synth.add_argument("--rows", type=int, default=4000)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--interval", default="1h")
    synth.add_argument("--noise", type=float, default=0.02, help="Noise sigma as a fraction of the amplitude")
    synth.add_argument("--periods", type=float, nargs="+", help="Sine periods in bars")
    synth.add_argument("--output", type=Path, required=True)
    synth.add_argument("-v", "--verbose", action="store_true")
    return parser


def _stage_dir(args, config) -> Path:
    out = Path(args.out) if args.out else runner.run_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    if not args.config.exists():
        raise FileNotFoundError(f"Config file not found: {args.config}")
    return with_overrides(load_experiment_config(args.config), seed=args.seed, out=args.out, variant=args.variant)


def dispatch(args) -> None:
    command = args.command
    if command == "synthesize":
        kwargs = {"periods": tuple(args.periods)} if args.periods else {}
        series = synthetic_bars(args.rows, seed=args.seed, interval=args.interval, noise=args.noise, **kwargs)
        path = export_csv(series, args.output)
        logger.info("wrote %d synthetic bars to %s", len(series), path)
        return
    if command == "matrix":
        configs = load_matrix_config(args.config)
        logger.info("matrix: %d experiments", len(configs))
        table = runner.run_matrix(configs, workers=args.workers, output_dir=args.out)
        logger.info("ranked %d variants; best: %s", len(table), table.loc[0, "model"])
        return
    if command in ("evaluate", "backtest") and args.config is None:
        if not args.out:
            raise FileNotFoundError(f"{command} needs --config or --out")
        out = Path(args.out)
    else:
        config = _load(args)
        if command == "run":
            artifacts = runner.run_experiment(config)
            logger.info("artifacts in %s", artifacts.output_dir)
            return
        out = _stage_dir(args, config)

    if command == "ingest":
        logger.info("bars written to %s", runner.ingest_stage(config, out))
    elif command == "features":
        logger.info("dataset written to %s", runner.features_stage(config, out, args.bars))
    elif command == "train":
        logger.info("checkpoint written to %s", runner.train_stage(config, args.dataset or out / runner.DATASET_NPZ, out))
    elif command == "evaluate":
        trace = runner.evaluate_stage(
            args.dataset or out / runner.DATASET_NPZ,
            args.checkpoint or out / runner.CHECKPOINT,
            args.scaler or out / runner.SCALER_JSON,
            out,
            plot=not args.no_plot,
        )
        logger.info("trace written to %s", trace)
    elif command == "backtest":
        logger.info("backtest written to %s", runner.backtest_stage(args.trace or out / runner.TRACE_CSV, out))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT, stream=sys.stderr, force=True)
    try:
        dispatch(args)
    except ForecastError as exc:
        logger.error("%s", exc.describe())
        return exc.exit_code
    except FileNotFoundError as exc:
        logger.error("[runner] FileNotFoundError: %s", exc)
        return 1 if getattr(args, "config", None) is not None and not args.config.exists() else 2
    except OSError as exc:
        logger.error("[runner] %s: %s", type(exc).__name__, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
