import argparse
import logging
from pathlib import Path
from typing import Any, Mapping, Union

from ..config.experiment import add_override_arguments, dump_config, load_config, overrides_from_args
from ..config.settings import OUTPUT_DIR
from ..models.dataset import Dataset
from ..models.federation import ExperimentResult
from ..schemas.experiment import ExperimentConfig
from ..services.federation import run_experiment
from ..services.report_service import CONFIG_FILE, ROUNDS_FILE, RoundLog, write_results

logger = logging.getLogger(__name__)


def output_dir(config: ExperimentConfig) -> Path:
    return Path(config.output_dir or Path(OUTPUT_DIR) / config.name)


def execute(config: ExperimentConfig, out_dir: Union[str, Path], dataset: Dataset = None) -> ExperimentResult:
    """
    Ejecuta un experimento escribiendo config.yaml, rounds.jsonl (ronda a ronda),
    summary.json y los checkpoints en `out_dir`.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(config, out_dir / CONFIG_FILE)
    with RoundLog(out_dir / ROUNDS_FILE) as log:
        result = run_experiment(config, dataset, on_round=log.write)
    write_results(result, out_dir)
    return result


def cmd_run(config_path: str, overrides: Mapping[str, Any] = None) -> ExperimentResult:
    config = load_config(config_path, overrides)
    logger.info(f"Experimento '{config.name}': {config.strategy.name.value}, {config.rounds} rondas")
    result = execute(config, output_dir(config))
    mean, std = result.summary.get(result.metric, (float("nan"), float("nan")))
    logger.info(f"Experimento '{config.name}' terminado: {result.metric} = {mean:.4f} ± {std:.4f}")
    return result


def _handle(args: argparse.Namespace) -> int:
    cmd_run(args.config, overrides_from_args(args))
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("run", help="ejecuta un experimento federado")
    parser.add_argument("config", help="configuración de experimento (YAML)")
    add_override_arguments(parser)
    parser.set_defaults(handler=_handle)
