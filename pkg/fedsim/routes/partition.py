import argparse
import json
import logging
from typing import Any, Dict, Mapping

from ..config.experiment import add_override_arguments, load_config, overrides_from_args
from ..services.corruption import corrupt, save_overlay
from ..services.datastore import load_source
from ..services.federation import build_partition
from ..services.partition import heterogeneity_report, save_partition
from .run import output_dir

logger = logging.getLogger(__name__)

PARTITION_FILE = "partition.json"
REPORT_FILE = "heterogeneity.json"
OVERLAY_FILE = "overlay.jsonl"


def cmd_partition(config_path: str, overrides: Mapping[str, Any] = None, overlay: bool = False) -> Dict[str, Any]:
    """
    Construye la partición de la configuración (primera semilla) y la exporta
    junto con su informe de heterogeneidad y, opcionalmente, la capa de corrupción.

    Returns:
        dict: Informe de heterogeneidad
    """
    config = load_config(config_path, overrides)
    out_dir = output_dir(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_source(config.dataset)
    seed = config.seeds[0]
    partition = build_partition(dataset, config.partition, seed)
    save_partition(partition, dataset, out_dir / PARTITION_FILE)
    report = heterogeneity_report(partition, dataset)
    with open(out_dir / REPORT_FILE, "w", encoding="utf-8") as handle:
        json.dump(report, handle, indent=2)
    if overlay:
        view = corrupt(dataset, config.corruption, seed, partition=partition)
        save_overlay(view, out_dir / OVERLAY_FILE)
    logger.info(
        f"Partición de {len(partition)} clientes escrita en {out_dir} "
        f"(entropía media {report['mean_entropy']:.3f})"
    )
    return report


def _handle(args: argparse.Namespace) -> int:
    cmd_partition(args.config, overrides_from_args(args), overlay=args.overlay)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("partition", help="exporta la partición de clientes y su heterogeneidad")
    parser.add_argument("config", help="configuración de experimento (YAML)")
    parser.add_argument("--overlay", action="store_true", help="exporta también la capa de corrupción")
    add_override_arguments(parser)
    parser.set_defaults(handler=_handle)
