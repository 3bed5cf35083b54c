import argparse
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Sequence, Tuple

import pandas as pd

from ..config.experiment import add_override_arguments, load_config, overrides_from_args, set_dotted
from ..models.dataset import Dataset
from ..schemas.experiment import ExperimentConfig
from ..services.datastore import load_source
from ..services.report_service import relative_change, write_table
from ..utils.exceptions import ConfigError, FedSimError
from .run import execute, output_dir

logger = logging.getLogger(__name__)

AXES = {
    "q": "corruption.missing_modality",
    "l": "corruption.missing_label",
    "e": "corruption.label_error",
}
DEFAULT_GRID = [0.1, 0.2, 0.3, 0.4, 0.5]
COMPARE_RATE = 0.3


def _with_values(config: ExperimentConfig, values: Mapping[str, float]) -> ExperimentConfig:
    document = config.model_dump(mode="json")
    for key, value in values.items():
        set_dotted(document, key, value)
    return ExperimentConfig.model_validate(document)


def _run_cells(
    cells: Sequence[Tuple[Dict[str, Any], ExperimentConfig, str]],
    out_dir: Path,
    dataset: Dataset,
) -> pd.DataFrame:
    rows = []
    for row, config, name in cells:
        try:
            result = execute(config, out_dir / name, dataset)
            mean, std = result.summary.get(result.metric, (None, None))
            rows.append({**row, "status": "ok", "metric": result.metric, "mean": mean, "std": std})
        except FedSimError as e:
            logger.warning(f"Celda '{name}' fallida: {e}")
            rows.append({**row, "status": f"failed: {e}", "metric": None, "mean": None, "std": None})
    return pd.DataFrame(rows)


def cmd_sweep(
    config_path: str,
    axis: str,
    values: Sequence[float] = None,
    overrides: Mapping[str, Any] = None,
) -> pd.DataFrame:
    """
    Una ejecución por valor del eje de corrupción (q, l o e) con las mismas
    semillas; tabla con la métrica absoluta y el cambio relativo frente al
    valor 0, que se ejecuta aunque no esté en la lista.

    Returns:
        pd.DataFrame: Tabla escrita en sweep_<eje>.csv / .txt
    """
    if axis not in AXES:
        raise ConfigError(f"eje desconocido '{axis}'")
    values = list(DEFAULT_GRID if values is None else values)
    base = load_config(config_path, overrides)
    grid = ([0.0] if 0.0 not in values else []) + values
    # Valida todo el barrido antes de ejecutar nada
    configs = [_with_values(base, {AXES[axis]: value}) for value in grid]
    out_dir = output_dir(base) / f"sweep_{axis}"
    dataset = load_source(base.dataset)

    cells = [({axis: value}, config, f"{axis}_{value:g}") for value, config in zip(grid, configs)]
    table = _run_cells(cells, out_dir, dataset)
    baseline = table.loc[table[axis] == 0.0, "mean"].iloc[0]
    table = relative_change(table, None if pd.isna(baseline) else float(baseline))
    write_table(table, out_dir / f"sweep_{axis}")
    return table


def cmd_compare(
    config_path: str,
    rate: float = COMPARE_RATE,
    overrides: Mapping[str, Any] = None,
) -> pd.DataFrame:
    """
    Compara la línea base limpia con cada tipo de corrupción (q, l, e) a la
    misma tasa, con las mismas semillas.
    """
    base = load_config(config_path, overrides)
    clean = {key: 0.0 for key in AXES.values()}
    conditions = [("clean", clean)] + [(axis, {**clean, key: rate}) for axis, key in AXES.items()]
    configs = [_with_values(base, values) for _, values in conditions]
    out_dir = output_dir(base) / f"compare_{rate:g}"
    dataset = load_source(base.dataset)

    cells = [({"condition": name, "rate": 0.0 if name == "clean" else rate}, config, name)
             for (name, _), config in zip(conditions, configs)]
    table = _run_cells(cells, out_dir, dataset)
    baseline = table.loc[table["condition"] == "clean", "mean"].iloc[0]
    table = relative_change(table, None if pd.isna(baseline) else float(baseline))
    write_table(table, out_dir / "compare")
    return table


def _handle_sweep(args: argparse.Namespace) -> int:
    table = cmd_sweep(args.config, args.axis, args.values, overrides_from_args(args))
    print(table.to_string(index=False, na_rep="-"))
    return 0


def _handle_compare(args: argparse.Namespace) -> int:
    table = cmd_compare(args.config, args.rate, overrides_from_args(args))
    print(table.to_string(index=False, na_rep="-"))
    return 0


def register(subparsers) -> None:
    sweep = subparsers.add_parser("sweep", help="barrido de una tasa de corrupción")
    sweep.add_argument("config", help="configuración base (YAML)")
    sweep.add_argument("--axis", required=True, choices=sorted(AXES), help="q, l o e")
    sweep.add_argument("--values", nargs="+", type=float, default=None,
                       help="valores del barrido (por defecto 0.1 … 0.5)")
    add_override_arguments(sweep)
    sweep.set_defaults(handler=_handle_sweep)

    compare = subparsers.add_parser("compare", help="línea base frente a q, l y e a la misma tasa")
    compare.add_argument("config", help="configuración base (YAML)")
    compare.add_argument("--rate", type=float, default=COMPARE_RATE)
    add_override_arguments(compare)
    compare.set_defaults(handler=_handle_compare)
