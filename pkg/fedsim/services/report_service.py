"""
Escritura de resultados: registro de rondas (JSON lines), resumen final,
checkpoints y tablas comparativas (CSV y texto alineado) con pandas.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from ..models.federation import ExperimentResult, RoundReport
from ..utils.exceptions import ParseError
from .classifier import save_checkpoint

logger = logging.getLogger(__name__)

ROUNDS_FILE = "rounds.jsonl"
SUMMARY_FILE = "summary.json"
CONFIG_FILE = "config.yaml"
CHECKPOINT_PATTERN = "checkpoint_run{index}.npz"


class RoundLog:
    """
    Registro de rondas: una línea JSON por ronda, volcada a disco al escribirla.

    Attributes:
        path (Path): Archivo de destino
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._handle = None

    def __enter__(self) -> "RoundLog":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "w", encoding="utf-8")
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def write(self, run: int, report: RoundReport) -> None:
        self._handle.write(json.dumps(report.to_record(run), separators=(",", ":")) + "\n")
        self._handle.flush()

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __repr__(self):
        return f"<RoundLog(path='{self.path}')>"


def read_round_log(path: Union[str, Path]) -> List[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}: {e.msg}", line=number)
    return records


def write_results(result: ExperimentResult, out_dir: Union[str, Path]) -> Path:
    """Escribe summary.json y un checkpoint .npz por ejecución."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = out_dir / SUMMARY_FILE
    with open(summary_path, "w", encoding="utf-8") as handle:
        json.dump(result.to_summary(), handle, indent=2)
    for run in result.runs:
        if run.params is not None:
            save_checkpoint(run.params, out_dir / CHECKPOINT_PATTERN.format(index=run.index))
    logger.info(f"Resultados escritos en {out_dir}")
    return summary_path


def read_summary(result_dir: Union[str, Path]) -> Optional[dict]:
    """Resumen de un directorio de resultados, o None si no existe."""
    path = Path(result_dir) / SUMMARY_FILE
    if not path.is_file():
        return None
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def format_cell(mean: Optional[float], std: Optional[float]) -> str:
    if mean is None:
        return "-"
    return f"{mean:.4f} ± {std:.4f}"


def summary_table(summaries: Sequence[dict]) -> pd.DataFrame:
    """Una fila por resultado: dataset, estrategia, fusión y media ± std de la métrica principal."""
    rows = []
    for summary in summaries:
        primary = summary["summary"].get(summary["metric"], {})
        rows.append({
            "dataset": summary["dataset"],
            "strategy": summary["strategy"],
            "fusion": summary["fusion"],
            "metric": summary["metric"],
            "runs": summary["runs"],
            "mean": primary.get("mean"),
            "std": primary.get("std"),
        })
    table = pd.DataFrame(rows, columns=["dataset", "strategy", "fusion", "metric", "runs", "mean", "std"])
    table["cell"] = [format_cell(m, s) for m, s in zip(table["mean"], table["std"])]
    return table


def relative_change(table: pd.DataFrame, baseline: Optional[float]) -> pd.DataFrame:
    """Añade la columna relative_change = (media - base) / base."""
    table = table.copy()
    if baseline is None or baseline == 0:
        table["relative_change"] = None
    else:
        table["relative_change"] = [
            None if mean is None or pd.isna(mean) else (mean - baseline) / baseline
            for mean in table["mean"]
        ]
    return table


def write_table(table: pd.DataFrame, stem: Union[str, Path]) -> Dict[str, Path]:
    """Escribe <stem>.csv (precisión completa) y <stem>.txt (tabla alineada)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = stem.with_suffix(".csv")
    txt_path = stem.with_suffix(".txt")
    table.to_csv(csv_path, index=False)
    with open(txt_path, "w", encoding="utf-8") as handle:
        handle.write(table.to_string(index=False, na_rep="-") + "\n")
    logger.info(f"Tabla escrita en {csv_path}")
    return {"csv": csv_path, "txt": txt_path}
