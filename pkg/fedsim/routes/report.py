import argparse
import logging
from typing import List, Sequence, Tuple

import pandas as pd

from ..services.report_service import read_summary, summary_table, write_table

logger = logging.getLogger(__name__)


def cmd_report(result_dirs: Sequence[str], out: str = None) -> Tuple[pd.DataFrame, List[str]]:
    """
    Tabla comparativa (media ± std de la métrica principal) de varios
    directorios de resultados. Los directorios sin summary.json se listan
    como ausentes.

    Returns:
        Tuple[pd.DataFrame, List[str]]: (tabla, directorios ausentes)
    """
    summaries, absent = [], []
    for directory in result_dirs:
        summary = read_summary(directory)
        if summary is None:
            logger.warning(f"Sin summary.json en '{directory}'")
            absent.append(str(directory))
        else:
            summaries.append(summary)
    table = summary_table(summaries).sort_values(["dataset", "strategy", "fusion"], kind="stable")
    table = table.reset_index(drop=True)
    if out:
        write_table(table, out)
    return table, absent


def _handle(args: argparse.Namespace) -> int:
    table, absent = cmd_report(args.results, args.out)
    print(table.to_string(index=False, na_rep="-"))
    for directory in absent:
        print(f"ausente: {directory}")
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("report", help="tabla comparativa de resultados")
    parser.add_argument("results", nargs="+", help="directorios de resultados")
    parser.add_argument("--out", default=None, help="prefijo de los archivos .csv/.txt")
    parser.set_defaults(handler=_handle)
