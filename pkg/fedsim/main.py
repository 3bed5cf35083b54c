import argparse
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from .config.settings import LOG_FILE, LOG_FORMAT, LOG_LEVEL
from .routes import partition, report, run, sweep, synth
from .utils.exceptions import FedSimError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or LOG_LEVEL).upper(),
        format=LOG_FORMAT,
        filename=LOG_FILE,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsim",
        description="Simulador de aprendizaje federado multimodal",
    )
    parser.add_argument("--log-level", default=None, help="nivel de logging (por defecto FEDSIM_LOG_LEVEL)")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in (synth, partition, run, sweep, report):
        module.register(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Punto de entrada de la línea de comandos.

    Returns:
        int: 0 éxito, 1 error de ejecución, 2 configuración inválida
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args) or EXIT_OK
    except ValidationError as e:
        logger.error(f"Configuración inválida: {e}")
        return EXIT_CONFIG
    except FedSimError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"Error de E/S: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Error inesperado: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
