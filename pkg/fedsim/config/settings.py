import os
from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL = os.getenv("FEDSIM_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("FEDSIM_LOG_FILE") or None
OUTPUT_DIR = os.getenv("FEDSIM_OUTPUT_DIR", "runs")
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def get_workers() -> int:
    """
    Número de hilos para entrenar clientes dentro de una ronda.

    Se lee en cada llamada para que los tests puedan cambiar la variable de
    entorno. Un valor de 1 ejecuta todo en serie; el resultado es idéntico.
    """
    raw = os.getenv("FEDSIM_WORKERS", "1")
    try:
        workers = int(raw)
    except ValueError:
        workers = 1
    return max(1, workers)
