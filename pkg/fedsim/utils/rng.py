"""
Flujos de números aleatorios jerárquicos.

Todo el azar del simulador sale de una semilla maestra. Cada consumidor pide
un flujo identificado por una etiqueta y una tupla de enteros (ronda, índice de
cliente, ...), de modo que el resultado no depende del orden de ejecución ni
de cuántos hilos entrenan en paralelo.
"""
from typing import Tuple

import numpy as np

# Etiquetas de flujo; el valor numérico forma parte de la semilla.
STREAM_SYNTHETIC = 1
STREAM_PARTITION = 2
STREAM_FOLDS = 3
STREAM_MISSING_MODALITY = 4
STREAM_MISSING_LABEL = 5
STREAM_TRANSITION = 6
STREAM_LABEL_ERROR = 7
STREAM_INIT = 8
STREAM_SAMPLING = 9
STREAM_CLIENT = 10


def stream(seed: int, tag: int, *key: int) -> np.random.Generator:
    """
    Crea un generador independiente para (seed, tag, *key).

    Args:
        seed: Semilla maestra
        tag: Etiqueta del consumidor (constantes STREAM_*)
        key: Enteros adicionales no negativos, p. ej. ronda e índice de cliente

    Returns:
        np.random.Generator: Generador PCG64 determinista
    """
    entropy: Tuple[int, ...] = (int(seed), int(tag)) + tuple(int(k) for k in key)
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


def client_stream(seed: int, round_num: int, client_index: int) -> np.random.Generator:
    """Flujo privado de un cliente en una ronda (barajado y máscaras de dropout)."""
    return stream(seed, STREAM_CLIENT, round_num, client_index)
