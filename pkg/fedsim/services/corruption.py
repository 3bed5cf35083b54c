"""
Emuladores de ruido del mundo real: modalidades ausentes, etiquetas ausentes
y etiquetas erróneas. Todos producen una DatasetView nueva; el Dataset de
origen nunca se modifica y las muestras fuera de `view.corruptible` (test)
nunca se tocan.
"""
import json
import logging
import math
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np

from ..models.dataset import NO_LABEL, Dataset, DatasetView
from ..models.partition import ClientPartition
from ..schemas.experiment import CorruptionConfig
from ..utils.exceptions import ContractError, SchemaError
from ..utils.rng import (
    STREAM_LABEL_ERROR,
    STREAM_MISSING_LABEL,
    STREAM_MISSING_MODALITY,
    STREAM_TRANSITION,
    stream,
)

logger = logging.getLogger(__name__)


def _check_rate(name: str, value: float, upper_open: bool = False) -> None:
    if value < 0 or value > 1 or (upper_open and value == 1):
        raise ContractError(f"{name}={value} fuera de rango")


def apply_missing_modalities(
    view: DatasetView,
    q: float,
    seed: int,
    granularity: str = "sample",
    partition: Optional[ClientPartition] = None,
) -> DatasetView:
    """
    Marca modalidades como no disponibles con probabilidad q.

    Con granularity='sample' el sorteo es independiente por (muestra, modalidad);
    con 'client' se sortea una vez por (cliente, modalidad) y se aplica a todas
    las muestras de entrenamiento del cliente (requiere la partición).
    """
    _check_rate("q", q)
    available = view.available.copy()
    targets = view.corruptible
    num_modalities = available.shape[1]
    rng = stream(seed, STREAM_MISSING_MODALITY)
    if granularity == "sample":
        missing = rng.random((len(targets), num_modalities)) < q
        available[targets] &= ~missing
    elif granularity == "client":
        if partition is None:
            raise ContractError("granularity='client' necesita la partición")
        target_set = set(int(i) for i in targets)
        for client_id in partition.client_ids():
            missing = rng.random(num_modalities) < q
            cell = [i for i in partition.cells[client_id] if int(i) in target_set]
            available[np.asarray(cell, dtype=int)] &= ~missing
    else:
        raise ContractError(f"granularidad desconocida '{granularity}'")
    return view.replace(available=available)


def apply_missing_labels(view: DatasetView, l: float, seed: int) -> DatasetView:
    """Borra la etiqueta de cada muestra de entrenamiento con probabilidad l."""
    _check_rate("l", l)
    labels = view.labels.copy()
    targets = view.corruptible
    erased = stream(seed, STREAM_MISSING_LABEL).random(len(targets)) < l
    labels[targets[erased]] = NO_LABEL
    return view.replace(labels=labels)


def build_transition_matrix(num_classes: int, e: float, s: float, seed: int) -> np.ndarray:
    """
    Matriz de transición Q con Q[i, j] = P(etiqueta observada j | verdadera i).

    Cada fila tiene diagonal 1 - e y k = max(1, round((1 - s)(C - 1))) destinos
    j != i elegidos al azar, cada uno con masa e / k. El redondeo es hacia
    arriba en los empates (x.5).
    """
    if num_classes < 2:
        raise ContractError("se necesitan al menos 2 clases")
    _check_rate("e", e, upper_open=True)
    _check_rate("s", s, upper_open=True)
    k = max(1, int(math.floor((1.0 - s) * (num_classes - 1) + 0.5)))
    k = min(k, num_classes - 1)
    rng = stream(seed, STREAM_TRANSITION)
    matrix = np.zeros((num_classes, num_classes))
    for i in range(num_classes):
        others = np.array([j for j in range(num_classes) if j != i])
        targets = rng.choice(others, size=k, replace=False)
        matrix[i, targets] = e / k
        matrix[i, i] = 1.0 - e
    return matrix


def apply_erroneous_labels(view: DatasetView, Q: np.ndarray, seed: int) -> DatasetView:
    """
    Vuelve a sortear la etiqueta observada de cada muestra de entrenamiento
    etiquetada a partir de la fila Q[etiqueta verdadera].
    """
    num_classes = view.manifest.num_classes
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape != (num_classes, num_classes):
        raise SchemaError(f"Q tiene forma {Q.shape}, se esperaba ({num_classes}, {num_classes})")
    if np.any(Q < 0) or not np.allclose(Q.sum(axis=1), 1.0, rtol=0.0, atol=1e-9):
        raise ContractError("Q debe ser estocástica por filas")
    labels = view.labels.copy()
    targets = view.corruptible[labels[view.corruptible] != NO_LABEL]
    true_labels = view.dataset.labels()[targets]
    draws = stream(seed, STREAM_LABEL_ERROR).random(len(targets))
    cumulative = np.cumsum(Q, axis=1)[true_labels]
    observed = (draws[:, None] >= cumulative).sum(axis=1)
    labels[targets] = np.minimum(observed, num_classes - 1)
    return view.replace(labels=labels)


def corrupt(
    dataset: Dataset,
    config: CorruptionConfig,
    seed: int,
    corruptible: Sequence[int] = None,
    partition: Optional[ClientPartition] = None,
) -> DatasetView:
    """Aplica los tres emuladores en orden: modalidades, etiquetas ausentes, etiquetas erróneas."""
    view = DatasetView.of(dataset, corruptible)
    if config.missing_modality > 0:
        view = apply_missing_modalities(view, config.missing_modality, seed, config.granularity, partition)
    if config.missing_label > 0:
        view = apply_missing_labels(view, config.missing_label, seed)
    if config.label_error > 0:
        Q = build_transition_matrix(dataset.manifest.num_classes, config.label_error, config.sparsity, seed)
        view = apply_erroneous_labels(view, Q, seed)
    if not config.is_clean():
        logger.info(
            f"Corrupción q={config.missing_modality} l={config.missing_label} "
            f"e={config.label_error} s={config.sparsity} aplicada a {len(view.corruptible)} muestras"
        )
    return view


def save_overlay(view: DatasetView, path: Union[str, Path]) -> None:
    """Exporta la capa de corrupción: id de muestra -> disponibilidad y etiqueta observada."""
    names = view.manifest.modality_names()
    with open(path, "w", encoding="utf-8") as handle:
        for i in view.corruptible:
            record: Dict[str, object] = {
                "id": view.dataset.samples[i].id,
                "available": {m: bool(view.available[i, j]) for j, m in enumerate(names)},
                "label": None if view.labels[i] == NO_LABEL else int(view.labels[i]),
            }
            handle.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_overlay(path: Union[str, Path], dataset: Dataset) -> DatasetView:
    """Reconstruye una DatasetView a partir de un archivo de save_overlay."""
    position = {s.id: i for i, s in enumerate(dataset.samples)}
    names = dataset.manifest.modality_names()
    view = DatasetView.of(dataset)
    available, labels, touched = view.available.copy(), view.labels.copy(), []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            i = position[record["id"]]
            touched.append(i)
            available[i] = [bool(record["available"][m]) for m in names]
            labels[i] = NO_LABEL if record["label"] is None else int(record["label"])
    return DatasetView(dataset=dataset, available=available, labels=labels,
                       corruptible=np.array(sorted(touched), dtype=int))
