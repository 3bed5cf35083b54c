"""
Particiones no-IID: por identificador natural de cliente o sintéticas por
sesgo de etiquetas con Dirichlet.

Receta Dirichlet (documentada para poder reproducir los sorteos):

    rng = stream(seed, STREAM_PARTITION)
    repetir hasta max_retries veces:
        para cada clase c en orden ascendente:
            idx  = rng.permutation(índices de entrenamiento de clase c, ascendentes)
            g    = rng.standard_gamma(alpha, size=num_clients)
            p    = g / g.sum()   (si g.sum() == 0: p = e_j con j = rng.integers(num_clients))
            n    = rng.multinomial(len(idx), p)
            el cliente j recibe idx[sum(n[:j]) : sum(n[:j+1])]
        aceptar si todos los clientes tienen >= min_client_samples
"""
import json
import logging
from collections import defaultdict
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ..models.dataset import NO_LABEL, Dataset
from ..models.partition import ClientPartition
from ..utils.exceptions import ContractError, InfeasiblePartitionError, MissingClientIdError, ParseError
from ..utils.rng import STREAM_PARTITION, stream

logger = logging.getLogger(__name__)

MIN_CLIENT_SAMPLES = 2
MAX_RETRIES = 100


def _train_indices(dataset: Dataset, indices: Optional[Sequence[int]]) -> np.ndarray:
    if indices is not None:
        return np.sort(np.asarray(indices, dtype=int))
    return dataset.indices("train")


def partition_natural(dataset: Dataset, indices: Sequence[int] = None) -> ClientPartition:
    """
    Una celda por client_id distinto entre las muestras de entrenamiento.

    Raises:
        MissingClientIdError: Si alguna muestra de entrenamiento no tiene client_id
    """
    cells: Dict[str, List[int]] = defaultdict(list)
    for i in _train_indices(dataset, indices):
        client_id = dataset.samples[i].client_id
        if client_id is None:
            raise MissingClientIdError(f"la muestra '{dataset.samples[i].id}' no tiene client_id")
        cells[client_id].append(int(i))
    return ClientPartition(
        cells={cid: np.array(sorted(v), dtype=int) for cid, v in cells.items()},
        provenance={"mode": "natural"},
    )


def _class_proportions(alpha: float, num_clients: int, rng: np.random.Generator) -> np.ndarray:
    gamma = rng.standard_gamma(alpha, size=num_clients)
    total = gamma.sum()
    if total > 0:
        return gamma / total
    # Con α muy pequeño todos los gamma se anulan; el límite de Dir(α·1) es un vértice uniforme
    proportions = np.zeros(num_clients)
    proportions[rng.integers(num_clients)] = 1.0
    return proportions


def _dirichlet_cells(
    labels: np.ndarray,
    indices: np.ndarray,
    alpha: float,
    num_clients: int,
    rng: np.random.Generator,
) -> List[np.ndarray]:
    cells: List[List[int]] = [[] for _ in range(num_clients)]
    for label in np.unique(labels[indices]):
        class_indices = rng.permutation(indices[labels[indices] == label])
        proportions = _class_proportions(alpha, num_clients, rng)
        counts = rng.multinomial(len(class_indices), proportions)
        for client, part in enumerate(np.split(class_indices, np.cumsum(counts)[:-1])):
            cells[client].extend(int(i) for i in part)
    return [np.array(sorted(cell), dtype=int) for cell in cells]


def partition_dirichlet(
    dataset: Dataset,
    alpha: float,
    num_clients: int,
    seed: int,
    indices: Sequence[int] = None,
    min_client_samples: int = MIN_CLIENT_SAMPLES,
    max_retries: int = MAX_RETRIES,
) -> ClientPartition:
    """
    Partición por sesgo de etiquetas: para cada clase se sortea p_c ~ Dir(α·1)
    y sus muestras se reparten multinomialmente entre los clientes.

    Args:
        dataset: Conjunto etiquetado
        alpha: Concentración (α pequeño = más heterogeneidad)
        num_clients: Número de clientes
        seed: Semilla de la partición
        indices: Índices a repartir (por defecto, el split 'train')
        min_client_samples: Mínimo de muestras por cliente
        max_retries: Reintentos antes de abandonar

    Raises:
        InfeasiblePartitionError: Si ningún sorteo cumple el mínimo por cliente
    """
    if alpha <= 0:
        raise ContractError(f"alpha debe ser positivo, se recibió {alpha}")
    if num_clients < 1:
        raise ContractError("num_clients debe ser al menos 1")
    train = _train_indices(dataset, indices)
    labels = dataset.labels()
    if np.any(labels[train] == NO_LABEL):
        raise ContractError("la partición Dirichlet necesita todas las muestras etiquetadas")

    rng = stream(seed, STREAM_PARTITION)
    width = len(str(max(num_clients - 1, 0)))
    sizes: List[int] = []
    for attempt in range(max_retries):
        cells = _dirichlet_cells(labels, train, alpha, num_clients, rng)
        sizes = [len(c) for c in cells]
        if min(sizes) >= min_client_samples:
            logger.info(f"Partición Dirichlet α={alpha}: {num_clients} clientes tras {attempt + 1} intento(s)")
            return ClientPartition(
                cells={f"client_{j:0{width}d}": cell for j, cell in enumerate(cells)},
                provenance={"mode": "dirichlet", "alpha": alpha, "seed": seed},
            )
    raise InfeasiblePartitionError(
        f"α={alpha}: {max_retries} intentos sin lograr {min_client_samples} muestras por cliente "
        f"(último reparto: {sorted(sizes)})"
    )


def partition_natural_dirichlet(
    dataset: Dataset,
    alpha: float,
    cells_per_client: int,
    seed: int,
    indices: Sequence[int] = None,
    min_client_samples: int = MIN_CLIENT_SAMPLES,
) -> ClientPartition:
    """
    Divide los datos de cada cliente natural en celdas Dirichlet; cada par
    (cliente, celda) con suficientes muestras se convierte en un cliente
    '<cliente>/<celda>'. Las celdas pequeñas se descartan.
    """
    natural = partition_natural(dataset, indices)
    labels = dataset.labels()
    if np.any(labels[natural.all_indices()] == NO_LABEL):
        raise ContractError("la partición Dirichlet necesita todas las muestras etiquetadas")
    rng = stream(seed, STREAM_PARTITION)
    cells: Dict[str, np.ndarray] = {}
    dropped = 0
    for client_id in natural.client_ids():
        for j, cell in enumerate(_dirichlet_cells(labels, natural.cells[client_id], alpha, cells_per_client, rng)):
            if len(cell) >= min_client_samples:
                cells[f"{client_id}/{j}"] = cell
            else:
                dropped += len(cell)
    if dropped:
        logger.info(f"Partición natural×Dirichlet: {dropped} muestras en celdas demasiado pequeñas")
    return ClientPartition(
        cells=cells,
        provenance={"mode": "natural_dirichlet", "alpha": alpha, "cells_per_client": cells_per_client, "seed": seed},
    )


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def heterogeneity_report(partition: ClientPartition, dataset: Dataset, labels: np.ndarray = None) -> dict:
    """
    Cuantifica la heterogeneidad de etiquetas de una partición.

    Returns:
        dict: counts, label_counts y entropy (nats) por cliente, mean_entropy y
        mean_pairwise_tv (distancia de variación total media entre pares de clientes)
    """
    labels = dataset.labels() if labels is None else labels
    num_classes = dataset.manifest.num_classes
    client_ids = partition.client_ids()
    histograms = {}
    for cid in client_ids:
        observed = labels[partition.cells[cid]]
        histograms[cid] = np.bincount(observed[observed != NO_LABEL], minlength=num_classes)
    entropies = {cid: _entropy(h) for cid, h in histograms.items()}
    distributions = {
        cid: (h / h.sum() if h.sum() else np.zeros(num_classes)) for cid, h in histograms.items()
    }
    distances = [
        0.5 * float(np.abs(distributions[a] - distributions[b]).sum())
        for a, b in combinations(client_ids, 2)
    ]
    return {
        "counts": {cid: int(len(partition.cells[cid])) for cid in client_ids},
        "label_counts": {cid: histograms[cid].tolist() for cid in client_ids},
        "entropy": entropies,
        "mean_entropy": float(np.mean(list(entropies.values()))) if entropies else 0.0,
        "mean_pairwise_tv": float(np.mean(distances)) if distances else 0.0,
    }


def save_partition(partition: ClientPartition, dataset: Dataset, path: Union[str, Path]) -> None:
    """Exporta la partición como JSON: procedencia y client_id -> ids de muestra."""
    document = {
        "provenance": partition.provenance,
        "clients": {
            cid: [dataset.samples[i].id for i in partition.cells[cid]]
            for cid in partition.client_ids()
        },
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(document, handle, indent=2)


def load_partition(path: Union[str, Path], dataset: Dataset) -> ClientPartition:
    """Importa una partición exportada por save_partition."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = json.load(handle)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: JSON inválido: {e}", line=e.lineno)
    position = {s.id: i for i, s in enumerate(dataset.samples)}
    cells = {}
    for cid, sample_ids in document.get("clients", {}).items():
        try:
            cells[cid] = np.array(sorted(position[s] for s in sample_ids), dtype=int)
        except KeyError as e:
            raise ParseError(f"{path}: muestra desconocida {e}")
    return ClientPartition(cells=cells, provenance=document.get("provenance", {}))
