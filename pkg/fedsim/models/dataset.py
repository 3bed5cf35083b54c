from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..schemas.dataset import DatasetManifest, SplitProtocol
from ..utils.exceptions import LabelError, SchemaError

NO_LABEL = -1


@dataclass(frozen=True, eq=False)
class Sample:
    """
    Instancia multimodal.

    Attributes:
        id (str): Identificador único de la muestra
        client_id (str): Cliente natural (hablante, participante) o None
        label (int): Clase en [0, C) o None si no está etiquetada
        modalities (dict): Secuencia [T_m, D_m] por modalidad
        available (dict): Disponibilidad por modalidad
    """
    id: str
    client_id: Optional[str]
    label: Optional[int]
    modalities: Dict[str, np.ndarray]
    available: Dict[str, bool]

    def __post_init__(self):
        for value in self.modalities.values():
            value.setflags(write=False)

    def __repr__(self):
        return f"<Sample(id='{self.id}', client_id='{self.client_id}', label={self.label})>"


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Colección inmutable de muestras con su manifiesto.

    Attributes:
        manifest (DatasetManifest): Modalidades, clases, protocolo y métrica
        samples (tuple): Muestras en orden fijo
        splits (tuple): Etiqueta de partición por muestra ('train'/'val'/'test') o None
    """
    manifest: DatasetManifest
    samples: Tuple[Sample, ...]
    splits: Tuple[Optional[str], ...] = field(default=())

    def __post_init__(self):
        if not self.splits:
            object.__setattr__(self, "splits", tuple(None for _ in self.samples))
        if len(self.splits) != len(self.samples):
            raise SchemaError("splits y samples tienen longitudes distintas")
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise SchemaError("los identificadores de muestra no son únicos")
        if self.manifest.protocol == SplitProtocol.PREDEFINED and any(t is None for t in self.splits):
            raise SchemaError("el protocolo 'predefined' exige split en todas las muestras")
        for sample in self.samples:
            validate_sample(sample, self.manifest)

    def __len__(self) -> int:
        return len(self.samples)

    def indices(self, split: Optional[str] = None) -> np.ndarray:
        """Índices de las muestras con la etiqueta de partición dada (todas si es None)."""
        if split is None:
            return np.arange(len(self.samples))
        return np.array([i for i, tag in enumerate(self.splits) if tag == split], dtype=int)

    def labels(self) -> np.ndarray:
        return np.array([NO_LABEL if s.label is None else s.label for s in self.samples], dtype=int)

    def client_ids(self) -> List[Optional[str]]:
        return [s.client_id for s in self.samples]

    def availability(self) -> np.ndarray:
        names = self.manifest.modality_names()
        return np.array([[s.available[m] for m in names] for s in self.samples], dtype=bool).reshape(
            len(self.samples), len(names)
        )

    def __repr__(self):
        return f"<Dataset(name='{self.manifest.name}', samples={len(self.samples)})>"


def validate_sample(sample: Sample, manifest: DatasetManifest) -> None:
    """Comprueba una muestra contra el manifiesto."""
    for spec in manifest.modalities:
        if spec.name not in sample.modalities or spec.name not in sample.available:
            raise SchemaError(f"muestra '{sample.id}': falta la modalidad '{spec.name}'")
        value = sample.modalities[spec.name]
        if value.ndim != 2 or value.shape[1] != spec.dim:
            raise SchemaError(
                f"muestra '{sample.id}': modalidad '{spec.name}' con forma {value.shape}, dimensión esperada {spec.dim}"
            )
        if value.shape[0] > spec.max_len:
            raise SchemaError(
                f"muestra '{sample.id}': modalidad '{spec.name}' supera max_len={spec.max_len}"
            )
        if sample.available[spec.name] and value.shape[0] < 1:
            raise SchemaError(f"muestra '{sample.id}': modalidad '{spec.name}' disponible sin pasos")
    extra = set(sample.modalities) - set(manifest.modality_names())
    if extra:
        raise SchemaError(f"muestra '{sample.id}': modalidades desconocidas {sorted(extra)}")
    if sample.label is not None and not 0 <= sample.label < manifest.num_classes:
        raise LabelError(
            f"muestra '{sample.id}': etiqueta {sample.label} fuera de [0, {manifest.num_classes})"
        )


@dataclass(frozen=True, eq=False)
class DatasetView:
    """
    Capa de corrupción sobre un Dataset: nunca modifica las muestras originales.

    Attributes:
        dataset (Dataset): Datos originales
        available (np.ndarray): Disponibilidad efectiva [N, M]
        labels (np.ndarray): Etiqueta observada por muestra (NO_LABEL = sin etiqueta)
        corruptible (np.ndarray): Índices sobre los que actúan los emuladores (entrenamiento)
    """
    dataset: Dataset
    available: np.ndarray
    labels: np.ndarray
    corruptible: np.ndarray

    @classmethod
    def of(cls, dataset: Dataset, corruptible: Sequence[int] = None) -> "DatasetView":
        if corruptible is None:
            corruptible = dataset.indices("train")
        return cls(
            dataset=dataset,
            available=dataset.availability(),
            labels=dataset.labels(),
            corruptible=np.asarray(corruptible, dtype=int),
        )

    def replace(self, available: np.ndarray = None, labels: np.ndarray = None) -> "DatasetView":
        return DatasetView(
            dataset=self.dataset,
            available=self.available if available is None else available,
            labels=self.labels if labels is None else labels,
            corruptible=self.corruptible,
        )

    @property
    def manifest(self) -> DatasetManifest:
        return self.dataset.manifest

    def trainable(self, indices: Sequence[int], modalities: Sequence[str] = None) -> np.ndarray:
        """
        Índices con etiqueta observada y al menos una modalidad disponible
        (entre `modalities`, si se indican).
        """
        indices = np.asarray(indices, dtype=int)
        if indices.size == 0:
            return indices
        available = self.available[indices]
        if modalities is not None:
            names = self.manifest.modality_names()
            available = available[:, [names.index(m) for m in modalities]]
        keep = (self.labels[indices] != NO_LABEL) & available.any(axis=1)
        return indices[keep]


@dataclass
class Batch:
    """
    Lote con relleno de ceros al final de cada secuencia.

    Attributes:
        inputs (dict): Tensor [B, T_max, D_m] por modalidad (ceros si no está disponible)
        lengths (dict): Longitud válida [B] por modalidad
        available (dict): Disponibilidad [B] por modalidad
        labels (np.ndarray): Etiquetas [B] o None
    """
    inputs: Dict[str, np.ndarray]
    lengths: Dict[str, np.ndarray]
    available: Dict[str, np.ndarray]
    labels: Optional[np.ndarray]

    def __len__(self) -> int:
        return len(next(iter(self.lengths.values())))
