"""
Almacén de datos multimodales: generador sintético, lectura/escritura de
archivos, folds por cliente y construcción de lotes.

Formato en disco (un directorio por conjunto):
    manifest.yaml          name, modalities[{name, dim, max_len, modality_class}],
                           num_classes, protocol, folds, metric
    samples.jsonl          un registro JSON por línea: id, client_id, label,
                           split, modalities {nombre: [[...], ...]}, available
    samples.<mod>.bin      opcional: registros float32 little-endian con
                           cabecera de 16 bytes (b"FSMB", T, D, índice)
"""
import json
import logging
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import ValidationError

from ..models.dataset import NO_LABEL, Batch, Dataset, DatasetView, Sample, validate_sample
from ..schemas.dataset import DatasetManifest, SampleRecord, SyntheticSpec
from ..schemas.experiment import DatasetSource
from ..utils.exceptions import InfeasibleFoldError, LabelError, ParseError, SchemaError
from ..utils.rng import STREAM_FOLDS, STREAM_SYNTHETIC, stream

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.yaml"
SAMPLES_FILE = "samples.jsonl"
SIDECAR_MAGIC = b"FSMB"
SIDECAR_HEADER = struct.Struct("<4sIII")


# Generador sintético

def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """
    Genera un conjunto multimodal condicionado por clase.

    Cada clase recibe un vector medio aleatorio por modalidad con norma
    proporcional a `class_sep`; cada paso temporal de una muestra es la media
    de su clase más ruido gaussiano de escala `noise`. Las etiquetas se
    reparten de forma equilibrada y cada muestra va a 'test' con
    probabilidad `test_fraction`.

    Args:
        spec: Especificación validada

    Returns:
        Dataset: Conjunto determinista dado spec.seed
    """
    rng = stream(spec.seed, STREAM_SYNTHETIC)
    num_classes = spec.num_classes
    means = {
        m.name: spec.class_sep * rng.standard_normal((num_classes, m.dim)) / np.sqrt(m.dim)
        for m in spec.modalities
    }
    low, high = spec.samples_per_client
    sizes = rng.integers(low, high + 1, size=spec.num_clients)
    total = int(sizes.sum())
    labels = rng.permutation(np.arange(total) % num_classes)
    is_test = rng.random(total) < spec.test_fraction

    client_width = len(str(max(spec.num_clients - 1, 0)))
    sample_width = len(str(max(total - 1, 0)))
    samples: List[Sample] = []
    splits: List[str] = []
    index = 0
    for client, size in enumerate(sizes):
        client_id = f"client_{client:0{client_width}d}"
        for _ in range(int(size)):
            label = int(labels[index])
            modalities = {
                m.name: means[m.name][label] + spec.noise * rng.standard_normal((m.length, m.dim))
                for m in spec.modalities
            }
            samples.append(Sample(
                id=f"s{index:0{sample_width}d}",
                client_id=client_id,
                label=label,
                modalities=modalities,
                available={m.name: True for m in spec.modalities},
            ))
            splits.append("test" if is_test[index] else "train")
            index += 1
    logger.info(f"Conjunto sintético '{spec.name}': {total} muestras, {spec.num_clients} clientes")
    return Dataset(manifest=spec.manifest(), samples=tuple(samples), splits=tuple(splits))


# Lectura y escritura

def _render(value: np.ndarray) -> list:
    return [[float(f"{v:.10g}") for v in row] for row in value.tolist()]


def save_dataset(dataset: Dataset, path: Union[str, Path], sidecar: Sequence[str] = ()) -> Path:
    """
    Escribe manifest.yaml y samples.jsonl en el directorio `path`.

    Args:
        dataset: Conjunto a guardar
        path: Directorio de destino (se crea si no existe)
        sidecar: Modalidades que se escriben en binario en lugar de en el JSON

    Returns:
        Path: Directorio escrito
    """
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / MANIFEST_FILE, "w", encoding="utf-8") as handle:
        yaml.safe_dump(dataset.manifest.model_dump(mode="json"), handle, sort_keys=False)

    names = dataset.manifest.modality_names()
    with open(directory / SAMPLES_FILE, "w", encoding="utf-8") as handle:
        for sample, split in zip(dataset.samples, dataset.splits):
            record = {
                "id": sample.id,
                "client_id": sample.client_id,
                "label": sample.label,
                "split": split,
                "modalities": {m: _render(sample.modalities[m]) for m in names if m not in sidecar},
                "available": {m: bool(sample.available[m]) for m in names},
            }
            handle.write(json.dumps(record, separators=(",", ":")) + "\n")
    for modality in sidecar:
        write_sidecar(
            directory / f"samples.{modality}.bin",
            [sample.modalities[modality] for sample in dataset.samples],
        )
    logger.info(f"Conjunto '{dataset.manifest.name}' guardado en {directory}")
    return directory


def write_sidecar(path: Union[str, Path], arrays: Iterable[np.ndarray]) -> None:
    """Escribe registros float32 little-endian con cabecera (magic, T, D, índice)."""
    with open(path, "wb") as handle:
        for index, value in enumerate(arrays):
            steps, dim = value.shape
            handle.write(SIDECAR_HEADER.pack(SIDECAR_MAGIC, steps, dim, index))
            handle.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def read_sidecar(path: Union[str, Path]) -> List[np.ndarray]:
    """Lee todos los registros de un archivo binario auxiliar."""
    data = Path(path).read_bytes()
    arrays = []
    offset = 0
    while offset < len(data):
        if offset + SIDECAR_HEADER.size > len(data):
            raise ParseError(f"{path}: cabecera truncada en el registro {len(arrays)}")
        magic, steps, dim, index = SIDECAR_HEADER.unpack_from(data, offset)
        if magic != SIDECAR_MAGIC or index != len(arrays):
            raise ParseError(f"{path}: cabecera inválida en el registro {len(arrays)}")
        offset += SIDECAR_HEADER.size
        size = steps * dim * 4
        if offset + size > len(data):
            raise ParseError(f"{path}: registro {index} truncado")
        arrays.append(np.frombuffer(data, dtype="<f4", count=steps * dim, offset=offset)
                      .reshape(steps, dim).astype(np.float64))
        offset += size
    return arrays


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = yaml.safe_load(handle)
        return DatasetManifest.model_validate(raw)
    except yaml.YAMLError as e:
        raise ParseError(f"{path}: YAML inválido: {e}")
    except ValidationError as e:
        raise SchemaError(f"{path}: manifiesto inválido: {e}")


def load_dataset(path: Union[str, Path]) -> Dataset:
    """
    Lee un conjunto guardado con save_dataset.

    Args:
        path: Directorio del conjunto o ruta a su manifest.yaml

    Returns:
        Dataset: Conjunto validado contra el manifiesto

    Raises:
        ParseError: Registro mal formado (indica la línea)
        SchemaError: Dimensiones distintas a las del manifiesto
        LabelError: Etiqueta fuera de rango
    """
    directory = Path(path)
    if directory.is_file():
        directory = directory.parent
    manifest = load_manifest(directory / MANIFEST_FILE)
    names = manifest.modality_names()
    sidecars = {
        m: read_sidecar(directory / f"samples.{m}.bin")
        for m in names
        if (directory / f"samples.{m}.bin").exists()
    }

    samples: List[Sample] = []
    splits: List[Optional[str]] = []
    with open(directory / SAMPLES_FILE, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = SampleRecord.model_validate(json.loads(line))
            except (json.JSONDecodeError, ValidationError) as e:
                raise ParseError(f"registro mal formado: {e}", line=line_number)
            modalities: Dict[str, np.ndarray] = {}
            for spec in manifest.modalities:
                if spec.name in record.modalities:
                    try:
                        value = np.asarray(record.modalities[spec.name], dtype=np.float64)
                    except (TypeError, ValueError) as e:
                        raise ParseError(f"modalidad '{spec.name}' no numérica: {e}", line=line_number)
                    if value.size == 0:
                        value = value.reshape(0, spec.dim)
                elif spec.name in sidecars and len(samples) < len(sidecars[spec.name]):
                    value = sidecars[spec.name][len(samples)]
                else:
                    raise SchemaError(f"línea {line_number}: falta la modalidad '{spec.name}'")
                modalities[spec.name] = value
            available = record.available or {m: modalities[m].shape[0] > 0 for m in names}
            sample = Sample(
                id=record.id,
                client_id=record.client_id,
                label=record.label,
                modalities=modalities,
                available={m: bool(available.get(m, False)) for m in names},
            )
            try:
                validate_sample(sample, manifest)
            except LabelError as e:
                raise LabelError(f"línea {line_number}: {e}")
            except SchemaError as e:
                raise SchemaError(f"línea {line_number}: {e}")
            samples.append(sample)
            splits.append(record.split.value if record.split is not None else None)
    dataset = Dataset(manifest=manifest, samples=tuple(samples), splits=tuple(splits))
    logger.info(f"Conjunto '{manifest.name}' cargado: {len(dataset)} muestras")
    return dataset


def datasets_equal(first: Dataset, second: Dataset, atol: float = 0.0) -> bool:
    """Compara dos conjuntos muestra a muestra (valores con tolerancia absoluta)."""
    if first.manifest != second.manifest or first.splits != second.splits:
        return False
    if len(first) != len(second):
        return False
    for a, b in zip(first.samples, second.samples):
        if (a.id, a.client_id, a.label, a.available) != (b.id, b.client_id, b.label, b.available):
            return False
        for name, value in a.modalities.items():
            other = b.modalities[name]
            if value.shape != other.shape or not np.allclose(value, other, rtol=0.0, atol=atol):
                return False
    return True


def load_source(source: DatasetSource) -> Dataset:
    """Conjunto de un experimento: generado a partir de la especificación sintética o leído de disco."""
    if source.synthetic is not None:
        return generate_synthetic(source.synthetic)
    return load_dataset(source.path)


# Folds

def split_kfold(dataset: Dataset, k: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Folds de validación cruzada por cliente.

    Todas las muestras de un cliente caen en el mismo fold; las muestras sin
    client_id se tratan como unidades individuales.

    Returns:
        List[Tuple[np.ndarray, np.ndarray]]: (índices de entrenamiento, índices de test) por fold

    Raises:
        InfeasibleFoldError: Si hay menos unidades (clientes) que folds
    """
    if k < 2:
        raise InfeasibleFoldError(f"k={k}: se necesitan al menos 2 folds")
    units = [s.client_id if s.client_id is not None else f"\0{s.id}" for s in dataset.samples]
    unique_units = sorted(set(units))
    if len(unique_units) < k:
        raise InfeasibleFoldError(f"{len(unique_units)} clientes no alcanzan para {k} folds")
    order = stream(seed, STREAM_FOLDS).permutation(len(unique_units))
    unit_fold = {}
    for fold, members in enumerate(np.array_split(order, k)):
        for member in members:
            unit_fold[unique_units[member]] = fold
    fold_of = np.array([unit_fold[u] for u in units])
    all_indices = np.arange(len(dataset))
    return [(all_indices[fold_of != fold], all_indices[fold_of == fold]) for fold in range(k)]


def with_splits(dataset: Dataset, train: Sequence[int], test: Sequence[int]) -> Dataset:
    """Copia ligera del conjunto con etiquetas de partición reasignadas (las muestras se comparten)."""
    tags: List[Optional[str]] = [None] * len(dataset)
    for i in train:
        tags[int(i)] = "train"
    for i in test:
        tags[int(i)] = "test"
    return Dataset(manifest=dataset.manifest, samples=dataset.samples, splits=tuple(tags))


# Lotes

def make_batch(view: DatasetView, indices: Sequence[int], require_labels: bool = False) -> Batch:
    """
    Construye un lote con relleno de ceros.

    Las modalidades no disponibles en la vista se rellenan con ceros y longitud 0.
    """
    indices = np.asarray(indices, dtype=int)
    samples = [view.dataset.samples[i] for i in indices]
    inputs, lengths, available = {}, {}, {}
    for m, spec in enumerate(view.manifest.modalities):
        flags = view.available[indices, m].copy()
        lens = np.array([s.modalities[spec.name].shape[0] if flag else 0
                         for s, flag in zip(samples, flags)], dtype=int)
        steps = max(int(lens.max()) if lens.size else 0, 1)
        tensor = np.zeros((len(samples), steps, spec.dim))
        for row, (sample, length) in enumerate(zip(samples, lens)):
            if length:
                tensor[row, :length] = sample.modalities[spec.name]
        inputs[spec.name] = tensor
        lengths[spec.name] = lens
        available[spec.name] = flags
    labels = view.labels[indices].copy()
    if require_labels and np.any(labels == NO_LABEL):
        raise LabelError("el lote contiene muestras sin etiqueta")
    return Batch(inputs=inputs, lengths=lengths, available=available, labels=labels)
