"""
Carga de configuraciones de experimento (YAML versionado) y aplicación de
los flags de línea de comandos sobre ellas antes de validar.
"""
import argparse
import copy
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Union

import yaml

from ..schemas.experiment import CONFIG_VERSION, ExperimentConfig
from ..utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

# flag -> (clave con puntos, tipo)
OVERRIDE_FLAGS = {
    "alpha": ("partition.alpha", float),
    "clients": ("partition.clients", int),
    "missing_modality": ("corruption.missing_modality", float),
    "missing_label": ("corruption.missing_label", float),
    "label_error": ("corruption.label_error", float),
    "sparsity": ("corruption.sparsity", float),
    "strategy": ("strategy.name", str),
    "fusion": ("model.fusion.scheme", str),
    "unimodal": ("model.unimodal", str),
    "rounds": ("rounds", int),
    "sample_rate": ("sample_rate", float),
    "lr": ("strategy.lr", float),
    "server_lr": ("strategy.server_lr", float),
    "mu": ("strategy.mu", float),
    "seed": ("seeds", int),
    "folds": ("folds", int),
    "out": ("output_dir", str),
}


def read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Lee un documento YAML que debe ser un mapeo.

    Raises:
        ConfigError: Si el archivo no existe, no es YAML válido o no es un mapeo
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = yaml.safe_load(handle)
    except FileNotFoundError:
        raise ConfigError(f"no existe el archivo de configuración '{path}'")
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" (línea {mark.line + 1})" if mark is not None else ""
        raise ConfigError(f"{path}: YAML inválido{where}")
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: se esperaba un mapeo en la raíz")
    return document


def set_dotted(document: Dict[str, Any], key: str, value: Any) -> None:
    node = document
    parts = key.split(".")
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        elif not isinstance(child, dict):
            raise ConfigError(f"'{part}' no es una sección en la clave '{key}'")
        node = child
    node[parts[-1]] = value


def apply_overrides(document: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Copia del documento con las claves con puntos sustituidas."""
    document = copy.deepcopy(dict(document))
    for key, value in overrides.items():
        set_dotted(document, key, value)
    return document


def load_config(path: Union[str, Path], overrides: Mapping[str, Any] = None) -> ExperimentConfig:
    """
    Carga y valida una configuración de experimento.

    Las rutas relativas del conjunto de datos se resuelven respecto al
    directorio del archivo si allí existen.

    Raises:
        ConfigError: Cabecera de versión ausente o desconocida, YAML inválido
        pydantic.ValidationError: Claves desconocidas o valores fuera de rango
    """
    path = Path(path)
    document = read_yaml(path)
    if "version" not in document:
        raise ConfigError(f"{path}: falta la cabecera 'version'")
    if document["version"] != CONFIG_VERSION:
        raise ConfigError(f"{path}: versión {document['version']!r} no soportada (se espera {CONFIG_VERSION})")
    document = apply_overrides(document, overrides or {})

    dataset = document.get("dataset")
    if isinstance(dataset, dict) and isinstance(dataset.get("path"), str):
        candidate = path.parent / dataset["path"]
        if not Path(dataset["path"]).is_absolute() and candidate.exists():
            dataset["path"] = str(candidate)
    return ExperimentConfig.model_validate(document)


def dump_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(config.model_dump(mode="json"), handle, sort_keys=False)


def add_override_arguments(parser: argparse.ArgumentParser) -> None:
    """Registra los flags que sobrescriben claves de la configuración."""
    group = parser.add_argument_group("sobrescrituras de configuración")
    for flag, (key, kind) in OVERRIDE_FLAGS.items():
        group.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=kind, default=None,
                           help=f"sobrescribe '{key}'")


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """
    Traduce los flags presentes a claves con puntos. --alpha además fija
    partition.mode = dirichlet y --seed sustituye la lista de semillas.
    """
    overrides: Dict[str, Any] = {}
    for flag, (key, _) in OVERRIDE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        overrides[key] = [value] if flag == "seed" else value
    if "partition.alpha" in overrides:
        overrides["partition.mode"] = "dirichlet"
    return overrides
