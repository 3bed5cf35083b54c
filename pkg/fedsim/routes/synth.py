import argparse
import logging
from pathlib import Path
from typing import Sequence

from ..config.experiment import read_yaml
from ..schemas.dataset import SyntheticSpec
from ..services.datastore import generate_synthetic, save_dataset
from ..utils.exceptions import ConfigError

logger = logging.getLogger(__name__)


def cmd_synth(spec_path: str, out: str, sidecar: Sequence[str] = ()) -> Path:
    """
    Genera un conjunto sintético a partir de un archivo de especificación YAML.

    Args:
        spec_path: Especificación (SyntheticSpec, con cabecera 'version' opcional)
        out: Directorio de salida
        sidecar: Modalidades a escribir en el formato binario

    Returns:
        Path: Directorio escrito
    """
    document = read_yaml(spec_path)
    version = document.pop("version", 1)
    if version != 1:
        raise ConfigError(f"{spec_path}: versión {version!r} no soportada")
    spec = SyntheticSpec.model_validate(document)
    unknown = set(sidecar) - {m.name for m in spec.modalities}
    if unknown:
        raise ConfigError(f"modalidades desconocidas para el formato binario: {sorted(unknown)}")
    dataset = generate_synthetic(spec)
    return save_dataset(dataset, out, sidecar=sidecar)


def _handle(args: argparse.Namespace) -> int:
    cmd_synth(args.spec, args.out, args.sidecar)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth", help="genera un conjunto sintético separable")
    parser.add_argument("spec", help="archivo YAML con la especificación sintética")
    parser.add_argument("--out", required=True, help="directorio de salida")
    parser.add_argument("--sidecar", nargs="*", default=[], help="modalidades en formato binario")
    parser.set_defaults(handler=_handle)
