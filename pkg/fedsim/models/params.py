from collections import OrderedDict
from typing import Dict, Iterable, Iterator, List, Mapping, Tuple

import numpy as np

from ..utils.exceptions import DimensionError


class ParamSet:
    """
    Colección ordenada de tensores con nombre.

    El orden de inserción es fijo: dos ParamSet construidos a partir de la
    misma configuración de modelo tienen los mismos nombres, formas y orden,
    así que su vista plana es comparable entre clientes y servidor. También se
    usa para gradientes (GradSet), variables de control y momentos.

    Attributes:
        entries (OrderedDict[str, np.ndarray]): Tensores float64 por nombre
    """

    def __init__(self, entries: Mapping[str, np.ndarray] = None):
        self.entries: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, value in (entries or {}).items():
            self.entries[name] = np.asarray(value, dtype=np.float64)

    # Acceso tipo diccionario

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.entries[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def items(self) -> Iterable[Tuple[str, np.ndarray]]:
        return self.entries.items()

    def names(self) -> List[str]:
        return list(self.entries)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: value.shape for name, value in self.entries.items()}

    def size(self) -> int:
        """Número total de escalares."""
        return int(sum(value.size for value in self.entries.values()))

    def subset(self, prefix: str) -> Dict[str, np.ndarray]:
        """
        Devuelve las entradas cuyo nombre empieza por `prefix`, sin el prefijo.

        Los arrays son los mismos objetos (no copias).
        """
        return {
            name[len(prefix):]: value
            for name, value in self.entries.items()
            if name.startswith(prefix)
        }

    # Vista plana

    def flatten(self) -> np.ndarray:
        if not self.entries:
            return np.zeros(0)
        return np.concatenate([value.ravel() for value in self.entries.values()])

    def unflatten(self, vector: np.ndarray) -> "ParamSet":
        """Construye un ParamSet congruente con este a partir de un vector plano."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size(),):
            raise DimensionError(
                f"vector plano de longitud {vector.size}, se esperaban {self.size()}"
            )
        result = ParamSet()
        offset = 0
        for name, value in self.entries.items():
            result[name] = vector[offset:offset + value.size].reshape(value.shape).copy()
            offset += value.size
        return result

    # Aritmética por tensor

    def copy(self) -> "ParamSet":
        return ParamSet({name: value.copy() for name, value in self.entries.items()})

    def zeros_like(self) -> "ParamSet":
        return ParamSet({name: np.zeros_like(value) for name, value in self.entries.items()})

    def check_congruent(self, other: "ParamSet", what: str = "ParamSet") -> None:
        if self.names() != other.names():
            raise DimensionError(f"{what}: los nombres de los tensores no coinciden")
        for name, value in self.entries.items():
            if other[name].shape != value.shape:
                raise DimensionError(
                    f"{what}: forma {other[name].shape} para '{name}', se esperaba {value.shape}"
                )

    def add(self, other: "ParamSet") -> "ParamSet":
        self.check_congruent(other)
        return ParamSet({name: value + other[name] for name, value in self.entries.items()})

    def sub(self, other: "ParamSet") -> "ParamSet":
        self.check_congruent(other)
        return ParamSet({name: value - other[name] for name, value in self.entries.items()})

    def scale(self, factor: float) -> "ParamSet":
        return ParamSet({name: value * factor for name, value in self.entries.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(value)) for value in self.entries.values())

    def allclose(self, other: "ParamSet", atol: float = 0.0) -> bool:
        if self.names() != other.names():
            return False
        return all(
            value.shape == other[name].shape and np.allclose(value, other[name], rtol=0.0, atol=atol)
            for name, value in self.entries.items()
        )

    def __repr__(self):
        return f"<ParamSet(tensors={len(self.entries)}, size={self.size()})>"


# Los gradientes tienen exactamente la misma estructura
GradSet = ParamSet
