from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np


@dataclass(eq=False)
class ClientPartition:
    """
    Asignación de muestras de entrenamiento a clientes.

    Attributes:
        cells (dict): client_id -> índices de muestra (ordenados)
        provenance (dict): Origen y parámetros, p. ej. {"mode": "dirichlet", "alpha": 0.1, "seed": 0}
    """
    cells: Dict[str, np.ndarray]
    provenance: Dict[str, object] = field(default_factory=dict)

    def client_ids(self) -> List[str]:
        return sorted(self.cells)

    def sizes(self) -> Dict[str, int]:
        return {cid: int(len(self.cells[cid])) for cid in self.client_ids()}

    def all_indices(self) -> np.ndarray:
        if not self.cells:
            return np.zeros(0, dtype=int)
        return np.sort(np.concatenate([self.cells[cid] for cid in self.client_ids()]))

    def __len__(self) -> int:
        return len(self.cells)

    def __repr__(self):
        return f"<ClientPartition(clients={len(self.cells)}, provenance={self.provenance})>"
