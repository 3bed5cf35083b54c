from dataclasses import dataclass, field
from typing import Dict


@dataclass(frozen=True)
class MetricResult:
    """
    Valor de una métrica sobre un conjunto de test.

    Attributes:
        name (str): 'uar', 'accuracy', 'f1' o 'auc'
        value (float): Valor en [0, 1]
        support (dict): Muestras por clase verdadera (suma = tamaño del test)
    """
    name: str
    value: float
    support: Dict[int, int] = field(default_factory=dict)

    def __repr__(self):
        return f"<MetricResult(name='{self.name}', value={self.value:.4f}, n={sum(self.support.values())})>"
