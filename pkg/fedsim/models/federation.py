from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple


from ..utils.exceptions import ContractError
from .params import ParamSet


@dataclass(eq=False)
class ServerState:
    """
    Estado del servidor entre rondas.

    Attributes:
        params (ParamSet): Modelo global
        round (int): Rondas ya agregadas
        moments (dict): Momentos del optimizador de servidor ('m', 'v')
        control (ParamSet): Variable de control global (scaffold), ceros al inicio
        step (int): Pasos del optimizador de servidor (corrección de sesgo)
    """
    params: ParamSet
    round: int = 0
    moments: Dict[str, ParamSet] = field(default_factory=dict)
    control: Optional[ParamSet] = None
    step: int = 0

    def __repr__(self):
        return f"<ServerState(round={self.round}, parameters={self.params.size()})>"


@dataclass(eq=False)
class ClientState:
    """
    Estado persistente de un cliente.

    Attributes:
        client_id (str): Identificador del cliente
        control (ParamSet): Variable de control local c_i (scaffold)
    """
    client_id: str
    control: Optional[ParamSet] = None

    def __repr__(self):
        return f"<ClientState(client_id='{self.client_id}')>"


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    """
    Lo único que un cliente envía al servidor: tensores con la forma de los
    parámetros, un conteo y escalares.

    Attributes:
        client_id (str): Identificador del cliente
        delta (ParamSet): Δ_i = w_i - w_global
        num_samples (int): Muestras etiquetadas usadas (n_i)
        train_loss (float): Pérdida media de entrenamiento local
        control_delta (ParamSet): Δc_i (scaffold)
    """
    client_id: str
    delta: ParamSet
    num_samples: int
    train_loss: float
    control_delta: Optional[ParamSet] = None

    def __post_init__(self):
        if self.num_samples < 1:
            raise ContractError(f"cliente '{self.client_id}': num_samples debe ser al menos 1")


@dataclass
class RoundReport:
    """
    Resumen de una ronda; se vuelca como una línea del registro de rondas.

    Attributes:
        round (int): Número de ronda (0 = modelo sin entrenar)
        strategy (str): Estrategia federada
        cohort (list): Clientes que aportaron actualización, en orden
        excluded (list): Clientes excluidos por divergencia
        train_loss (float): Media ponderada de la pérdida local (None en la ronda 0)
        metrics (dict): Métricas de test
    """
    round: int
    strategy: str
    cohort: List[str] = field(default_factory=list)
    excluded: List[str] = field(default_factory=list)
    train_loss: Optional[float] = None
    metrics: Dict[str, float] = field(default_factory=dict)

    def to_record(self, run: int = None) -> dict:
        record = {
            "round": self.round,
            "strategy": self.strategy,
            "cohort_size": len(self.cohort),
            "cohort": list(self.cohort),
            "excluded": list(self.excluded),
            "train_loss": self.train_loss,
            "metrics": dict(self.metrics),
        }
        if run is not None:
            record = {"run": run, **record}
        return record


@dataclass
class RunResult:
    """
    Una ejecución completa (una semilla o un fold).

    Attributes:
        index (int): Posición de la ejecución
        seed (int): Semilla maestra
        fold (int): Fold de test (None con protocolo predefinido)
        rounds (list): RoundReport por ronda, empezando en la ronda 0
        best_round (int): Ronda con la mejor métrica principal
        best_value (float): Valor de esa métrica
        params (ParamSet): Modelo global final
    """
    index: int
    seed: int
    fold: Optional[int] = None
    rounds: List[RoundReport] = field(default_factory=list)
    best_round: int = 0
    best_value: Optional[float] = None
    params: Optional[ParamSet] = field(default=None, repr=False)

    @property
    def final(self) -> Dict[str, float]:
        return dict(self.rounds[-1].metrics) if self.rounds else {}

    def curve(self, metric: str) -> List[float]:
        return [report.metrics.get(metric) for report in self.rounds]


@dataclass
class ExperimentResult:
    """
    Resultado de un experimento: todas las ejecuciones y su resumen.

    Attributes:
        name (str): Nombre del experimento
        dataset (str): Nombre del conjunto de datos
        strategy (str): Estrategia federada
        fusion (str): Esquema de fusión (o 'unimodal:<modalidad>')
        metric (str): Métrica principal
        runs (list): RunResult por semilla o fold
        summary (dict): métrica -> (media, desviación estándar muestral)
    """
    name: str
    dataset: str
    strategy: str
    fusion: str
    metric: str
    runs: List[RunResult] = field(default_factory=list)
    summary: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def to_summary(self) -> dict:
        return {
            "name": self.name,
            "dataset": self.dataset,
            "strategy": self.strategy,
            "fusion": self.fusion,
            "metric": self.metric,
            "runs": len(self.runs),
            "final": [
                {"seed": r.seed, "fold": r.fold, "metrics": r.final,
                 "best_round": r.best_round, "best_value": r.best_value}
                for r in self.runs
            ],
            "summary": {name: {"mean": mean, "std": std} for name, (mean, std) in self.summary.items()},
        }

    def __repr__(self):
        return f"<ExperimentResult(name='{self.name}', strategy='{self.strategy}', runs={len(self.runs)})>"
