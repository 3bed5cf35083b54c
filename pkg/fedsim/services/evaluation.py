"""
Métricas de evaluación (UAR, exactitud top-1, F1 macro, AUC), evaluación del
modelo sobre el split de test y resumen de varias ejecuciones.
"""
import logging
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
from sklearn.metrics import accuracy_score, f1_score, recall_score, roc_auc_score

from ..models.dataset import DatasetView
from ..models.evaluation import MetricResult
from ..models.params import ParamSet
from ..schemas.dataset import Metric
from ..utils.exceptions import ContractError, DimensionError, UndefinedMetricError
from .datastore import make_batch
from .numerics import softmax, softmax_cross_entropy

logger = logging.getLogger(__name__)

METRIC_KEYS = {
    Metric.UAR: "uar",
    Metric.ACC: "accuracy",
    Metric.F1: "f1",
    Metric.AUC: "auc",
}


def metric_key(metric: Metric) -> str:
    """Clave en los registros de la métrica principal de un manifiesto."""
    return METRIC_KEYS[Metric(metric)]


def _check_pair(predictions, labels) -> Tuple[np.ndarray, np.ndarray]:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ContractError("no se puede calcular una métrica sin muestras")
    if predictions.shape != labels.shape:
        raise DimensionError(f"predicciones {predictions.shape} y etiquetas {labels.shape} no coinciden")
    return predictions, labels


def uar(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """Media no ponderada del recall de las clases presentes en las etiquetas."""
    predictions, labels = _check_pair(predictions, labels)
    return float(recall_score(labels, predictions, labels=np.unique(labels), average="macro", zero_division=0))


def top1_accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    predictions, labels = _check_pair(predictions, labels)
    return float(accuracy_score(labels, predictions))


def macro_f1(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """
    F1 macro sobre las clases presentes en las etiquetas; una clase presente
    que nunca se predice aporta 0.
    """
    predictions, labels = _check_pair(predictions, labels)
    return float(f1_score(labels, predictions, labels=np.unique(labels), average="macro", zero_division=0))


def auc_binary(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Área bajo la curva ROC (estadístico de Mann-Whitney, empates = 1/2).

    Raises:
        UndefinedMetricError: Si las etiquetas tienen una sola clase
    """
    scores, labels = _check_pair(scores, labels)
    present = np.unique(labels)
    if not set(present.tolist()) <= {0, 1}:
        raise ContractError("auc_binary espera etiquetas 0/1")
    if present.size < 2:
        raise UndefinedMetricError("AUC no definida: las etiquetas solo contienen una clase")
    return float(roc_auc_score(labels, scores))


def metric_result(name: str, predictions: Sequence[int], labels: Sequence[int]) -> MetricResult:
    """Calcula una métrica de clasificación por nombre junto con el soporte por clase."""
    functions = {"uar": uar, "accuracy": top1_accuracy, "f1": macro_f1}
    if name not in functions:
        raise ContractError(f"métrica desconocida '{name}'")
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    return MetricResult(
        name=name,
        value=functions[name](predictions, labels),
        support={int(c): int(n) for c, n in zip(classes, counts)},
    )


def evaluate(
    model,
    view: DatasetView,
    indices: Sequence[int],
    batch_size: int = 64,
    params: ParamSet = None,
) -> Dict[str, float]:
    """
    Evalúa el modelo sobre las muestras indicadas (normalmente el split de test).

    Se descartan, con aviso, las muestras sin etiqueta o sin ninguna modalidad.
    Siempre se calculan loss, accuracy, uar y f1; con dos clases también auc
    cuando está definida.

    Returns:
        Dict[str, float]: Métricas por nombre
    """
    requested = np.asarray(indices, dtype=int)
    indices = model.usable(view, requested)
    if len(indices) < len(requested):
        logger.warning(f"Evaluación: {len(requested) - len(indices)} muestras sin etiqueta o sin modalidades descartadas")
    if indices.size == 0:
        raise ContractError("no hay muestras de test evaluables")

    logits = np.concatenate([
        model.predict_logits(make_batch(view, indices[start:start + batch_size]), params=params)
        for start in range(0, len(indices), batch_size)
    ])
    labels = view.labels[indices]
    predictions = logits.argmax(axis=1)
    loss, _ = softmax_cross_entropy(logits, labels)
    results = [metric_result(name, predictions, labels) for name in ("accuracy", "uar", "f1")]
    logger.debug(f"Evaluación: soporte por clase {results[0].support}")
    metrics = {"loss": float(loss), **{result.name: result.value for result in results}}
    if view.manifest.num_classes == 2:
        try:
            metrics["auc"] = auc_binary(softmax(logits)[:, 1], labels)
        except UndefinedMetricError as e:
            logger.warning(str(e))
    return metrics


def summarize_runs(finals: Sequence[Mapping[str, float]]) -> Dict[str, Tuple[float, float]]:
    """
    Media y desviación estándar muestral (n - 1; 0 con una sola ejecución)
    de cada métrica presente en todas las ejecuciones.
    """
    if not finals:
        return {}
    names: List[str] = [name for name in finals[0] if all(name in f for f in finals)]
    summary = {}
    for name in names:
        values = np.array([f[name] for f in finals], dtype=np.float64)
        std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        summary[name] = (float(values.mean()), std)
    return summary
