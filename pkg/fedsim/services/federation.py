"""
Motor de rondas federadas: muestreo de clientes, entrenamiento local
(fedavg, fedprox, scaffold, fedopt, fedrs), agregación en el servidor y
ejecución de experimentos completos sobre varias semillas o folds.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config.settings import get_workers
from ..models.dataset import Dataset, DatasetView
from ..models.federation import (
    ClientState,
    ClientUpdate,
    ExperimentResult,
    RoundReport,
    RunResult,
    ServerState,
)
from ..models.params import ParamSet
from ..models.partition import ClientPartition
from ..schemas.dataset import SplitProtocol
from ..schemas.experiment import ExperimentConfig, PartitionConfig, PartitionMode, StrategyConfig, StrategyName
from ..utils.exceptions import ClientDivergenceError, ConfigError, ContractError, DivergenceError, EmptyCohortError
from ..utils.rng import STREAM_SAMPLING, client_stream, stream
from .classifier import MultimodalClassifier, build_model
from .corruption import corrupt
from .datastore import load_source, make_batch, split_kfold, with_splits
from .evaluation import evaluate, metric_key, summarize_runs
from .numerics import sgd_step
from .partition import partition_dirichlet, partition_natural, partition_natural_dirichlet

logger = logging.getLogger(__name__)

# Holgura para que rate·n no se redondee hacia arriba por error de coma flotante
_CEIL_SLACK = 1e-9

RoundCallback = Callable[[int, RoundReport], None]


def _map(function, *sets: ParamSet) -> ParamSet:
    first = sets[0]
    for other in sets[1:]:
        first.check_congruent(other)
    return ParamSet({name: function(*(s[name] for s in sets)) for name in first.names()})


# Muestreo

def eligible_clients(partition: ClientPartition, view: DatasetView, model: MultimodalClassifier) -> List[str]:
    """Clientes con al menos una muestra etiquetada y con alguna modalidad del modelo disponible."""
    return [cid for cid in partition.client_ids() if len(model.usable(view, partition.cells[cid])) > 0]


def sample_clients(
    partition: ClientPartition,
    rate: float,
    round_num: int,
    seed: int,
    eligible: Sequence[str] = None,
) -> List[str]:
    """
    Muestreo uniforme sin reemplazo de ⌈rate·|elegibles|⌉ clientes.

    Args:
        partition: Partición de clientes
        rate: Fracción en (0, 1]
        round_num: Ronda actual
        seed: Semilla maestra
        eligible: Clientes elegibles (por defecto, todos los de la partición)

    Returns:
        List[str]: Identificadores elegidos en orden ascendente

    Raises:
        EmptyCohortError: Si no hay clientes elegibles
    """
    if not 0 < rate <= 1:
        raise ContractError(f"rate={rate} fuera de (0, 1]")
    eligible = sorted(partition.client_ids() if eligible is None else eligible)
    if not eligible:
        raise EmptyCohortError("no hay clientes elegibles")
    count = min(len(eligible), max(1, math.ceil(rate * len(eligible) - _CEIL_SLACK)))
    chosen = stream(seed, STREAM_SAMPLING, round_num).choice(len(eligible), size=count, replace=False)
    return sorted(eligible[i] for i in chosen)


# Cliente

def _logit_scale(strategy: StrategyConfig, labels: np.ndarray, num_classes: int) -> Optional[np.ndarray]:
    if strategy.name != StrategyName.FEDRS:
        return None
    present = np.bincount(labels, minlength=num_classes) > 0
    return np.where(present, 1.0, strategy.alpha_rs)


def local_train(
    model: MultimodalClassifier,
    view: DatasetView,
    indices: Sequence[int],
    global_params: ParamSet,
    strategy: StrategyConfig,
    client_state: ClientState,
    rng: np.random.Generator,
    server_control: ParamSet = None,
) -> ClientUpdate:
    """
    Entrenamiento local de un cliente a partir del modelo global.

    Sobre cada minibatch se calcula el gradiente g y se aplica un paso SGD con:
    fedavg/fedopt g; fedprox g + μ(w - w_global); scaffold g - c_i + c;
    fedrs g con los logits de clases ausentes escalados por α_rs.

    Args:
        model: Arquitectura (sus parámetros no se usan)
        view: Vista corrupta del conjunto
        indices: Muestras del cliente
        global_params: Instantánea del modelo global (no se modifica)
        strategy: Estrategia y sus hiperparámetros
        client_state: Estado del cliente (c_i para scaffold)
        rng: Flujo privado (ronda, cliente) para barajado y dropout
        server_control: Variable de control global c (scaffold)

    Returns:
        ClientUpdate: Δ_i, n_i, pérdida media y Δc_i (scaffold)

    Raises:
        ClientDivergenceError: Si la pérdida o algún gradiente deja de ser finito
    """
    cid = client_state.client_id
    train = model.usable(view, indices)
    if train.size == 0:
        raise ContractError(f"cliente '{cid}' sin muestras utilizables")
    labels = view.labels[train]
    scale = _logit_scale(strategy, labels, view.manifest.num_classes)
    scaffold = strategy.name == StrategyName.SCAFFOLD
    if scaffold:
        local_control = client_state.control if client_state.control is not None else global_params.zeros_like()
        global_control = server_control if server_control is not None else global_params.zeros_like()
        correction = global_control.sub(local_control)

    params = global_params.copy()
    steps, loss_sum = 0, 0.0
    for _ in range(strategy.local_epochs):
        order = rng.permutation(train)
        for start in range(0, len(order), strategy.batch_size):
            chunk = order[start:start + strategy.batch_size]
            batch = make_batch(view, chunk, require_labels=True)
            loss, _, grads = model.loss_and_grad(batch, rng=rng, logit_scale=scale, params=params, train=True)
            if not np.isfinite(loss):
                raise ClientDivergenceError(f"cliente '{cid}': pérdida no finita", client_id=cid)
            if strategy.name == StrategyName.FEDPROX and strategy.mu > 0:
                grads = grads.add(params.sub(global_params).scale(strategy.mu))
            elif scaffold:
                grads = grads.add(correction)
            try:
                params = sgd_step(params, grads, strategy.lr)
            except DivergenceError as e:
                raise ClientDivergenceError(f"cliente '{cid}': {e}", client_id=cid)
            steps += 1
            loss_sum += loss * len(chunk)

    control_delta = None
    if scaffold:
        # Opción II: c_i+ = c_i - c + (w_global - w_local) / (K·η)
        new_control = local_control.sub(global_control).add(
            global_params.sub(params).scale(1.0 / (steps * strategy.lr)))
        control_delta = new_control.sub(local_control)
    return ClientUpdate(
        client_id=cid,
        delta=params.sub(global_params),
        num_samples=int(train.size),
        train_loss=loss_sum / (train.size * strategy.local_epochs),
        control_delta=control_delta,
    )


# Servidor

def weighted_mean_delta(updates: Sequence[ClientUpdate]) -> ParamSet:
    """
    Δ̄ = Σ n_i Δ_i / Σ n_i, acumulado en orden ascendente de client_id como
    media incremental (exacta si todas las Δ_i coinciden).
    """
    ordered = sorted(updates, key=lambda u: u.client_id)
    mean = ordered[0].delta.copy()
    total = ordered[0].num_samples
    for update in ordered[1:]:
        mean.check_congruent(update.delta, f"Δ de '{update.client_id}'")
        total += update.num_samples
        mean = mean.add(update.delta.sub(mean).scale(update.num_samples / total))
    return mean


def _server_step(server: ServerState, mean_delta: ParamSet, strategy: StrategyConfig):
    pseudo_grad = mean_delta.scale(-1.0)
    step = server.step + 1
    if strategy.server_optimizer == "momentum":
        previous = server.moments.get("m", pseudo_grad.zeros_like())
        m = _map(lambda prev, g: strategy.beta1 * prev + g, previous, pseudo_grad)
        params = _map(lambda w, mt: w - strategy.server_lr * mt, server.params, m)
        return params, {"m": m}, step

    m = _map(lambda prev, g: strategy.beta1 * prev + (1.0 - strategy.beta1) * g,
             server.moments.get("m", pseudo_grad.zeros_like()), pseudo_grad)
    v = _map(lambda prev, g: strategy.beta2 * prev + (1.0 - strategy.beta2) * g * g,
             server.moments.get("v", pseudo_grad.zeros_like()), pseudo_grad)
    m_correction = 1.0 - strategy.beta1 ** step
    v_correction = 1.0 - strategy.beta2 ** step
    params = _map(
        lambda w, mt, vt: w - strategy.server_lr * (mt / m_correction) / (np.sqrt(vt / v_correction) + strategy.eps),
        server.params, m, v,
    )
    return params, {"m": m, "v": v}, step


def aggregate(
    updates: Sequence[ClientUpdate],
    strategy: StrategyConfig,
    server: ServerState,
    num_clients: int = None,
) -> ServerState:
    """
    Agrega las actualizaciones de una ronda y devuelve el nuevo estado del servidor.

    fedavg/fedprox/fedrs/scaffold: w ← w + Δ̄. fedopt: -Δ̄ es el
    pseudo-gradiente del optimizador de servidor (momentum o Adam).
    scaffold además: c ← c + (|S|/N)·media(Δc_i).

    Raises:
        EmptyCohortError: Si no hay actualizaciones
    """
    if not updates:
        raise EmptyCohortError("no hay actualizaciones que agregar")
    mean_delta = weighted_mean_delta(updates)
    server.params.check_congruent(mean_delta, "Δ̄")

    moments, step = server.moments, server.step
    if strategy.name == StrategyName.FEDOPT:
        params, moments, step = _server_step(server, mean_delta, strategy)
    else:
        params = server.params.add(mean_delta)
    if not params.is_finite():
        raise DivergenceError(f"ronda {server.round + 1}: el modelo global dejó de ser finito")

    control = server.control
    if strategy.name == StrategyName.SCAFFOLD:
        ordered = sorted(updates, key=lambda u: u.client_id)
        control_sum = ordered[0].control_delta.copy()
        for update in ordered[1:]:
            control_sum = control_sum.add(update.control_delta)
        # (|S|/N)·media(Δc_i) = ΣΔc_i / N
        total = num_clients or len(updates)
        base = control if control is not None else params.zeros_like()
        control = base.add(control_sum.scale(1.0 / total))

    return ServerState(params=params, round=server.round + 1, moments=moments, control=control, step=step)


# Rondas

def run_round(
    model: MultimodalClassifier,
    server: ServerState,
    client_states: Dict[str, ClientState],
    partition: ClientPartition,
    view: DatasetView,
    config: ExperimentConfig,
    seed: int,
    test_indices: Sequence[int],
) -> Tuple[ServerState, RoundReport]:
    """
    Una ronda: muestreo → entrenamiento local (en paralelo si FEDSIM_WORKERS > 1)
    → agregación → evaluación en test.

    El resultado no depende del número de hilos: cada cliente usa su propio flujo
    (semilla, ronda, índice de cliente) y la agregación se hace en orden de client_id.
    """
    strategy = config.strategy
    round_num = server.round + 1
    client_index = {cid: i for i, cid in enumerate(partition.client_ids())}
    cohort = sample_clients(partition, config.sample_rate, round_num, seed,
                            eligible_clients(partition, view, model))
    snapshot = server.params

    def train(cid: str) -> ClientUpdate:
        return local_train(model, view, partition.cells[cid], snapshot, strategy, client_states[cid],
                           client_stream(seed, round_num, client_index[cid]), server.control)

    outcomes: Dict[str, object] = {}
    workers = min(get_workers(), len(cohort))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {cid: pool.submit(train, cid) for cid in cohort}
            for cid in cohort:
                try:
                    outcomes[cid] = futures[cid].result()
                except ClientDivergenceError as e:
                    outcomes[cid] = e
    else:
        for cid in cohort:
            try:
                outcomes[cid] = train(cid)
            except ClientDivergenceError as e:
                outcomes[cid] = e

    updates = [o for o in outcomes.values() if isinstance(o, ClientUpdate)]
    excluded = [cid for cid, o in outcomes.items() if isinstance(o, ClientDivergenceError)]
    for cid in excluded:
        logger.warning(f"Ronda {round_num}: cliente '{cid}' excluido ({outcomes[cid]})")
    if not updates:
        raise EmptyCohortError(f"ronda {round_num}: todos los clientes divergieron")

    new_server = aggregate(updates, strategy, server, num_clients=len(partition))
    if strategy.name == StrategyName.SCAFFOLD:
        for update in updates:
            state = client_states[update.client_id]
            base = state.control if state.control is not None else snapshot.zeros_like()
            state.control = base.add(update.control_delta)

    total = sum(u.num_samples for u in updates)
    train_loss = sum(u.train_loss * u.num_samples for u in sorted(updates, key=lambda u: u.client_id)) / total
    metrics = evaluate(model, view, test_indices, config.eval_batch_size, params=new_server.params)
    report = RoundReport(
        round=round_num,
        strategy=strategy.name.value,
        cohort=sorted(u.client_id for u in updates),
        excluded=excluded,
        train_loss=float(train_loss),
        metrics=metrics,
    )
    logger.info(
        f"Ronda {round_num}: {len(updates)} clientes, pérdida {train_loss:.4f}, "
        f"exactitud test {metrics['accuracy']:.4f}"
    )
    return new_server, report


# Experimentos

def build_partition(dataset: Dataset, config: PartitionConfig, seed: int) -> ClientPartition:
    """Construye la partición de entrenamiento indicada por la configuración."""
    if config.mode == PartitionMode.NATURAL:
        return partition_natural(dataset)
    if config.mode == PartitionMode.DIRICHLET:
        return partition_dirichlet(dataset, config.alpha, config.clients, seed,
                                   min_client_samples=config.min_client_samples,
                                   max_retries=config.max_retries)
    return partition_natural_dirichlet(dataset, config.alpha, config.cells_per_client, seed,
                                       min_client_samples=config.min_client_samples)


def init_client_states(partition: ClientPartition, params: ParamSet,
                       strategy: StrategyConfig) -> Dict[str, ClientState]:
    scaffold = strategy.name == StrategyName.SCAFFOLD
    return {
        cid: ClientState(client_id=cid, control=params.zeros_like() if scaffold else None)
        for cid in partition.client_ids()
    }


def run_single(
    config: ExperimentConfig,
    dataset: Dataset,
    seed: int,
    index: int = 0,
    fold: int = None,
    on_round: RoundCallback = None,
) -> RunResult:
    """
    Una ejecución: partición → corrupción → modelo → ronda 0 (sin entrenar)
    → `config.rounds` rondas federadas.

    `on_round(index, report)` se llama tras cada ronda para volcar el registro
    antes de que un error posterior aborte la ejecución.
    """
    train_indices = dataset.indices("train")
    test_indices = dataset.indices("test")
    if test_indices.size == 0:
        raise ConfigError(f"'{dataset.manifest.name}' no tiene muestras de test")
    partition = build_partition(dataset, config.partition, seed)
    view = corrupt(dataset, config.corruption, seed, corruptible=train_indices, partition=partition)
    model = build_model(dataset.manifest, config.model, seed)
    strategy = config.strategy
    server = ServerState(
        params=model.params,
        control=model.params.zeros_like() if strategy.name == StrategyName.SCAFFOLD else None,
    )
    client_states = init_client_states(partition, server.params, strategy)
    primary = metric_key(dataset.manifest.metric)

    result = RunResult(index=index, seed=seed, fold=fold)

    def record(report: RoundReport) -> None:
        result.rounds.append(report)
        value = report.metrics.get(primary)
        if value is not None and (result.best_value is None or value > result.best_value):
            result.best_round, result.best_value = report.round, value
        if on_round is not None:
            on_round(index, report)

    record(RoundReport(round=0, strategy=strategy.name.value,
                       metrics=evaluate(model, view, test_indices, config.eval_batch_size)))
    for _ in range(config.rounds):
        server, report = run_round(model, server, client_states, partition, view, config, seed, test_indices)
        record(report)
    result.params = server.params
    return result


def experiment_label(config: ExperimentConfig) -> str:
    if config.model.unimodal:
        return f"unimodal:{config.model.unimodal}"
    return config.model.fusion.scheme


def run_experiment(
    config: ExperimentConfig,
    dataset: Dataset = None,
    on_round: RoundCallback = None,
) -> ExperimentResult:
    """
    Ejecuta todas las semillas (protocolo predefinido) o todos los folds
    (validación cruzada por cliente, con la primera semilla) y resume las
    métricas finales.
    """
    dataset = dataset if dataset is not None else load_source(config.dataset)
    manifest = dataset.manifest
    result = ExperimentResult(
        name=config.name,
        dataset=manifest.name,
        strategy=config.strategy.name.value,
        fusion=experiment_label(config),
        metric=metric_key(manifest.metric),
    )
    folds = config.folds or (manifest.folds if manifest.protocol == SplitProtocol.KFOLD else None)
    if folds:
        seed = config.seeds[0]
        for fold, (train, test) in enumerate(split_kfold(dataset, folds, seed)):
            logger.info(f"{config.name}: fold {fold + 1}/{folds}")
            result.runs.append(run_single(config, with_splits(dataset, train, test), seed,
                                          index=fold, fold=fold, on_round=on_round))
    else:
        for index, seed in enumerate(config.seeds):
            logger.info(f"{config.name}: semilla {seed} ({index + 1}/{len(config.seeds)})")
            result.runs.append(run_single(config, dataset, seed, index=index, on_round=on_round))
    result.summary = summarize_runs([run.final for run in result.runs])
    return result
