"""
Biblioteca numérica mínima: capas diferenciables con gradientes analíticos.

Cada capa tiene una función `*_forward` pura y una `*_backward` que recibe el
gradiente de la salida. Todas aceptan un eje de lote opcional al principio:
las secuencias pueden ir como [T, D] o como [B, T, D].
"""
import logging
from typing import Callable, Dict, Mapping, Optional, Tuple

import numpy as np

from ..models.params import GradSet, ParamSet
from ..utils.exceptions import (
    ContractError,
    DimensionError,
    DivergenceError,
    EmptySequenceError,
    LabelError,
    NumericError,
    SequenceTooShortError,
)

logger = logging.getLogger(__name__)

GRU_PARAM_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_n", "U_n", "b_n")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Forma con tanh: sin overflow para |x| grande
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# Capa densa

def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Calcula y = x·Wᵀ + b sobre las dimensiones iniciales de x.

    Args:
        x: Entrada [..., n_in]
        W: Pesos [n_out, n_in]
        b: Sesgo [n_out]

    Returns:
        np.ndarray: Salida [..., n_out]
    """
    if W.ndim != 2 or b.shape != (W.shape[0],):
        raise DimensionError(f"dense: W {W.shape} y b {b.shape} no son congruentes")
    if x.shape[-1] != W.shape[1]:
        raise DimensionError(f"dense: x {x.shape} no encaja con W {W.shape}")
    return x @ W.T + b


def dense_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Devuelve (dx, dW, db) para y = x·Wᵀ + b."""
    x2 = x.reshape(-1, W.shape[1])
    dy2 = dy.reshape(-1, W.shape[0])
    return dy @ W, dy2.T @ x2, dy2.sum(axis=0)


# ReLU

def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0.0)


# Convolución 1-D (sin relleno)

def conv_output_length(length: int, kernel: int, stride: int = 1) -> int:
    """Longitud de salida de una convolución válida; 0 si la entrada es más corta que el kernel."""
    if length < kernel:
        return 0
    return (length - kernel) // stride + 1


def _window_index(length: int, kernel: int, stride: int) -> np.ndarray:
    out_len = conv_output_length(length, kernel, stride)
    return stride * np.arange(out_len)[:, None] + np.arange(kernel)[None, :]


def conv1d_forward(x: np.ndarray, kernels: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """
    Convolución 1-D válida a lo largo del tiempo con profundidad de canal completa.

    Args:
        x: Entrada [T, C_in] o [B, T, C_in]
        kernels: Filtros [C_out, C_in, K]
        b: Sesgo [C_out]
        stride: Paso temporal (positivo)

    Returns:
        np.ndarray: Salida [T', C_out] (o [B, T', C_out]) con T' = floor((T-K)/stride)+1

    Raises:
        SequenceTooShortError: Si T < K
    """
    single = x.ndim == 2
    xb = x[None] if single else x
    c_out, c_in, kernel = kernels.shape
    if xb.ndim != 3 or xb.shape[2] != c_in:
        raise DimensionError(f"conv1d: x {x.shape} no encaja con kernels {kernels.shape}")
    if b.shape != (c_out,):
        raise DimensionError(f"conv1d: sesgo {b.shape}, se esperaba ({c_out},)")
    if stride < 1:
        raise ContractError("conv1d: el paso debe ser positivo")
    if xb.shape[1] < kernel:
        raise SequenceTooShortError(f"conv1d: secuencia de {xb.shape[1]} pasos con kernel {kernel}")
    windows = xb[:, _window_index(xb.shape[1], kernel, stride), :]  # [B, T', K, C_in]
    y = np.tensordot(windows, kernels, axes=([2, 3], [2, 1])) + b
    return y[0] if single else y


def conv1d_backward(dy: np.ndarray, x: np.ndarray, kernels: np.ndarray, stride: int = 1):
    """Devuelve (dx, dkernels, db) de conv1d_forward."""
    single = x.ndim == 2
    xb = x[None] if single else x
    dyb = dy[None] if single else dy
    kernel = kernels.shape[2]
    index = _window_index(xb.shape[1], kernel, stride)
    windows = xb[:, index, :]
    dkernels = np.tensordot(dyb, windows, axes=([0, 1], [0, 1])).transpose(0, 2, 1)
    db = dyb.sum(axis=(0, 1))
    dwindows = np.tensordot(dyb, kernels, axes=([2], [0])).transpose(0, 1, 3, 2)  # [B, T', K, C_in]
    dx = np.zeros_like(xb)
    for k in range(kernel):
        # para k fijo los índices index[:, k] son distintos entre sí
        dx[:, index[:, k], :] += dwindows[:, :, k, :]
    return (dx[0] if single else dx), dkernels, db


# GRU

def _gru_scan(x: np.ndarray, params: Mapping[str, np.ndarray], h0: np.ndarray):
    missing = [name for name in GRU_PARAM_NAMES if name not in params]
    if missing:
        raise DimensionError(f"gru: faltan parámetros {missing}")
    single = x.ndim == 2
    xb = x[None] if single else x
    if xb.shape[1] == 0:
        raise EmptySequenceError("gru: la secuencia no tiene pasos")
    hidden = params["U_z"].shape[0]
    for gate in ("z", "r", "n"):
        if params[f"W_{gate}"].shape != (hidden, xb.shape[2]) or params[f"U_{gate}"].shape != (hidden, hidden) \
                or params[f"b_{gate}"].shape != (hidden,):
            raise DimensionError(f"gru: pesos de la compuerta '{gate}' no congruentes con H={hidden}")
    batch, steps, _ = xb.shape
    h = np.broadcast_to(np.asarray(h0, dtype=np.float64), (batch, hidden)).copy()

    W_z, U_z, b_z = params["W_z"], params["U_z"], params["b_z"]
    W_r, U_r, b_r = params["W_r"], params["U_r"], params["b_r"]
    W_n, U_n, b_n = params["W_n"], params["U_n"], params["b_n"]

    outputs = np.empty((batch, steps, hidden))
    cache = {name: np.empty((batch, steps, hidden)) for name in ("h_prev", "z", "r", "n", "q")}
    for t in range(steps):
        xt = xb[:, t, :]
        z = sigmoid(xt @ W_z.T + h @ U_z.T + b_z)
        r = sigmoid(xt @ W_r.T + h @ U_r.T + b_r)
        q = h @ U_n.T
        n = np.tanh(xt @ W_n.T + r * q + b_n)
        cache["h_prev"][:, t] = h
        cache["z"][:, t] = z
        cache["r"][:, t] = r
        cache["n"][:, t] = n
        cache["q"][:, t] = q
        h = (1.0 - z) * n + z * h
        outputs[:, t] = h
    cache["x"] = xb
    cache["single"] = single
    return (outputs[0] if single else outputs), cache


def gru_forward(x: np.ndarray, params: Mapping[str, np.ndarray], h0: np.ndarray) -> np.ndarray:
    """
    Recorre una secuencia con una celda GRU y devuelve todos los estados ocultos.

    Ecuaciones por paso:
        z = σ(W_z x + U_z h + b_z)
        r = σ(W_r x + U_r h + b_r)
        n = tanh(W_n x + r ⊙ (U_n h) + b_n)
        h' = (1 - z) ⊙ n + z ⊙ h

    Args:
        x: Secuencia [T, D_in] o [B, T, D_in]
        params: Mapa con W_z, U_z, b_z, W_r, U_r, b_r, W_n, U_n, b_n
        h0: Estado inicial [H] (o [B, H])

    Returns:
        np.ndarray: Estados [T, H] (o [B, T, H])
    """
    outputs, _ = _gru_scan(x, params, h0)
    return outputs


def gru_forward_cached(x, params, h0):
    """Como gru_forward pero devuelve también la caché para el backward."""
    return _gru_scan(x, params, h0)


def gru_backward(d_outputs: np.ndarray, cache: dict, params: Mapping[str, np.ndarray]):
    """
    Retropropagación en el tiempo.

    Returns:
        Tuple[np.ndarray, Dict[str, np.ndarray], np.ndarray]: (dx, gradientes por nombre, dh0)
    """
    xb = cache["x"]
    dyb = d_outputs[None] if cache["single"] else d_outputs
    batch, steps, _ = xb.shape
    grads = {name: np.zeros_like(params[name]) for name in GRU_PARAM_NAMES}
    dx = np.zeros_like(xb)
    dh_next = np.zeros((batch, params["U_z"].shape[0]))
    for t in range(steps - 1, -1, -1):
        xt = xb[:, t, :]
        h_prev = cache["h_prev"][:, t]
        z, r, n, q = cache["z"][:, t], cache["r"][:, t], cache["n"][:, t], cache["q"][:, t]
        dh = dyb[:, t, :] + dh_next

        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dh_prev = dh * z

        da_n = dn * (1.0 - n * n)
        da_z = dz * z * (1.0 - z)
        da_r = da_n * q * r * (1.0 - r)
        dq = da_n * r

        grads["W_n"] += da_n.T @ xt
        grads["U_n"] += dq.T @ h_prev
        grads["b_n"] += da_n.sum(axis=0)
        grads["W_z"] += da_z.T @ xt
        grads["U_z"] += da_z.T @ h_prev
        grads["b_z"] += da_z.sum(axis=0)
        grads["W_r"] += da_r.T @ xt
        grads["U_r"] += da_r.T @ h_prev
        grads["b_r"] += da_r.sum(axis=0)

        dh_prev = dh_prev + dq @ params["U_n"] + da_z @ params["U_z"] + da_r @ params["U_r"]
        dx[:, t, :] = da_n @ params["W_n"] + da_z @ params["W_z"] + da_r @ params["W_r"]
        dh_next = dh_prev
    dh0 = dh_next[0] if cache["single"] else dh_next
    return (dx[0] if cache["single"] else dx), grads, dh0


# Softmax y entropía cruzada

def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Pérdida media de log-verosimilitud negativa de la clase verdadera.

    Args:
        logits: Puntuaciones [B, C]
        labels: Índices de clase enteros [B]

    Returns:
        Tuple[float, np.ndarray]: (pérdida, probabilidades [B, C])

    Raises:
        LabelError: Si alguna etiqueta está fuera de [0, C)
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross-entropy: logits {logits.shape} y etiquetas {labels.shape}")
    num_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"etiqueta fuera de rango [0, {num_classes})")
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = np.sum(exp, axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    loss = -float(np.mean(log_probs[np.arange(labels.size), labels]))
    return loss, exp / total


def softmax_cross_entropy_backward(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradiente de la pérdida media respecto a los logits."""
    d_logits = probs.copy()
    d_logits[np.arange(len(labels)), labels] -= 1.0
    return d_logits / len(labels)


# Dropout

def dropout_mask(shape, rate: float, rng: np.random.Generator) -> Optional[np.ndarray]:
    """Máscara de dropout invertido (ya escalada por 1/(1-rate)); None si rate == 0."""
    if rate <= 0.0:
        return None
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


# Verificación por diferencias finitas

def finite_diff_check(
    loss_fn: Callable[[ParamSet], float],
    params: ParamSet,
    analytic: GradSet,
    eps: float = 1e-5,
) -> float:
    """
    Compara un gradiente analítico con diferencias centrales coordenada a coordenada.

    Args:
        loss_fn: Función determinista parámetros -> escalar
        params: Punto de evaluación (no se modifica)
        analytic: Gradiente analítico congruente con params
        eps: Paso de las diferencias, en [1e-6, 1e-4]

    Returns:
        float: max |g_fd - g_an| / max(1e-8, |g_fd| + |g_an|)

    Raises:
        NumericError: Si la pérdida no es finita en algún punto
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ContractError(f"eps={eps} fuera de [1e-6, 1e-4]")
    params.check_congruent(analytic, "gradiente analítico")
    work = params.copy()
    worst = 0.0
    for name in work.names():
        flat = work[name].reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            loss_plus = loss_fn(work)
            flat[i] = original - eps
            loss_minus = loss_fn(work)
            flat[i] = original
            if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
                raise NumericError(f"pérdida no finita al perturbar '{name}'[{i}]")
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            error = abs(numeric - grad[i]) / max(1e-8, abs(numeric) + abs(grad[i]))
            worst = max(worst, error)
    return worst


# Optimizador

def sgd_step(params: ParamSet, grads: GradSet, lr: float) -> ParamSet:
    """
    Paso de descenso de gradiente w' = w - lr·g, tensor a tensor.

    Raises:
        DivergenceError: Si algún gradiente no es finito (indica el tensor)
    """
    if lr <= 0:
        raise ContractError(f"lr debe ser positivo, se recibió {lr}")
    params.check_congruent(grads, "gradiente")
    updated: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = grads[name]
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"gradiente no finito en '{name}'", tensor=name)
        updated[name] = value - lr * grad
    return ParamSet(updated)
