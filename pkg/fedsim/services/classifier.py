"""
Clasificador multimodal: un codificador por modalidad (Conv+GRU o solo GRU),
un bloque de fusión (concatenación de medias temporales o atención multi-cabeza
con enmascarado) y dos capas densas. Forward y backward son analíticos.
"""
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from ..models.dataset import NO_LABEL, Batch, DatasetView
from ..models.params import GradSet, ParamSet
from ..schemas.dataset import DatasetManifest, ModalityClass
from ..schemas.experiment import ModelConfig
from ..utils.exceptions import (
    ConfigError,
    ContractError,
    DegenerateAttentionError,
    DimensionError,
    SequenceTooShortError,
)
from ..utils.rng import STREAM_INIT, stream
from .numerics import (
    GRU_PARAM_NAMES,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    dropout_mask,
    gru_backward,
    gru_forward_cached,
    relu_backward,
    relu_forward,
    softmax,
    softmax_cross_entropy,
    softmax_cross_entropy_backward,
)

logger = logging.getLogger(__name__)

CONV_RNN = "conv_rnn"
RNN_ONLY = "rnn_only"
# Equivale a -inf tras restar el máximo en el softmax, con gradientes finitos
MASK_LOGIT = -1e30


# Fusión por concatenación

def _concat_forward(reps: Sequence[np.ndarray], masks: Sequence[np.ndarray]):
    pooled, denominators = [], []
    for rep, mask in zip(reps, masks):
        denominator = np.maximum(mask.sum(axis=1), 1)[:, None]
        pooled.append((rep * mask[..., None]).sum(axis=1) / denominator)
        denominators.append(denominator)
    return np.concatenate(pooled, axis=1), denominators


def _concat_backward(d_fused: np.ndarray, masks, denominators, hidden: int) -> List[np.ndarray]:
    d_reps = []
    for m, (mask, denominator) in enumerate(zip(masks, denominators)):
        chunk = d_fused[:, m * hidden:(m + 1) * hidden] / denominator
        d_reps.append(chunk[:, None, :] * mask[..., None])
    return d_reps


def fuse_concat(reps: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> np.ndarray:
    """
    Media temporal sobre los pasos válidos de cada modalidad y concatenación
    en el orden del manifiesto. Una modalidad totalmente enmascarada aporta
    un bloque de ceros.

    Args:
        reps: Salidas [T'_m, H] por modalidad
        masks: Pasos válidos [T'_m] por modalidad

    Returns:
        np.ndarray: Vector [M·H]
    """
    if not reps:
        raise ContractError("fuse_concat necesita al menos una modalidad")
    fused, _ = _concat_forward(
        [np.asarray(r, dtype=np.float64)[None] for r in reps],
        [np.asarray(m, dtype=bool)[None] for m in masks],
    )
    return fused[0]


# Fusión por atención

def _attention_forward(h: np.ndarray, mask: np.ndarray, W: np.ndarray, b: np.ndarray, c: np.ndarray):
    if not np.all(mask.any(axis=1)):
        raise DegenerateAttentionError("todas las filas de la atención están enmascaradas")
    h = np.where(mask[..., None], h, 0.0)
    u = np.tanh(h @ W.T + b)
    scores = np.where(mask[..., None], u @ c.T, MASK_LOGIT)
    weights = softmax(scores, axis=1)
    v = np.einsum("brk,brh->bkh", weights, h)
    cache = {"h": h, "mask": mask, "u": u, "a": weights}
    return v.reshape(h.shape[0], -1), cache


def _attention_backward(d_fused: np.ndarray, cache: dict, W: np.ndarray, c: np.ndarray):
    h, mask, u, weights = cache["h"], cache["mask"], cache["u"], cache["a"]
    batch, _, hidden = h.shape
    dv = d_fused.reshape(batch, c.shape[0], hidden)
    d_weights = np.einsum("bkh,brh->brk", dv, h)
    dh = np.einsum("brk,bkh->brh", weights, dv)
    d_scores = weights * (d_weights - (weights * d_weights).sum(axis=1, keepdims=True))
    d_scores = np.where(mask[..., None], d_scores, 0.0)
    dc = np.einsum("brk,brd->kd", d_scores, u)
    d_pre = (d_scores @ c) * (1.0 - u * u)
    dW = np.einsum("brd,brh->dh", d_pre, h)
    db = d_pre.sum(axis=(0, 1))
    dh = (dh + d_pre @ W) * mask[..., None]
    return dh, dW, db, dc


def fuse_attention(
    reps: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    params: Mapping[str, np.ndarray],
    heads: int,
) -> np.ndarray:
    """
    Atención jerárquica sobre las filas concatenadas de todas las modalidades.

    Por cabeza k: u_i = tanh(W h_i + b), logit_i = u_i · c_k (las filas
    enmascaradas reciben peso 0), a = softmax(logits), v_k = Σ a_i h_i.
    Las salidas de las cabezas se concatenan.

    Args:
        reps: Salidas [T'_m, H] por modalidad
        masks: Pasos válidos [T'_m] por modalidad
        params: W [D, H], b [D], c [heads, D]
        heads: Número de vectores de contexto

    Returns:
        np.ndarray: Vector [heads·H]

    Raises:
        DegenerateAttentionError: Si todas las filas están enmascaradas
    """
    W, b, c = params["W"], params["b"], params["c"]
    if c.shape[0] != heads:
        raise DimensionError(f"c tiene {c.shape[0]} vectores de contexto, se esperaban {heads}")
    h = np.concatenate([np.asarray(r, dtype=np.float64) for r in reps], axis=0)[None]
    mask = np.concatenate([np.asarray(m, dtype=bool) for m in masks], axis=0)[None]
    fused, _ = _attention_forward(h, mask, W, b, c)
    return fused[0]


class MultimodalClassifier:
    """
    Arquitectura + parámetros del modelo básico.

    Los nombres de parámetros siguen el esquema
    `enc.<modalidad>.conv<i>.{weight,bias}`, `enc.<modalidad>.gru.<W_z…b_n>`,
    `fusion.{W,b,c}` (solo atención) y `cls.fc{1,2}.{weight,bias}`, en ese orden.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        config: ModelConfig = None,
        params: ParamSet = None,
        seed: int = 0,
    ):
        self.manifest = manifest
        self.config = config or ModelConfig()
        self.modalities = manifest.modality_names()
        self.kinds = {
            spec.name: CONV_RNN if spec.modality_class == ModalityClass.SIGNAL else RNN_ONLY
            for spec in manifest.modalities
        }
        self.hidden = self.config.encoder.hidden
        self.scheme = self.config.fusion.scheme
        self.heads = self.config.fusion.heads
        self.layout = self._layout()
        if params is None:
            params = self.init_params(seed)
        self._check_params(params)
        self.params = params

    # Estructura

    def _layout(self) -> "OrderedDict[str, Tuple[Tuple[int, ...], int]]":
        encoder = self.config.encoder
        hidden = self.hidden
        layout: "OrderedDict[str, Tuple[Tuple[int, ...], int]]" = OrderedDict()
        for spec in self.manifest.modalities:
            prefix = f"enc.{spec.name}."
            channels = spec.dim
            if self.kinds[spec.name] == CONV_RNN:
                for i, filters in enumerate(encoder.conv_filters):
                    fan_in = channels * encoder.kernel
                    layout[f"{prefix}conv{i}.weight"] = ((filters, channels, encoder.kernel), fan_in)
                    layout[f"{prefix}conv{i}.bias"] = ((filters,), fan_in)
                    channels = filters
            for name in GRU_PARAM_NAMES:
                if name.startswith("W_"):
                    layout[f"{prefix}gru.{name}"] = ((hidden, channels), channels)
                elif name.startswith("U_"):
                    layout[f"{prefix}gru.{name}"] = ((hidden, hidden), hidden)
                else:
                    layout[f"{prefix}gru.{name}"] = ((hidden,), hidden)
        if self.scheme == "attention":
            layout["fusion.W"] = ((hidden, hidden), hidden)
            layout["fusion.b"] = ((hidden,), hidden)
            layout["fusion.c"] = ((self.heads, hidden), hidden)
            fused = self.heads * hidden
        else:
            fused = len(self.modalities) * hidden
        width = self.config.classifier_hidden
        layout["cls.fc1.weight"] = ((width, fused), fused)
        layout["cls.fc1.bias"] = ((width,), fused)
        layout["cls.fc2.weight"] = ((self.manifest.num_classes, width), width)
        layout["cls.fc2.bias"] = ((self.manifest.num_classes,), width)
        return layout

    def init_params(self, seed: int) -> ParamSet:
        """Inicialización uniforme en [-1/√fan_in, 1/√fan_in] por tensor."""
        rng = stream(seed, STREAM_INIT)
        params = ParamSet()
        for name, (shape, fan_in) in self.layout.items():
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        return params

    def _check_params(self, params: ParamSet) -> None:
        if params.names() != list(self.layout):
            raise DimensionError("los nombres de parámetros no coinciden con la arquitectura")
        for name, (shape, _) in self.layout.items():
            if params[name].shape != shape:
                raise DimensionError(f"'{name}' tiene forma {params[name].shape}, se esperaba {shape}")

    def with_params(self, params: ParamSet) -> "MultimodalClassifier":
        return MultimodalClassifier(self.manifest, self.config, params=params)

    def num_parameters(self) -> int:
        return self.params.size()

    def usable(self, view: DatasetView, indices: Sequence[int]) -> np.ndarray:
        """Índices con etiqueta observada y al menos una de las modalidades del modelo disponible."""
        return view.trainable(indices, self.modalities)

    # Codificadores

    def _encode(self, params: ParamSet, name: str, x, lengths, available, train: bool, rng):
        batch = x.shape[0]
        hidden = self.hidden
        cache = {"name": name, "skip": not available.any()}
        if cache["skip"]:
            return np.zeros((batch, 1, hidden)), np.zeros((batch, 1), dtype=bool), cache

        encoder = self.config.encoder
        h = x
        valid = np.where(available, lengths, 0)
        convs = []
        if self.kinds[name] == CONV_RNN:
            for i in range(len(encoder.conv_filters)):
                pre = conv1d_forward(h, params[f"enc.{name}.conv{i}.weight"],
                                     params[f"enc.{name}.conv{i}.bias"], encoder.stride)
                convs.append((h, pre))
                h = relu_forward(pre)
                valid = np.where(valid >= encoder.kernel, (valid - encoder.kernel) // encoder.stride + 1, 0)
            if np.any(available & (valid < 1)):
                raise SequenceTooShortError(f"modalidad '{name}': secuencia demasiado corta para la convolución")
        out, gru_cache = gru_forward_cached(h, params.subset(f"enc.{name}.gru."), np.zeros(hidden))
        mask = (np.arange(out.shape[1])[None, :] < valid[:, None]) & available[:, None]
        rep = out * mask[..., None]
        drop = dropout_mask(rep.shape, self.config.dropout, rng) if train else None
        if drop is not None:
            rep = rep * drop
        cache.update(convs=convs, gru=gru_cache, mask=mask, drop=drop)
        return rep, mask, cache

    def _encode_backward(self, params: ParamSet, cache: dict, d_rep: np.ndarray, grads: Dict[str, np.ndarray]):
        name = cache["name"]
        if cache["skip"]:
            return
        if cache["drop"] is not None:
            d_rep = d_rep * cache["drop"]
        d_out = d_rep * cache["mask"][..., None]
        dh, gru_grads, _ = gru_backward(d_out, cache["gru"], params.subset(f"enc.{name}.gru."))
        for key, value in gru_grads.items():
            grads[f"enc.{name}.gru.{key}"] = value
        stride = self.config.encoder.stride
        for i in range(len(cache["convs"]) - 1, -1, -1):
            inputs, pre = cache["convs"][i]
            d_pre = relu_backward(dh, pre)
            dh, d_kernel, d_bias = conv1d_backward(d_pre, inputs, params[f"enc.{name}.conv{i}.weight"], stride)
            grads[f"enc.{name}.conv{i}.weight"] = d_kernel
            grads[f"enc.{name}.conv{i}.bias"] = d_bias

    def encode_modality(self, name: str, x: np.ndarray, available: bool = True):
        """
        Codifica una secuencia [T, D_m] de una modalidad.

        Returns:
            Tuple[np.ndarray, np.ndarray]: (representación [T', H], máscara [T'])
            Si la modalidad no está disponible: ceros [1, H] con máscara False.
        """
        if name not in self.kinds:
            raise ConfigError(f"modalidad desconocida '{name}'")
        if not available:
            return np.zeros((1, self.hidden)), np.zeros(1, dtype=bool)
        x = np.asarray(x, dtype=np.float64)
        rep, mask, _ = self._encode(self.params, name, x[None], np.array([x.shape[0]]),
                                    np.array([True]), False, None)
        return rep[0], mask[0]

    # Modelo completo

    def _forward(self, params: ParamSet, batch: Batch, train: bool, rng, logit_scale):
        reps, masks, enc_caches = [], [], []
        for name in self.modalities:
            rep, mask, cache = self._encode(params, name, batch.inputs[name], batch.lengths[name],
                                            batch.available[name], train, rng)
            reps.append(rep)
            masks.append(mask)
            enc_caches.append(cache)

        if self.scheme == "attention":
            fused, fusion_cache = _attention_forward(
                np.concatenate(reps, axis=1), np.concatenate(masks, axis=1),
                params["fusion.W"], params["fusion.b"], params["fusion.c"],
            )
        else:
            fused, fusion_cache = _concat_forward(reps, masks)

        z1 = dense_forward(fused, params["cls.fc1.weight"], params["cls.fc1.bias"])
        a1 = relu_forward(z1)
        drop = dropout_mask(a1.shape, self.config.dropout, rng) if train else None
        if drop is not None:
            a1 = a1 * drop
        logits = dense_forward(a1, params["cls.fc2.weight"], params["cls.fc2.bias"])
        if logit_scale is not None:
            logits = logits * logit_scale
        cache = {
            "enc": enc_caches, "masks": masks, "rows": [r.shape[1] for r in reps],
            "fusion": fusion_cache, "fused": fused, "z1": z1, "a1": a1, "drop": drop,
            "logit_scale": logit_scale,
        }
        return logits, cache

    def _backward(self, params: ParamSet, cache: dict, d_logits: np.ndarray) -> GradSet:
        grads: Dict[str, np.ndarray] = {}
        if cache["logit_scale"] is not None:
            d_logits = d_logits * cache["logit_scale"]
        d_a1, grads["cls.fc2.weight"], grads["cls.fc2.bias"] = dense_backward(
            d_logits, cache["a1"], params["cls.fc2.weight"])
        if cache["drop"] is not None:
            d_a1 = d_a1 * cache["drop"]
        d_z1 = relu_backward(d_a1, cache["z1"])
        d_fused, grads["cls.fc1.weight"], grads["cls.fc1.bias"] = dense_backward(
            d_z1, cache["fused"], params["cls.fc1.weight"])

        if self.scheme == "attention":
            dh, grads["fusion.W"], grads["fusion.b"], grads["fusion.c"] = _attention_backward(
                d_fused, cache["fusion"], params["fusion.W"], params["fusion.c"])
            d_reps = np.split(dh, np.cumsum(cache["rows"])[:-1], axis=1)
        else:
            d_reps = _concat_backward(d_fused, cache["masks"], cache["fusion"], self.hidden)

        for enc_cache, d_rep in zip(cache["enc"], d_reps):
            self._encode_backward(params, enc_cache, d_rep, grads)
        return GradSet({name: grads.get(name, np.zeros(shape)) for name, (shape, _) in self.layout.items()})

    @staticmethod
    def _require_labels(batch: Batch) -> np.ndarray:
        if batch.labels is None or np.any(batch.labels == NO_LABEL):
            raise ContractError("el lote de pérdida contiene muestras sin etiqueta")
        return batch.labels

    def forward_loss(
        self,
        batch: Batch,
        mode: str = "eval",
        rng: np.random.Generator = None,
        logit_scale: np.ndarray = None,
        params: ParamSet = None,
    ) -> Tuple[float, np.ndarray]:
        """
        Codificadores → fusión → densa(ReLU, dropout en train) → densa → entropía cruzada.

        Args:
            batch: Lote con todas las etiquetas presentes
            mode: 'train' (dropout activo) o 'eval' (determinista)
            rng: Generador para las máscaras de dropout en modo train
            logit_scale: Factor por clase aplicado a los logits (softmax restringido)
            params: Parámetros alternativos (por defecto, los del modelo)

        Returns:
            Tuple[float, np.ndarray]: (pérdida media, logits [B, C])
        """
        if mode not in ("train", "eval"):
            raise ContractError(f"modo desconocido '{mode}'")
        labels = self._require_labels(batch)
        train = mode == "train"
        if train and rng is None:
            rng = np.random.default_rng(0)
        logits, _ = self._forward(params or self.params, batch, train, rng, logit_scale)
        loss, _ = softmax_cross_entropy(logits, labels)
        return loss, logits

    def loss_and_grad(
        self,
        batch: Batch,
        rng: np.random.Generator = None,
        logit_scale: np.ndarray = None,
        params: ParamSet = None,
        train: bool = True,
    ) -> Tuple[float, np.ndarray, GradSet]:
        """Pérdida, logits y gradiente analítico respecto a todos los parámetros."""
        params = params or self.params
        labels = self._require_labels(batch)
        if train and rng is None:
            rng = np.random.default_rng(0)
        logits, cache = self._forward(params, batch, train, rng, logit_scale)
        loss, probs = softmax_cross_entropy(logits, labels)
        grads = self._backward(params, cache, softmax_cross_entropy_backward(probs, labels))
        return loss, logits, grads

    def predict_logits(self, batch: Batch, params: ParamSet = None) -> np.ndarray:
        """Logits en modo evaluación; no necesita etiquetas."""
        logits, _ = self._forward(params or self.params, batch, False, None, None)
        return logits

    def __repr__(self):
        return (f"<MultimodalClassifier(modalities={self.modalities}, fusion='{self.scheme}', "
                f"parameters={self.num_parameters()})>")


def build_unimodal(
    manifest: DatasetManifest,
    config: ModelConfig,
    modality: str,
    seed: int = 0,
) -> MultimodalClassifier:
    """
    Misma arquitectura restringida a una modalidad; la fusión se reduce a la
    media temporal (concatenación de un solo bloque).

    Raises:
        ConfigError: Si la modalidad no está en el manifiesto
    """
    if modality not in manifest.modality_names():
        raise ConfigError(f"modalidad desconocida '{modality}'")
    restricted = manifest.model_copy(update={"modalities": [manifest.modality(modality)]})
    unimodal_config = config.model_copy(update={
        "fusion": config.fusion.model_copy(update={"scheme": "concat"}),
        "unimodal": modality,
    })
    return MultimodalClassifier(restricted, unimodal_config, seed=seed)


def build_model(manifest: DatasetManifest, config: ModelConfig, seed: int = 0) -> MultimodalClassifier:
    """Modelo multimodal o unimodal según config.unimodal."""
    if config.unimodal:
        return build_unimodal(manifest, config, config.unimodal, seed)
    return MultimodalClassifier(manifest, config, seed=seed)


def save_checkpoint(params: ParamSet, path: Union[str, Path]) -> Path:
    """
    Archivo .npz con un array float64 por tensor (claves p0, p1, …) y el array
    `names` con los nombres en orden.
    """
    path = Path(path)
    arrays = {f"p{i}": value for i, (_, value) in enumerate(params.items())}
    with open(path, "wb") as handle:
        np.savez(handle, names=np.array(params.names()), **arrays)
    return path


def load_checkpoint(path: Union[str, Path]) -> ParamSet:
    with np.load(path) as archive:
        names = [str(n) for n in archive["names"]]
        return ParamSet({name: archive[f"p{i}"].astype(np.float64) for i, name in enumerate(names)})
