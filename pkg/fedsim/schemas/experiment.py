from enum import Enum
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .dataset import SyntheticSpec

CONFIG_VERSION = 1


class PartitionMode(str, Enum):
    NATURAL = "natural"
    DIRICHLET = "dirichlet"
    NATURAL_DIRICHLET = "natural_dirichlet"


class PartitionConfig(BaseModel):
    """Esquema de la partición no-IID"""
    model_config = ConfigDict(extra="forbid")

    mode: PartitionMode = PartitionMode.NATURAL
    alpha: float = Field(0.1, gt=0)
    clients: int = Field(20, ge=1)
    cells_per_client: int = Field(2, ge=1)
    min_client_samples: int = Field(2, ge=1)
    max_retries: int = Field(100, ge=1)


class CorruptionConfig(BaseModel):
    """Esquema de los emuladores de ruido (q, l, e, s)"""
    model_config = ConfigDict(extra="forbid")

    missing_modality: float = Field(0.0, ge=0, le=1)
    missing_label: float = Field(0.0, ge=0, le=1)
    label_error: float = Field(0.0, ge=0, lt=1)
    sparsity: float = Field(0.4, ge=0, lt=1)
    granularity: Literal["sample", "client"] = "sample"

    def is_clean(self) -> bool:
        return self.missing_modality == 0 and self.missing_label == 0 and self.label_error == 0


class StrategyName(str, Enum):
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    SCAFFOLD = "scaffold"
    FEDOPT = "fedopt"
    FEDRS = "fedrs"


class StrategyConfig(BaseModel):
    """Esquema del optimizador federado"""
    model_config = ConfigDict(extra="forbid")

    name: StrategyName = StrategyName.FEDAVG
    lr: float = Field(0.05, gt=0)
    local_epochs: int = Field(1, ge=1)
    batch_size: int = Field(16, ge=1)
    mu: float = Field(0.01, ge=0)
    server_lr: float = Field(1e-3, gt=0)
    server_optimizer: Literal["adam", "momentum"] = "adam"
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    alpha_rs: float = Field(0.5, gt=0, le=1)


class EncoderConfig(BaseModel):
    """Esquema de los codificadores por modalidad"""
    model_config = ConfigDict(extra="forbid")

    conv_filters: List[int] = Field(default_factory=lambda: [16, 32, 64])
    kernel: int = Field(5, ge=1)
    stride: int = Field(1, ge=1)
    hidden: int = Field(128, ge=1)

    @model_validator(mode="after")
    def odd_kernel(self):
        if self.kernel % 2 == 0:
            raise ValueError("El kernel de convolución debe ser impar")
        if any(f <= 0 for f in self.conv_filters):
            raise ValueError("Los filtros de convolución deben ser positivos")
        return self


class FusionConfig(BaseModel):
    """Esquema del bloque de fusión"""
    model_config = ConfigDict(extra="forbid")

    scheme: Literal["concat", "attention"] = "attention"
    heads: int = Field(6, ge=1)


class ModelConfig(BaseModel):
    """Esquema del clasificador multimodal completo"""
    model_config = ConfigDict(extra="forbid")

    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    classifier_hidden: int = Field(64, ge=1)
    dropout: float = Field(0.2, ge=0, lt=1)
    unimodal: Optional[str] = None


class DatasetSource(BaseModel):
    """Origen de datos: ruta a un conjunto guardado o especificación sintética"""
    model_config = ConfigDict(extra="forbid")

    path: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None

    @model_validator(mode="after")
    def exactly_one(self):
        if (self.path is None) == (self.synthetic is None):
            raise ValueError("dataset: indique exactamente uno de 'path' o 'synthetic'")
        return self


class ExperimentConfig(BaseModel):
    """Esquema de un experimento completo"""
    model_config = ConfigDict(extra="forbid")

    version: Literal[1] = CONFIG_VERSION
    name: str = Field("experiment", min_length=1, max_length=100)
    dataset: DatasetSource
    partition: PartitionConfig = Field(default_factory=PartitionConfig)
    corruption: CorruptionConfig = Field(default_factory=CorruptionConfig)
    strategy: StrategyConfig = Field(default_factory=StrategyConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    rounds: int = Field(200, ge=0)
    sample_rate: float = Field(0.1, gt=0, le=1)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    folds: Optional[int] = Field(None, ge=2)
    eval_batch_size: int = Field(64, ge=1)
    output_dir: Optional[str] = None
