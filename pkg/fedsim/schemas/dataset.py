from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Metric(str, Enum):
    UAR = "UAR"
    ACC = "ACC"
    F1 = "F1"
    AUC = "AUC"


class SplitProtocol(str, Enum):
    PREDEFINED = "predefined"
    KFOLD = "kfold"


class ModalityClass(str, Enum):
    """Señales crudas (audio, acelerómetro, ECG) o secuencias de embeddings (vídeo, texto)."""
    SIGNAL = "signal"
    EMBEDDING = "embedding"


class ModalitySpec(BaseModel):
    """Esquema de una modalidad del manifiesto"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = Field(..., min_length=1, max_length=50)
    dim: int = Field(..., gt=0)
    max_len: int = Field(..., gt=0)
    modality_class: ModalityClass = ModalityClass.SIGNAL


class DatasetManifest(BaseModel):
    """Esquema del manifiesto de un conjunto de datos multimodal"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = Field(..., min_length=1, max_length=100)
    modalities: List[ModalitySpec] = Field(..., min_length=1)
    num_classes: int = Field(..., ge=2)
    protocol: SplitProtocol = SplitProtocol.PREDEFINED
    folds: int = Field(5, ge=2)
    metric: Metric = Metric.ACC

    @field_validator("modalities")
    @classmethod
    def unique_modality_names(cls, v):
        names = [m.name for m in v]
        if len(set(names)) != len(names):
            raise ValueError("Los nombres de modalidad deben ser únicos")
        return v

    @model_validator(mode="after")
    def auc_needs_two_classes(self):
        if self.metric == Metric.AUC and self.num_classes != 2:
            raise ValueError("La métrica AUC solo está definida para dos clases")
        return self

    def modality_names(self) -> List[str]:
        return [m.name for m in self.modalities]

    def modality(self, name: str) -> ModalitySpec:
        for spec in self.modalities:
            if spec.name == name:
                return spec
        raise KeyError(name)


class SyntheticModality(BaseModel):
    """Forma de una modalidad sintética"""
    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1, max_length=50)
    length: int = Field(..., gt=0)
    dim: int = Field(..., gt=0)
    modality_class: ModalityClass = ModalityClass.SIGNAL


class SyntheticSpec(BaseModel):
    """Esquema para generar un conjunto sintético separable por clases"""
    model_config = ConfigDict(extra="forbid")

    name: str = "synthetic"
    num_clients: int = Field(20, gt=0)
    samples_per_client: Tuple[int, int] = (20, 40)
    num_classes: int = Field(4, ge=2)
    modalities: List[SyntheticModality] = Field(..., min_length=1)
    class_sep: float = Field(10.0, ge=0)
    noise: float = Field(1.0, ge=0)
    test_fraction: float = Field(0.2, gt=0, lt=1)
    metric: Metric = Metric.ACC
    seed: int = 0

    @field_validator("samples_per_client")
    @classmethod
    def valid_range(cls, v):
        low, high = v
        if low <= 0 or high < low:
            raise ValueError("samples_per_client debe ser un rango [min, max] con 0 < min <= max")
        return v

    @model_validator(mode="after")
    def unique_names(self):
        names = [m.name for m in self.modalities]
        if len(set(names)) != len(names):
            raise ValueError("Los nombres de modalidad deben ser únicos")
        if self.metric == Metric.AUC and self.num_classes != 2:
            raise ValueError("La métrica AUC solo está definida para dos clases")
        return self

    def manifest(self) -> DatasetManifest:
        return DatasetManifest(
            name=self.name,
            modalities=[
                ModalitySpec(name=m.name, dim=m.dim, max_len=m.length, modality_class=m.modality_class)
                for m in self.modalities
            ],
            num_classes=self.num_classes,
            protocol=SplitProtocol.PREDEFINED,
            metric=self.metric,
        )


class SplitTag(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class SampleRecord(BaseModel):
    """Registro de una muestra en el archivo de líneas"""
    model_config = ConfigDict(extra="forbid")

    id: str = Field(..., min_length=1)
    client_id: Optional[str] = None
    label: Optional[int] = None
    split: Optional[SplitTag] = None
    modalities: dict = Field(default_factory=dict)
    available: Optional[dict] = None
