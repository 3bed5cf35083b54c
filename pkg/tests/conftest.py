import numpy as np
import pytest

from fedsim.models.dataset import Dataset, DatasetView, Sample
from fedsim.schemas.dataset import DatasetManifest, ModalitySpec, SplitProtocol, SyntheticModality, SyntheticSpec
from fedsim.schemas.experiment import EncoderConfig, FusionConfig, ModelConfig
from fedsim.services.datastore import generate_synthetic


def tiny_model_config(scheme: str = "attention", heads: int = 2, dropout: float = 0.0) -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(conv_filters=[2], kernel=3, hidden=4),
        fusion=FusionConfig(scheme=scheme, heads=heads),
        classifier_hidden=5,
        dropout=dropout,
    )


def tiny_spec(**overrides) -> SyntheticSpec:
    values = dict(
        name="tiny",
        num_clients=6,
        samples_per_client=(8, 12),
        num_classes=3,
        modalities=[
            SyntheticModality(name="audio", length=6, dim=2, modality_class="signal"),
            SyntheticModality(name="video", length=4, dim=3, modality_class="embedding"),
        ],
        class_sep=10.0,
        noise=1.0,
        test_fraction=0.25,
        seed=0,
    )
    values.update(overrides)
    return SyntheticSpec(**values)


def labelled_dataset(labels, client_ids=None, num_classes=None) -> Dataset:
    """Conjunto mínimo de una modalidad escalar: útil para particiones y corrupción."""
    labels = [int(label) for label in labels]
    num_classes = num_classes or max(labels) + 1
    manifest = DatasetManifest(
        name="labels",
        modalities=[ModalitySpec(name="x", dim=1, max_len=1)],
        num_classes=max(num_classes, 2),
        protocol=SplitProtocol.KFOLD,
    )
    width = len(str(len(labels)))
    samples = tuple(
        Sample(
            id=f"s{i:0{width}d}",
            client_id=None if client_ids is None else client_ids[i],
            label=label,
            modalities={"x": np.full((1, 1), float(i))},
            available={"x": True},
        )
        for i, label in enumerate(labels)
    )
    return Dataset(manifest=manifest, samples=samples, splits=tuple("train" for _ in samples))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_manifest() -> DatasetManifest:
    return DatasetManifest(
        name="tiny",
        modalities=[
            ModalitySpec(name="audio", dim=2, max_len=6, modality_class="signal"),
            ModalitySpec(name="video", dim=3, max_len=4, modality_class="embedding"),
        ],
        num_classes=3,
    )


@pytest.fixture
def tiny_dataset():
    return generate_synthetic(tiny_spec())


@pytest.fixture
def tiny_view(tiny_dataset) -> DatasetView:
    return DatasetView.of(tiny_dataset)
