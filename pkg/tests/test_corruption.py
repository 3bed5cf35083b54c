import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from fedsim.models.dataset import NO_LABEL, DatasetView
from fedsim.schemas.experiment import CorruptionConfig
from fedsim.services.corruption import (
    apply_erroneous_labels,
    apply_missing_labels,
    apply_missing_modalities,
    build_transition_matrix,
    corrupt,
    load_overlay,
    save_overlay,
)
from fedsim.services.partition import partition_natural
from fedsim.utils.exceptions import ContractError, SchemaError

from .conftest import labelled_dataset


@pytest.fixture(scope="module")
def large_view():
    return DatasetView.of(labelled_dataset(np.arange(10_000) % 3))


class TestMissingModalities:
    def test_zero_rate(self, tiny_view):
        assert_array_equal(apply_missing_modalities(tiny_view, 0.0, seed=0).available, tiny_view.available)

    def test_full_rate(self, tiny_view):
        view = apply_missing_modalities(tiny_view, 1.0, seed=0)
        train = tiny_view.corruptible
        assert not view.available[train].any()
        assert view.trainable(train).size == 0

    def test_binomial_bound(self, large_view):
        view = apply_missing_modalities(large_view, 0.3, seed=4)
        missing = 1.0 - view.available.mean()
        assert abs(missing - 0.3) <= 3 * np.sqrt(0.3 * 0.7 / 10_000)

    def test_test_split_untouched(self, tiny_view):
        view = apply_missing_modalities(tiny_view, 1.0, seed=0)
        test = tiny_view.dataset.indices("test")
        assert test.size > 0
        assert view.available[test].all()

    def test_source_dataset_unchanged(self, tiny_view):
        before = tiny_view.dataset.availability()
        apply_missing_modalities(tiny_view, 0.5, seed=0)
        assert_array_equal(tiny_view.dataset.availability(), before)
        assert_array_equal(tiny_view.available, before)

    def test_client_granularity(self, tiny_dataset, tiny_view):
        partition = partition_natural(tiny_dataset)
        view = apply_missing_modalities(tiny_view, 0.5, seed=1, granularity="client", partition=partition)
        for cid in partition.client_ids():
            rows = view.available[partition.cells[cid]]
            assert (rows == rows[0]).all()

    def test_client_granularity_needs_partition(self, tiny_view):
        with pytest.raises(ContractError):
            apply_missing_modalities(tiny_view, 0.5, seed=1, granularity="client")

    def test_rate_out_of_range(self, tiny_view):
        with pytest.raises(ContractError):
            apply_missing_modalities(tiny_view, 1.5, seed=0)


class TestMissingLabels:
    def test_zero_rate(self, tiny_view):
        assert_array_equal(apply_missing_labels(tiny_view, 0.0, seed=0).labels, tiny_view.labels)

    def test_full_rate_keeps_test_labels(self, tiny_view):
        view = apply_missing_labels(tiny_view, 1.0, seed=0)
        assert (view.labels[tiny_view.corruptible] == NO_LABEL).all()
        test = tiny_view.dataset.indices("test")
        assert_array_equal(view.labels[test], tiny_view.labels[test])

    def test_binomial_bound(self, large_view):
        view = apply_missing_labels(large_view, 0.5, seed=9)
        assert abs((view.labels == NO_LABEL).mean() - 0.5) <= 0.015

    def test_deterministic(self, tiny_view):
        first = apply_missing_labels(tiny_view, 0.4, seed=3)
        second = apply_missing_labels(tiny_view, 0.4, seed=3)
        assert_array_equal(first.labels, second.labels)


class TestTransitionMatrix:
    def test_binary(self):
        for s in (0.0, 0.4, 0.9):
            assert_allclose(build_transition_matrix(2, 0.3, s, seed=0), [[0.7, 0.3], [0.3, 0.7]])

    def test_zero_error_is_identity(self):
        assert_array_equal(build_transition_matrix(5, 0.0, 0.4, seed=0), np.eye(5))

    def test_sparsity_controls_targets(self):
        Q = build_transition_matrix(6, 0.3, 0.4, seed=2)
        off_diagonal = Q - np.diag(np.diag(Q))
        assert_array_equal((off_diagonal > 0).sum(axis=1), 3)
        assert_allclose(off_diagonal[off_diagonal > 0], 0.1)
        assert_allclose(np.diag(Q), 0.7)
        assert np.abs(Q.sum(axis=1) - 1.0).max() <= 1e-12

    def test_full_sparsity_floor(self):
        Q = build_transition_matrix(6, 0.3, 0.99, seed=0)
        assert_array_equal(((Q - np.diag(np.diag(Q))) > 0).sum(axis=1), 1)

    def test_error_rate_out_of_range(self):
        with pytest.raises(ContractError):
            build_transition_matrix(3, 1.0, 0.0, seed=0)


class TestErroneousLabels:
    def test_identity(self, tiny_view):
        view = apply_erroneous_labels(tiny_view, np.eye(3), seed=0)
        assert_array_equal(view.labels, tiny_view.labels)

    def test_deterministic_flip(self, tiny_view):
        Q = np.eye(3)[[1, 1, 2]]
        view = apply_erroneous_labels(tiny_view, Q, seed=0)
        train = tiny_view.corruptible
        was_zero = train[tiny_view.labels[train] == 0]
        assert was_zero.size > 0
        assert (view.labels[was_zero] == 1).all()
        test = tiny_view.dataset.indices("test")
        assert_array_equal(view.labels[test], tiny_view.labels[test])

    def test_flip_frequencies(self):
        view = DatasetView.of(labelled_dataset(np.zeros(10_000, dtype=int), num_classes=3))
        Q = np.array([[0.7, 0.2, 0.1], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        observed = np.bincount(apply_erroneous_labels(view, Q, seed=6).labels, minlength=3) / 10_000
        for frequency, p in zip(observed, Q[0]):
            assert abs(frequency - p) <= 3 * np.sqrt(p * (1 - p) / 10_000)

    def test_unlabeled_stay_unlabeled(self, tiny_view):
        erased = apply_missing_labels(tiny_view, 0.5, seed=0)
        view = apply_erroneous_labels(erased, np.eye(3)[[1, 2, 0]], seed=0)
        assert_array_equal(view.labels == NO_LABEL, erased.labels == NO_LABEL)

    def test_dimension_mismatch(self, tiny_view):
        with pytest.raises(SchemaError):
            apply_erroneous_labels(tiny_view, np.eye(2), seed=0)

    def test_not_stochastic(self, tiny_view):
        with pytest.raises(ContractError):
            apply_erroneous_labels(tiny_view, np.full((3, 3), 0.5), seed=0)


class TestCorrupt:
    def test_clean_config_is_identity(self, tiny_dataset):
        view = corrupt(tiny_dataset, CorruptionConfig(), seed=0)
        assert_array_equal(view.available, tiny_dataset.availability())
        assert_array_equal(view.labels, tiny_dataset.labels())

    def test_deterministic(self, tiny_dataset):
        config = CorruptionConfig(missing_modality=0.3, missing_label=0.2, label_error=0.3)
        first = corrupt(tiny_dataset, config, seed=5)
        second = corrupt(tiny_dataset, config, seed=5)
        assert_array_equal(first.available, second.available)
        assert_array_equal(first.labels, second.labels)

    def test_overlay_round_trip(self, tiny_dataset, tmp_path):
        config = CorruptionConfig(missing_modality=0.4, missing_label=0.3)
        view = corrupt(tiny_dataset, config, seed=1)
        save_overlay(view, tmp_path / "overlay.jsonl")
        loaded = load_overlay(tmp_path / "overlay.jsonl", tiny_dataset)
        assert_array_equal(loaded.available, view.available)
        assert_array_equal(loaded.labels, view.labels)
        assert_array_equal(loaded.corruptible, view.corruptible)
