import warnings

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from fedsim.services.partition import (
    heterogeneity_report,
    load_partition,
    partition_dirichlet,
    partition_natural,
    partition_natural_dirichlet,
    save_partition,
)
from fedsim.utils.exceptions import ContractError, InfeasiblePartitionError, MissingClientIdError
from fedsim.utils.rng import STREAM_PARTITION, stream

from .conftest import labelled_dataset


def balanced(num_samples, num_classes=4):
    return labelled_dataset(np.arange(num_samples) % num_classes, num_classes=num_classes)


def reference_dirichlet_counts(labels, alpha, num_clients, seed, min_client_samples=2):
    """Receta de reparto escrita de nuevo, cliente a cliente y clase a clase."""
    rng = stream(seed, STREAM_PARTITION)
    classes = sorted(set(labels.tolist()))
    while True:
        counts = np.zeros((num_clients, len(classes)), dtype=int)
        for c, label in enumerate(classes):
            members = [i for i in range(len(labels)) if labels[i] == label]
            shuffled = rng.permutation(np.array(members))
            gamma = rng.standard_gamma(alpha, size=num_clients)
            share = rng.multinomial(len(shuffled), gamma / gamma.sum())
            for client in range(num_clients):
                counts[client, c] = share[client]
        if counts.sum(axis=1).min() >= min_client_samples:
            return counts


class TestPartitionNatural:
    def test_cells_follow_client_ids(self):
        client_ids = ["a"] * 5 + ["b"] * 7 + ["c"] * 9
        dataset = labelled_dataset(np.arange(21) % 2, client_ids=client_ids)
        partition = partition_natural(dataset)
        assert partition.client_ids() == ["a", "b", "c"]
        assert partition.sizes() == {"a": 5, "b": 7, "c": 9}
        assert_array_equal(partition.all_indices(), np.arange(21))

    def test_missing_client_id(self):
        dataset = labelled_dataset([0, 1, 0], client_ids=["a", None, "b"])
        with pytest.raises(MissingClientIdError):
            partition_natural(dataset)

    def test_restricted_to_indices(self):
        dataset = labelled_dataset([0, 1, 0, 1], client_ids=["a", "a", "b", "b"])
        partition = partition_natural(dataset, indices=[3, 0])
        assert {cid: cell.tolist() for cid, cell in partition.cells.items()} == {"a": [0], "b": [3]}


class TestPartitionDirichlet:
    def test_huge_alpha_is_near_iid(self):
        dataset = balanced(10_000)
        partition = partition_dirichlet(dataset, alpha=1e6, num_clients=10, seed=0)
        labels = dataset.labels()
        for cid in partition.client_ids():
            histogram = np.bincount(labels[partition.cells[cid]], minlength=4)
            distance = 0.5 * np.abs(histogram / histogram.sum() - 0.25).sum()
            assert distance < 0.05

    def test_every_sample_assigned_once(self):
        dataset = balanced(4000)
        partition = partition_dirichlet(dataset, alpha=0.1, num_clients=10, seed=3)
        assert_array_equal(partition.all_indices(), np.arange(4000))
        assert min(partition.sizes().values()) >= 2
        assert partition.client_ids()[0] == "client_0"

    def test_deterministic(self):
        dataset = balanced(400)
        first = partition_dirichlet(dataset, alpha=0.5, num_clients=5, seed=11)
        second = partition_dirichlet(dataset, alpha=0.5, num_clients=5, seed=11)
        for cid in first.client_ids():
            assert_array_equal(first.cells[cid], second.cells[cid])

    def test_matches_reference_recipe(self):
        dataset = balanced(4000)
        partition = partition_dirichlet(dataset, alpha=0.1, num_clients=10, seed=5)
        labels = dataset.labels()
        expected = reference_dirichlet_counts(labels, 0.1, 10, seed=5)
        observed = np.array([np.bincount(labels[partition.cells[cid]], minlength=4)
                             for cid in partition.client_ids()])
        assert_array_equal(observed, expected)

    def test_entropy_ordering_across_seeds(self):
        dataset = balanced(4000)
        wins = 0
        for seed in range(10):
            low = heterogeneity_report(partition_dirichlet(dataset, 0.1, 20, seed), dataset)
            high = heterogeneity_report(partition_dirichlet(dataset, 5.0, 20, seed), dataset)
            wins += high["mean_entropy"] > low["mean_entropy"]
        assert wins >= 9

    def test_infeasible(self):
        with pytest.raises(InfeasiblePartitionError):
            partition_dirichlet(balanced(8), alpha=1.0, num_clients=10, seed=0, max_retries=5)

    def test_tiny_alpha_gives_one_client_per_class(self):
        dataset = balanced(200)
        with warnings.catch_warnings():
            warnings.simplefilter("error", RuntimeWarning)
            partition = partition_dirichlet(dataset, alpha=1e-3, num_clients=2, seed=0)
        labels = dataset.labels()
        assert_array_equal(partition.all_indices(), np.arange(200))
        for label in range(4):
            owners = {cid for cid, cell in partition.cells.items() if np.any(labels[cell] == label)}
            assert len(owners) == 1

    def test_invalid_alpha(self):
        with pytest.raises(ContractError):
            partition_dirichlet(balanced(8), alpha=0.0, num_clients=2, seed=0)


class TestPartitionNaturalDirichlet:
    def test_sub_clients(self):
        client_ids = ["a"] * 40 + ["b"] * 40
        dataset = labelled_dataset(np.arange(80) % 4, client_ids=client_ids)
        partition = partition_natural_dirichlet(dataset, alpha=1.0, cells_per_client=2, seed=0)
        assert all(cid.split("/")[0] in {"a", "b"} for cid in partition.client_ids())
        assert all(size >= 2 for size in partition.sizes().values())
        for cid, cell in partition.cells.items():
            owner = cid.split("/")[0]
            assert all(dataset.samples[i].client_id == owner for i in cell)


class TestHeterogeneityReport:
    def test_identical_distributions(self):
        dataset = labelled_dataset([0, 1, 2, 0, 1, 2], client_ids=["a"] * 3 + ["b"] * 3)
        report = heterogeneity_report(partition_natural(dataset), dataset)
        assert report["mean_pairwise_tv"] == 0.0
        assert report["counts"] == {"a": 3, "b": 3}

    def test_single_class_clients(self):
        dataset = labelled_dataset([0, 0, 1, 1, 2, 2], client_ids=["a", "a", "b", "b", "c", "c"])
        report = heterogeneity_report(partition_natural(dataset), dataset)
        assert all(value == 0.0 for value in report["entropy"].values())
        assert report["mean_pairwise_tv"] == pytest.approx(1.0)

    def test_hand_computed_entropy(self):
        dataset = labelled_dataset([0, 0, 1, 1], client_ids=["a", "a", "a", "b"])
        report = heterogeneity_report(partition_natural(dataset), dataset)
        expected = -(2 / 3 * np.log(2 / 3) + 1 / 3 * np.log(1 / 3))
        assert abs(report["entropy"]["a"] - expected) < 1e-12
        assert report["entropy"]["b"] == 0.0
        assert report["mean_entropy"] == pytest.approx(expected / 2, abs=1e-12)
        assert report["label_counts"]["a"] == [2, 1]


class TestPartitionFiles:
    def test_save_and_load(self, tmp_path):
        dataset = balanced(60)
        partition = partition_dirichlet(dataset, alpha=1.0, num_clients=3, seed=2)
        save_partition(partition, dataset, tmp_path / "partition.json")
        loaded = load_partition(tmp_path / "partition.json", dataset)
        assert loaded.client_ids() == partition.client_ids()
        assert loaded.provenance == partition.provenance
        for cid in partition.client_ids():
            assert_array_equal(loaded.cells[cid], partition.cells[cid])
