"""Turn a dataset plus partition into per-subnetwork training batches.

Three objectives are supported:

``detector``
    Subnetwork k is a one-vs-rest detector with a single logit. Each batch
    holds positives from subset k and an equal number of negatives drawn
    uniformly from all other samples. BCE loss.
``multihead``
    One network with one logit per group, trained on plain batches with
    one-hot targets (the single-mask baseline). BCE loss.
``regression``
    Subnetwork k fits ``targets`` on subset k. MSE loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import Partition

OBJECTIVES = ("detector", "multihead", "regression")


@dataclass
class SubsetTask:
    features: np.ndarray
    partition: Partition
    objective: str
    targets: np.ndarray | None = None
    groups: np.ndarray | None = None  # multihead: group of every sample
    group_count: int = 0

    def __post_init__(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        n = self.features.shape[0]
        if self.objective == "regression" and self.targets is None:
            raise ValueError("regression needs targets")
        if self.objective == "multihead":
            if self.groups is None or self.group_count < 1:
                raise ValueError("multihead needs per-sample groups")
            self._onehot = np.eye(self.group_count)[self.groups]
        if self.objective == "detector":
            if self.partition.K < 2:
                raise ValueError("detectors need at least two subsets (positives and negatives)")
            member = self.partition.membership(n)
            self._negatives = [np.flatnonzero(member != k) for k in range(self.partition.K)]

    @property
    def K(self) -> int:
        return self.partition.K

    @property
    def out_dim(self) -> int:
        if self.objective == "detector":
            return 1
        if self.objective == "multihead":
            return self.group_count
        return self.targets.shape[1]

    @property
    def loss_kind(self) -> str:
        return "mse" if self.objective == "regression" else "bce"

    def indices(self, k: int) -> np.ndarray:
        return self.partition.subsets[k]

    def batch(self, k: int, index: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Inputs and targets for subnetwork ``k`` built around sample ``index``."""
        x = self.features[index]
        if self.objective == "regression":
            return x, self.targets[index]
        if self.objective == "multihead":
            return x, self._onehot[index]
        negatives = rng.choice(self._negatives[k], size=len(index), replace=True)
        x = np.concatenate([x, self.features[negatives]])
        y = np.concatenate([np.ones(len(index)), np.zeros(len(index))])[:, None]
        return x, y

    def only(self, k: int) -> "SubsetTask":
        """View restricted to subset ``k`` alone (detectors keep their negatives)."""
        part = Partition([self.partition.subsets[k]], [self.partition.subset_ids[k]])
        clone = SubsetTask.__new__(SubsetTask)
        clone.__dict__.update(self.__dict__)
        clone.partition = part
        if self.objective == "detector":
            clone._negatives = [self._negatives[k]]
        return clone


def detector_task(features: np.ndarray, partition: Partition) -> SubsetTask:
    return SubsetTask(np.asarray(features, dtype=np.float64), partition, "detector")


def multihead_task(features: np.ndarray, partition: Partition) -> SubsetTask:
    """Single-network task over all samples with one head per subset of ``partition``."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    groups = partition.membership(n)
    if np.any(groups < 0):
        raise ValueError("partition must cover every sample")
    whole = Partition([np.arange(n)], [0])
    return SubsetTask(features, whole, "multihead", groups=groups, group_count=partition.K)


def regression_task(features: np.ndarray, targets: np.ndarray, partition: Partition) -> SubsetTask:
    return SubsetTask(np.asarray(features, dtype=np.float64), partition, "regression",
                      targets=np.asarray(targets, dtype=np.float64))
