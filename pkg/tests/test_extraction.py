import numpy as np
import pytest

from adaptive_tickets.analysis import jaccard
from adaptive_tickets.datasets import gen_gaussian_clusters, identity_mapping, partition_by_label, trivial_partition
from adaptive_tickets.extraction import (
    ExtractionConfig,
    extract_subset,
    extract_tickets,
    reference_imp,
)
from adaptive_tickets.masking import PruneSchedule, pruned_target, sparsity_of
from adaptive_tickets.retraining import RetrainConfig, balance_batches, joint_retrain
from adaptive_tickets.tasks import detector_task, multihead_task
from adaptive_tickets.tensor import forward, init_params, loss_and_grad


def cluster_task(K=3, n=40, seed=0):
    data = gen_gaussian_clusters(K, n, 4, 0.3, seed)
    part = partition_by_label(data, identity_mapping(K))
    return data, detector_task(data.features, part)


def small_cfg(target=0.5, steps=5, **kw):
    return ExtractionConfig(steps=steps, schedule=PruneSchedule(target, "fraction", 0.3), **kw)


class TestConfig:
    def test_steps_positive(self):
        with pytest.raises(ValueError):
            ExtractionConfig(steps=0, schedule=PruneSchedule(0.5))


class TestExtract:
    def test_zero_sparsity_is_all_ones_without_training(self):
        _, task = cluster_task()
        init = init_params([4, 8, 1], 0)
        masks, trace = extract_tickets(init, task, small_cfg(target=0.0))
        assert all(m.count() == m.total for m in masks)
        assert trace.optimizer_steps == 0 and trace.rows == []

    def test_reaches_target_exactly(self):
        _, task = cluster_task()
        init = init_params([4, 8, 1], 0)
        masks, _ = extract_tickets(init, task, small_cfg(target=0.6))
        target = pruned_target(init.total_prunable, 0.6)
        for m in masks:
            assert m.total - m.count() == target

    def test_k1_matches_reference_imp(self):
        data = gen_gaussian_clusters(2, 50, 4, 0.3, 1)
        task = multihead_task(data.features, partition_by_label(data, identity_mapping(2)))
        init = init_params([4, 10, 2], 3)
        cfg = small_cfg(target=0.7, steps=8, seed=9)
        masks, _ = extract_tickets(init, task, cfg)
        assert masks[0] == reference_imp(init, task, cfg)

    def test_reference_imp_needs_one_subset(self):
        _, task = cluster_task()
        with pytest.raises(ValueError):
            reference_imp(init_params([4, 8, 1], 0), task, small_cfg())

    def test_subset_isolation(self):
        _, task = cluster_task()
        init = init_params([4, 8, 1], 0)
        cfg = small_cfg(target=0.6, seed=4)
        masks, _ = extract_tickets(init, task, cfg)
        # extracting in reverse order, one subset at a time, changes nothing
        for k in reversed(range(task.K)):
            assert extract_subset(init, task, k, cfg) == masks[k]

    def test_deterministic(self):
        _, task = cluster_task()
        init = init_params([4, 8, 1], 0)
        a, ta = extract_tickets(init, task, small_cfg(seed=2))
        b, tb = extract_tickets(init, task, small_cfg(seed=2))
        assert a == b and ta.to_csv() == tb.to_csv()

    def test_init_untouched(self):
        _, task = cluster_task()
        init = init_params([4, 8, 1], 0)
        before = init.copy()
        extract_tickets(init, task, small_cfg())
        assert init.equals(before)

    def test_budget_accounting(self):
        _, task = cluster_task()
        init = init_params([4, 8, 1], 0)
        cfg = small_cfg(target=0.6, steps=7)
        _, trace = extract_tickets(init, task, cfg)
        rounds = cfg.schedule.rounds(init.total_prunable)
        assert trace.optimizer_steps == task.K * rounds * cfg.steps
        assert len(trace.rows) == task.K * rounds

    def test_trace_monotone_per_subset(self):
        _, task = cluster_task()
        _, trace = extract_tickets(init_params([4, 8, 1], 0), task, small_cfg(target=0.8))
        for sid in task.partition.subset_ids:
            s = [r.sparsity for r in trace.rows if r.subset_id == sid]
            assert s == sorted(s)
        assert trace.to_csv().splitlines()[0] == "round,subset_id,sparsity,loss"

    def test_snapshots_land_on_checkpoints(self):
        _, task = cluster_task()
        init = init_params([4, 8, 1], 0)
        cfg = small_cfg(target=0.8, checkpoints=(0.25, 0.5, 0.8))
        masks, trace = extract_tickets(init, task, cfg)
        assert sorted(trace.snapshots) == [0.25, 0.5, 0.8]
        for level, snap in trace.snapshots.items():
            for m in snap:
                assert m.total - m.count() == pruned_target(m.total, level)
        assert trace.snapshots[0.8] == masks
        # snapshots nest
        for k in range(task.K):
            assert trace.snapshots[0.5][k].issubset(trace.snapshots[0.25][k])

    def test_masks_differ_across_subsets(self):
        _, task = cluster_task()
        masks, _ = extract_tickets(init_params([4, 16, 1], 0), task, small_cfg(target=0.5, steps=30))
        assert jaccard(masks[0], masks[1]) < 1.0
        assert sparsity_of(masks[0]) >= 0.5


@pytest.mark.parametrize("seed", range(5))
def test_two_subset_specialization(seed):
    # each subnetwork fits its own subset better than the other subset's mask does
    data = gen_gaussian_clusters(2, 60, 2, 0.3, seed)
    part = partition_by_label(data, identity_mapping(2))
    task = detector_task(data.features, part)
    init = init_params([2, 16, 16, 1], seed)
    cfg = ExtractionConfig(steps=40, schedule=PruneSchedule(0.5, "fraction", 0.2), seed=seed, lr=1e-2)
    masks, _ = extract_tickets(init, task, cfg)
    assert jaccard(masks[0], masks[1]) < 1.0
    rcfg = RetrainConfig(epochs=20, lr=1e-2, batch_size=16, seed=seed)
    theta, _ = joint_retrain(init, masks, balance_batches(part, 16, seed), task, rcfg)
    rng = np.random.default_rng(seed)
    for k in range(2):
        x, y = task.batch(k, part.subsets[k], rng)
        own, _ = loss_and_grad(forward(theta, masks[k], x)[0], y, "bce")
        swapped, _ = loss_and_grad(forward(theta, masks[1 - k], x)[0], y, "bce")
        assert own < swapped


def test_empty_subset_rejected():
    with pytest.raises(ValueError, match="empty"):
        trivial_partition(0)
