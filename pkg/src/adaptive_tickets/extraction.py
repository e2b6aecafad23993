"""Per-subset ticket extraction by iterative magnitude pruning with rewinding.

Every round, each subset's subnetwork is trained from the shared initial
parameters under its current mask, its smallest surviving weights are
pruned, and parameters plus optimizer state are reset to the initial
snapshot. Subsets never see each other's parameters, so the mask of subset k
depends only on its own data, the initial parameters and the config.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .masking import BinaryMask, MaskSet, PruneSchedule, magnitude_prune, pruned_target
from .tasks import SubsetTask
from .tensor import AdamState, ParamSet, adam_step, backward, forward, loss_and_grad


@dataclass(frozen=True)
class ExtractionConfig:
    steps: int  # optimizer steps per round
    schedule: PruneSchedule
    seed: int = 0
    batch_size: int = 32
    lr: float = 1e-3
    activation: str = "relu"
    checkpoints: tuple[float, ...] = ()  # sparsities at which to snapshot masks

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("need at least one optimizer step per round")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")


@dataclass
class TraceRow:
    round: int
    subset_id: int
    sparsity: float
    loss: float


@dataclass
class ExtractionTrace:
    rows: list[TraceRow] = field(default_factory=list)
    optimizer_steps: int = 0
    snapshots: dict[float, MaskSet] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["round", "subset_id", "sparsity", "loss"])
        for r in self.rows:
            writer.writerow([r.round, r.subset_id, repr(r.sparsity), repr(r.loss)])
        return buf.getvalue()


def batch_stream(index: np.ndarray, batch_size: int, rng: np.random.Generator):
    """Endless mini-batches over ``index``, reshuffled each pass."""
    while True:
        order = rng.permutation(index)
        for start in range(0, len(order), batch_size):
            yield order[start : start + batch_size]


def train_steps(
    params: ParamSet,
    mask: BinaryMask | None,
    task: SubsetTask,
    k: int,
    steps: int,
    batch_size: int,
    state: AdamState,
    rng: np.random.Generator,
    activation: str = "relu",
) -> float:
    """Run ``steps`` masked Adam updates of subnetwork ``k`` in place; returns mean loss."""
    total = 0.0
    batches = batch_stream(task.indices(k), batch_size, rng)
    for _ in range(steps):
        x, y = task.batch(k, next(batches), rng)
        out, cache = forward(params, mask, x, activation)
        loss, grad = loss_and_grad(out, y, task.loss_kind)
        adam_step(params, backward(cache, grad), mask, state)
        total += loss
    return total / steps


def _round_rng(seed: int, k: int, rnd: int) -> np.random.Generator:
    return np.random.default_rng([seed, k, rnd])


def _prune_round(
    init: ParamSet, mask: BinaryMask, task: SubsetTask, k: int, rnd: int,
    cfg: ExtractionConfig, stop_at: float | None,
) -> tuple[BinaryMask, float]:
    total = init.total_prunable
    amount = cfg.schedule.next_amount(mask.count(), total, stop_at)
    params = init.copy()  # rewind: weights and optimizer state start fresh
    state = AdamState.fresh(params, lr=cfg.lr)
    loss = train_steps(params, mask, task, k, cfg.steps, cfg.batch_size, state,
                       _round_rng(cfg.seed, k, rnd), cfg.activation)
    return magnitude_prune(params, mask, amount), loss


def _next_stop(pruned: int, total: int, checkpoints: list[float]) -> float | None:
    for c in checkpoints:
        if pruned_target(total, c) > pruned:
            return c
    return None


def extract_tickets(init: ParamSet, task: SubsetTask, cfg: ExtractionConfig) -> tuple[MaskSet, ExtractionTrace]:
    """Extract one mask per subset of ``task``; rounds visit subsets in index order."""
    K, total = task.K, init.total_prunable
    ids = list(task.partition.subset_ids)
    target = pruned_target(total, cfg.schedule.target_sparsity)
    checkpoints = sorted(c for c in cfg.checkpoints if c <= cfg.schedule.target_sparsity)
    masks = [BinaryMask.ones(init.shapes) for _ in range(K)]
    trace = ExtractionTrace()
    pending: dict[float, dict[int, BinaryMask]] = {c: {} for c in checkpoints}
    for c in checkpoints:
        if pruned_target(total, c) == 0:
            pending[c] = {k: m.copy() for k, m in enumerate(masks)}
    rnd = 0
    while any(total - m.count() < target for m in masks):
        for k in range(K):
            pruned = total - masks[k].count()
            if pruned >= target:
                continue
            stop = _next_stop(pruned, total, checkpoints)
            masks[k], loss = _prune_round(init, masks[k], task, k, rnd, cfg, stop)
            trace.optimizer_steps += cfg.steps
            pruned = total - masks[k].count()
            trace.rows.append(TraceRow(rnd, ids[k], pruned / total, loss))
            for c in checkpoints:
                if pruned == pruned_target(total, c):
                    pending[c][k] = masks[k].copy()
        rnd += 1
    for c in checkpoints:
        if len(pending[c]) == K:
            trace.snapshots[c] = MaskSet([pending[c][k] for k in range(K)], ids)
    return MaskSet(masks, ids), trace


def extract_subset(init: ParamSet, task: SubsetTask, k: int, cfg: ExtractionConfig) -> BinaryMask:
    """Run the extraction loop for subset ``k`` on its own.

    Yields the same mask as position ``k`` of :func:`extract_tickets`, so
    subsets may be extracted in any order or in separate processes.
    """
    total = init.total_prunable
    target = pruned_target(total, cfg.schedule.target_sparsity)
    checkpoints = sorted(c for c in cfg.checkpoints if c <= cfg.schedule.target_sparsity)
    mask = BinaryMask.ones(init.shapes)
    rnd = 0
    while total - mask.count() < target:
        stop = _next_stop(total - mask.count(), total, checkpoints)
        mask, _ = _prune_round(init, mask, task, k, rnd, cfg, stop)
        rnd += 1
    return mask


def reference_imp(init: ParamSet, task: SubsetTask, cfg: ExtractionConfig) -> BinaryMask:
    """Textbook single-mask IMP: train, prune, rewind until the target is met.

    Deliberately written without the multi-subset bookkeeping; extraction
    with one subset must reproduce it bit for bit.
    """
    if task.K != 1:
        raise ValueError("reference IMP expects a single subset")
    mask = BinaryMask.ones(init.shapes)
    total = init.total_prunable
    rnd = 0
    while cfg.schedule.next_amount(mask.count(), total) > 0:
        params = init.copy()
        state = AdamState.fresh(params, lr=cfg.lr)
        rng = np.random.default_rng([cfg.seed, 0, rnd])
        train_steps(params, mask, task, 0, cfg.steps, cfg.batch_size, state, rng, cfg.activation)
        mask = magnitude_prune(params, mask, cfg.schedule.next_amount(mask.count(), total))
        rnd += 1
    return mask
