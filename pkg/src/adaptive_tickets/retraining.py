"""Balanced batch plans and interleaved retraining of K masked subnetworks
that share one parameter set."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .datasets import Partition
from .masking import MaskSet
from .tasks import SubsetTask
from .tensor import AdamState, ParamSet, adam_step, backward, forward, loss_and_grad


@dataclass
class BalancedBatchPlan:
    batches: list[list[np.ndarray]]  # per subset, M index arrays each
    natural_counts: list[int]

    @property
    def K(self) -> int:
        return len(self.batches)

    @property
    def M(self) -> int:
        return len(self.batches[0]) if self.batches else 0


def balance_batches(partition: Partition, batch_size: int, seed: int) -> BalancedBatchPlan:
    """Shuffle each subset, cut it into batches, then repeat shorter lists
    cyclically until every subset has ``M = max_k M_k`` batches."""
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    natural = []
    for k, (sid, idx) in enumerate(zip(partition.subset_ids, partition.subsets)):
        if idx.size == 0:
            raise ValueError(f"subset {sid} is empty")
        order = np.random.default_rng([seed, k]).permutation(idx)
        natural.append([order[i : i + batch_size] for i in range(0, len(order), batch_size)])
    M = max(len(b) for b in natural)
    batches = [[b[m % len(b)] for m in range(M)] for b in natural]
    return BalancedBatchPlan(batches, [len(b) for b in natural])


@dataclass(frozen=True)
class RetrainConfig:
    epochs: int
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    activation: str = "relu"
    train_biases: bool = True
    # "shared": one set of Adam moments for theta, bias correction counted per
    # subnetwork. "per-subnet": every subnetwork owns its moments too.
    moments: str = "shared"

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.moments not in ("shared", "per-subnet"):
            raise ValueError(f"unknown moments mode {self.moments!r}")


@dataclass
class RetrainTrace:
    rows: list[tuple[int, int, float]] = field(default_factory=list)  # epoch, subset id, loss
    updates: list[int] = field(default_factory=list)  # gradient updates per subnetwork

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "subset_id", "loss"])
        for epoch, sid, loss in self.rows:
            writer.writerow([epoch, sid, repr(loss)])
        return buf.getvalue()


def _masked_update(params, mask, state, task, k, index, rng, cfg) -> float:
    x, y = task.batch(k, index, rng)
    out, cache = forward(params, mask, x, cfg.activation)
    loss, grad = loss_and_grad(out, y, task.loss_kind)
    grads = backward(cache, grad)
    if not cfg.train_biases:
        for g in grads.biases:
            g[:] = 0.0
    adam_step(params, grads, mask, state)
    return loss


def _batch_rng(seed: int, epoch: int, m: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, epoch, m, k])


def joint_retrain(
    params: ParamSet,
    masks: MaskSet,
    plan: BalancedBatchPlan,
    task: SubsetTask,
    cfg: RetrainConfig,
    on_epoch: Callable[[int, ParamSet], None] | None = None,
) -> tuple[ParamSet, RetrainTrace]:
    """Epochs x batch index x subnetwork: one masked Adam update per step,
    all on a single shared parameter set. Each subnetwork keeps its own
    step counter; moments are shared or per subnetwork (``cfg.moments``).
    The input ``params`` is not modified; ``on_epoch`` is called with the
    shared parameters after every epoch."""
    if len(masks) != plan.K or task.K != plan.K:
        raise ValueError(f"masks ({len(masks)}), plan ({plan.K}) and task ({task.K}) disagree on K")
    for m in masks:
        m.check_params(params)
    theta = params.copy()
    if cfg.moments == "shared":
        states = [AdamState.fresh(theta, lr=cfg.lr)] * plan.K
    else:
        states = [AdamState.fresh(theta, lr=cfg.lr) for _ in range(plan.K)]
    steps = [0] * plan.K
    trace = RetrainTrace(updates=[0] * plan.K)
    ids = masks.subset_ids
    for epoch in range(cfg.epochs):
        sums = [0.0] * plan.K
        for m in range(plan.M):
            for k in range(plan.K):
                rng = _batch_rng(cfg.seed, epoch, m, k)
                states[k].step = steps[k]
                sums[k] += _masked_update(theta, masks[k], states[k], task, k,
                                          plan.batches[k][m], rng, cfg)
                steps[k] = states[k].step
                trace.updates[k] += 1
        trace.rows.extend((epoch, ids[k], sums[k] / plan.M) for k in range(plan.K))
        if on_epoch is not None:
            on_epoch(epoch, theta)
    return theta, trace


def independent_retrain(
    params: ParamSet,
    masks: MaskSet,
    plan: BalancedBatchPlan,
    task: SubsetTask,
    cfg: RetrainConfig,
) -> tuple[list[ParamSet], RetrainTrace]:
    """Same batches and update count as :func:`joint_retrain`, but every
    subnetwork trains its own copy of ``params`` (the multi-model baseline)."""
    if len(masks) != plan.K or task.K != plan.K:
        raise ValueError("masks, plan and task disagree on K")
    models = [params.copy() for _ in range(plan.K)]
    trace = RetrainTrace(updates=[0] * plan.K)
    for k in range(plan.K):
        state = AdamState.fresh(models[k], lr=cfg.lr)
        for epoch in range(cfg.epochs):
            total = 0.0
            for m in range(plan.M):
                rng = _batch_rng(cfg.seed, epoch, m, k)
                total += _masked_update(models[k], masks[k], state, task, k,
                                        plan.batches[k][m], rng, cfg)
                trace.updates[k] += 1
            trace.rows.append((epoch, masks.subset_ids[k], total / plan.M))
    trace.rows.sort(key=lambda r: (r[0], masks.subset_ids.index(r[1])))
    return models, trace
