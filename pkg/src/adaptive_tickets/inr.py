"""Coordinate-MLP image fitting with one adaptive ticket per image region."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datasets import Image, Partition, RegionMap, image_to_coord_dataset, pixel_coordinates
from .extraction import ExtractionConfig, ExtractionTrace, extract_tickets
from .masking import MaskSet, PruneSchedule
from .retraining import RetrainConfig, RetrainTrace, balance_batches, independent_retrain, joint_retrain
from .tasks import SubsetTask, regression_task
from .tensor import ParamSet, forward, init_params

PSNR_CAP = 99.0


@dataclass(frozen=True)
class FourierEncoder:
    """sin/cos of ``2**j * pi * x`` and ``2**j * pi * y`` for ``j < num_bands``,
    grouped per band as (sin x, cos x, sin y, cos y), then raw (x, y)."""

    num_bands: int = 8
    include_raw: bool = True

    @property
    def width(self) -> int:
        return 4 * self.num_bands + (2 if self.include_raw else 0)

    def encode(self, coords: np.ndarray) -> np.ndarray:
        coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
        x, y = coords[:, 0:1], coords[:, 1:2]
        freq = np.pi * 2.0 ** np.arange(self.num_bands)
        fx, fy = x * freq, y * freq
        bands = np.stack([np.sin(fx), np.cos(fx), np.sin(fy), np.cos(fy)], axis=2)
        parts = [bands.reshape(coords.shape[0], 4 * self.num_bands)]
        if self.include_raw:
            parts.append(coords[:, :2])
        return np.concatenate(parts, axis=1)


def fourier_encode(coord, num_bands: int = 8, include_raw: bool = True) -> np.ndarray:
    return FourierEncoder(num_bands, include_raw).encode(coord)[0]


@dataclass(frozen=True)
class InrConfig:
    # 876 prunable weights: 64 per round is the large-image schedule rescaled by size
    hidden: tuple[int, ...] = (12, 12, 12, 12)
    num_bands: int = 8
    steps: int = 2000  # optimizer steps per pruning round
    epochs: int = 2000  # joint retraining epochs
    lr: float = 0.01
    batch_size: int = 256
    seed: int = 0
    convention: str = "corner"
    moments: str = "shared"

    @property
    def encoder(self) -> FourierEncoder:
        return FourierEncoder(self.num_bands)

    def widths(self, channels: int) -> list[int]:
        return [self.encoder.width, *self.hidden, channels]


@dataclass
class InrFit:
    params: ParamSet | list[ParamSet]
    masks: MaskSet
    init: ParamSet
    extraction: ExtractionTrace
    retraining: RetrainTrace
    psnr_by_epoch: list[float] = field(default_factory=list)


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; identical images
    give ``PSNR_CAP``."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def reconstruct(
    params: ParamSet | Sequence[ParamSet],
    masks: MaskSet,
    regions: RegionMap,
    encoder: FourierEncoder = FourierEncoder(),
    convention: str = "corner",
) -> Image:
    """Evaluate every pixel through the mask of its region, clamped to [0, 1].

    ``params`` is one shared set, or one set per mask (independent models).
    """
    height, width = regions.shape
    feats = encoder.encode(pixel_coordinates(height, width, convention))
    labels = regions.labels.reshape(-1)
    position = {int(sid): k for k, sid in enumerate(masks.subset_ids)}
    per_mask = [params] * len(masks) if isinstance(params, ParamSet) else list(params)
    if len(per_mask) != len(masks):
        raise ValueError(f"{len(per_mask)} parameter sets for {len(masks)} masks")
    channels = per_mask[0].weights[-1].shape[0]
    out = np.empty((labels.size, channels))
    for r in np.unique(labels):
        if int(r) not in position:
            raise KeyError(f"region {int(r)} has no mask")
        k = position[int(r)]
        rows = labels == r
        out[rows] = forward(per_mask[k], masks[k], feats[rows])[0]
    return Image(np.clip(out, 0.0, 1.0).reshape(height, width, channels))


def region_psnr(a: Image, b: Image, regions: RegionMap) -> dict[int, float]:
    """PSNR restricted to the pixels of each region."""
    out = {}
    for r in range(regions.region_count):
        rows = regions.labels == r
        out[r] = psnr(Image(a.pixels[rows][None]), Image(b.pixels[rows][None]))
    return out


def coordinate_task(image: Image, regions: RegionMap, cfg: InrConfig) -> SubsetTask:
    data = image_to_coord_dataset(image, regions, cfg.convention)
    features = cfg.encoder.encode(data.features)
    ids = list(range(regions.region_count))
    partition = Partition([np.flatnonzero(data.labels == r) for r in ids], ids)
    return regression_task(features, data.targets, partition)


def fit_inr_levels(
    image: Image,
    regions: RegionMap,
    schedule: PruneSchedule,
    levels: Sequence[float],
    cfg: InrConfig = InrConfig(),
    init: ParamSet | None = None,
    independent: bool = False,
) -> list[InrFit]:
    """One extraction pass with mask snapshots at ``levels`` (the schedule
    target is raised to the largest level), then joint retraining from
    ``init`` at every level. ``independent=True`` retrains a separate copy
    per region instead (``InrFit.params`` is then a list)."""
    levels = sorted(levels)
    task = coordinate_task(image, regions, cfg)
    if init is None:
        init = init_params(cfg.widths(image.channels), cfg.seed)
    sweep = PruneSchedule(max(levels), schedule.mode, schedule.value)
    ext_cfg = ExtractionConfig(cfg.steps, sweep, cfg.seed, cfg.batch_size, cfg.lr, checkpoints=tuple(levels))
    final, ext_trace = extract_tickets(init, task, ext_cfg)
    plan = balance_batches(task.partition, cfg.batch_size, cfg.seed)
    rcfg = RetrainConfig(cfg.epochs, cfg.lr, cfg.batch_size, cfg.seed, moments=cfg.moments)
    fits = []
    for level in levels:
        masks = ext_trace.snapshots.get(level, final)
        if independent:
            params, trace = independent_retrain(init, masks, plan, task, rcfg)
        else:
            params, trace = joint_retrain(init, masks, plan, task, rcfg)
        fits.append(InrFit(params, masks, init, ext_trace, trace))
    return fits


def fit_inr(
    image: Image,
    regions: RegionMap,
    schedule: PruneSchedule,
    cfg: InrConfig = InrConfig(),
    init: ParamSet | None = None,
    track_psnr: bool = False,
) -> InrFit:
    """Per-region ticket extraction followed by joint retraining from the
    initial parameters. A single-region map gives the single-mask baseline.

    Pass ``init`` to share one initialization between runs; otherwise it is
    drawn from ``cfg.seed`` (identical across region maps for a given seed).
    """
    task = coordinate_task(image, regions, cfg)
    if init is None:
        init = init_params(cfg.widths(image.channels), cfg.seed)
    ext_cfg = ExtractionConfig(cfg.steps, schedule, cfg.seed, cfg.batch_size, cfg.lr)
    masks, ext_trace = extract_tickets(init, task, ext_cfg)
    plan = balance_batches(task.partition, cfg.batch_size, cfg.seed)
    history: list[float] = []

    def monitor(epoch: int, theta: ParamSet) -> None:
        history.append(psnr(reconstruct(theta, masks, regions, cfg.encoder, cfg.convention), image))

    params, ret_trace = joint_retrain(
        init, masks, plan, task,
        RetrainConfig(cfg.epochs, cfg.lr, cfg.batch_size, cfg.seed, moments=cfg.moments),
        on_epoch=monitor if track_psnr else None,
    )
    return InrFit(params, masks, init, ext_trace, ret_trace, history)
