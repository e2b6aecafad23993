"""Binary weight masks, magnitude pruning, rewinding and sparsity accounting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .fileio import atomic_write_text
from .tensor import ParamSet, ShapeError

MASKSET_VERSION = 1


@dataclass
class BinaryMask:
    """One boolean array per weight matrix; True keeps the weight."""

    layers: list[np.ndarray]

    def __post_init__(self) -> None:
        self.layers = [np.ascontiguousarray(a, dtype=bool) for a in self.layers]

    @classmethod
    def ones(cls, shapes: Sequence[tuple[int, int]]) -> "BinaryMask":
        return cls([np.ones(s, dtype=bool) for s in shapes])

    @classmethod
    def zeros(cls, shapes: Sequence[tuple[int, int]]) -> "BinaryMask":
        return cls([np.zeros(s, dtype=bool) for s in shapes])

    @classmethod
    def from_flat(cls, bits: np.ndarray, shapes: Sequence[tuple[int, int]]) -> "BinaryMask":
        bits = np.asarray(bits, dtype=bool)
        sizes = [r * c for r, c in shapes]
        if bits.size != sum(sizes):
            raise ShapeError(f"expected {sum(sizes)} bits, got {bits.size}")
        parts = np.split(bits, np.cumsum(sizes)[:-1])
        return cls([p.reshape(s) for p, s in zip(parts, shapes)])

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [tuple(a.shape) for a in self.layers]

    @property
    def total(self) -> int:
        return sum(a.size for a in self.layers)

    def count(self) -> int:
        return int(sum(np.count_nonzero(a) for a in self.layers))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.layers])

    def copy(self) -> "BinaryMask":
        return BinaryMask([a.copy() for a in self.layers])

    def check_params(self, params: ParamSet) -> None:
        if self.shapes != params.shapes:
            for i, (ms, ps) in enumerate(zip(self.shapes, params.shapes)):
                if ms != ps:
                    raise ShapeError(f"layer {i}: mask shape {ms} does not match weights {ps}")
            raise ShapeError(f"mask has {len(self.shapes)} layers, params have {len(params.shapes)}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shapes == other.shapes and all(
            np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        )

    def issubset(self, other: "BinaryMask") -> bool:
        return all(not np.any(a & ~b) for a, b in zip(self.layers, other.layers))


def density(mask: BinaryMask) -> float:
    return mask.count() / mask.total


def sparsity_of(mask: BinaryMask) -> float:
    """Fraction of prunable weights removed."""
    return 1.0 - density(mask)


def magnitude_prune(params: ParamSet, mask: BinaryMask, amount: int) -> BinaryMask:
    """Clear the ``amount`` surviving weights of smallest magnitude.

    Ranking is global over all layers. Ties go to the lower position in the
    concatenated layer-major order, i.e. the key is ``(|w|, layer, flat index)``.
    """
    mask.check_params(params)
    bits = mask.flat()
    survivors = np.flatnonzero(bits)
    if amount < 0 or amount > survivors.size:
        raise ValueError(f"cannot prune {amount} weights, only {survivors.size} survive")
    if amount == 0:
        return mask.copy()
    magnitude = np.abs(np.concatenate([w.reshape(-1) for w in params.weights]))[survivors]
    # stable sort keeps survivors' index order among equal magnitudes
    order = np.argsort(magnitude, kind="stable")
    bits[survivors[order[:amount]]] = False
    return BinaryMask.from_flat(bits, mask.shapes)


def rewind(params: ParamSet, init: ParamSet) -> ParamSet:
    """Return a fresh copy of the initial parameters."""
    params.check_congruent(init)
    return init.copy()


def pruned_target(total: int, target_sparsity: float) -> int:
    """Number of weights that must be removed to reach ``target_sparsity``."""
    # tolerance absorbs binary representation error in e.g. 0.7 * 1000
    return min(total, math.ceil(target_sparsity * total - 1e-9))


@dataclass(frozen=True)
class PruneSchedule:
    """How much to prune per round and where to stop.

    ``mode="fraction"`` removes ``ceil(value * survivors)`` per round,
    ``mode="count"`` removes ``value`` weights per round. Either way the last
    round is shortened to land exactly on the target.
    """

    target_sparsity: float
    mode: str = "fraction"
    value: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.target_sparsity < 1.0:
            raise ValueError("target sparsity must lie in [0, 1)")
        if self.mode == "fraction":
            if not 0.0 < self.value < 1.0:
                raise ValueError("pruning fraction must lie in (0, 1)")
        elif self.mode == "count":
            if self.value < 1 or int(self.value) != self.value:
                raise ValueError("pruning count must be a positive integer")
        else:
            raise ValueError(f"unknown schedule mode {self.mode!r}")

    def next_amount(self, survivors: int, total: int, stop_at: float | None = None) -> int:
        """Weights to remove this round; ``stop_at`` caps the round at an
        intermediate sparsity checkpoint."""
        goal = self.target_sparsity if stop_at is None else min(stop_at, self.target_sparsity)
        needed = pruned_target(total, goal) - (total - survivors)
        if needed <= 0:
            return 0
        if self.mode == "fraction":
            step = math.ceil(self.value * survivors)
        else:
            step = int(self.value)
        return min(step, needed)

    def rounds(self, total: int, checkpoints: Sequence[float] = ()) -> int:
        survivors, n = total, 0
        stops = sorted(c for c in checkpoints if c < self.target_sparsity)
        while True:
            while stops and pruned_target(total, stops[0]) <= total - survivors:
                stops.pop(0)
            amount = self.next_amount(survivors, total, stops[0] if stops else None)
            if amount == 0:
                return n
            survivors -= amount
            n += 1


@dataclass
class MaskSet:
    masks: list[BinaryMask]
    subset_ids: list

    def __post_init__(self) -> None:
        if not self.masks:
            raise ValueError("a mask set needs at least one mask")
        if len(self.subset_ids) != len(self.masks):
            raise ValueError("one subset id per mask required")
        shapes = self.masks[0].shapes
        for k, m in enumerate(self.masks):
            if m.shapes != shapes:
                raise ShapeError(f"mask {k} shapes {m.shapes} differ from mask 0 {shapes}")

    def __len__(self) -> int:
        return len(self.masks)

    def __getitem__(self, k: int) -> BinaryMask:
        return self.masks[k]

    def __iter__(self):
        return iter(self.masks)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MaskSet):
            return NotImplemented
        return self.subset_ids == other.subset_ids and all(
            a == b for a, b in zip(self.masks, other.masks)
        ) and len(self) == len(other)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return self.masks[0].shapes

    def bit_matrix(self, layer: int | None = None) -> np.ndarray:
        """K x n uint8 matrix of mask bits, optionally restricted to one layer."""
        if layer is None:
            rows = [m.flat() for m in self.masks]
        else:
            rows = [m.layers[layer].reshape(-1) for m in self.masks]
        return np.ascontiguousarray(np.stack(rows), dtype=np.uint8)

    def to_json(self) -> str:
        doc = {
            "version": MASKSET_VERSION,
            "layer_shapes": [list(s) for s in self.shapes],
            "subset_ids": list(self.subset_ids),
            "masks": [[a.reshape(-1).astype(int).tolist() for a in m.layers] for m in self.masks],
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "MaskSet":
        doc = json.loads(text)
        if doc.get("version") != MASKSET_VERSION:
            raise ValueError(f"unsupported mask set version {doc.get('version')!r}")
        shapes = [tuple(s) for s in doc["layer_shapes"]]
        masks = []
        for k, layers in enumerate(doc["masks"]):
            if len(layers) != len(shapes):
                raise ShapeError(f"mask {k}: expected {len(shapes)} layers, got {len(layers)}")
            arrays = []
            for i, (bits, shape) in enumerate(zip(layers, shapes)):
                a = np.asarray(bits, dtype=np.int64)
                if a.size != shape[0] * shape[1] or np.any((a != 0) & (a != 1)):
                    raise ShapeError(f"mask {k}, layer {i}: malformed bit array")
                arrays.append(a.reshape(shape).astype(bool))
            masks.append(BinaryMask(arrays))
        return cls(masks, list(doc["subset_ids"]))

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "MaskSet":
        return cls.from_json(Path(path).read_text())
