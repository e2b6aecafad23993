"""Synthetic data, label partitions, pixmap I/O and coordinate datasets."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .fileio import atomic_write_bytes


class FormatError(ValueError):
    """Malformed or unsupported input file."""


@dataclass
class LabeledDataset:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) int
    class_count: int
    targets: np.ndarray | None = None  # (n, c) regression targets, if any

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("features must be (n, d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.shape[0] != self.features.shape[0]:
                raise ValueError("one target row per sample required")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index: np.ndarray) -> "LabeledDataset":
        targets = None if self.targets is None else self.targets[index]
        return LabeledDataset(self.features[index], self.labels[index], self.class_count, targets)


@dataclass
class Partition:
    """Disjoint, covering, non-empty groups of sample indices."""

    subsets: list[np.ndarray]
    subset_ids: list[int]

    def __post_init__(self) -> None:
        self.subsets = [np.asarray(s, dtype=np.int64) for s in self.subsets]
        if len(self.subsets) != len(self.subset_ids):
            raise ValueError("one id per subset required")
        for sid, s in zip(self.subset_ids, self.subsets):
            if s.size == 0:
                raise ValueError(f"subset {sid} is empty")

    @property
    def K(self) -> int:
        return len(self.subsets)

    @property
    def sizes(self) -> list[int]:
        return [int(s.size) for s in self.subsets]

    def membership(self, n: int) -> np.ndarray:
        """Subset position of every sample, -1 when uncovered."""
        out = np.full(n, -1, dtype=np.int64)
        for k, s in enumerate(self.subsets):
            out[s] = k
        return out

    def complement(self, k: int, n: int) -> np.ndarray:
        return np.flatnonzero(self.membership(n) != k)


def trivial_partition(n: int) -> Partition:
    return Partition([np.arange(n)], [0])


def gen_gaussian_clusters(
    K: int, per_cluster_n: int, dim: int, spread: float, seed: int
) -> LabeledDataset:
    """Isotropic Gaussian blobs around the vertices of a randomly rotated
    regular simplex.

    Centers are one unit apart, or ``4 * spread`` apart when that is larger,
    so the blobs stay separable whatever the spread. With ``K > dim + 1`` a
    regular simplex does not fit; centers are then drawn at random and
    rescaled to the same nearest-neighbour distance.
    """
    if dim < 2:
        raise ValueError("dim must be at least 2")
    if K < 2 or per_cluster_n < 1:
        raise ValueError("need K >= 2 clusters with at least one sample each")
    rng = np.random.default_rng(seed)
    distance = max(1.0, 4.0 * spread)
    if K <= dim + 1:
        # basis vectors of R^K are pairwise sqrt(2) apart; centre and rotate them
        base = np.eye(K) - 1.0 / K
        basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        u, _, _ = np.linalg.svd(base)
        coords = base @ u[:, : K - 1]  # (K, K-1) simplex in its own span
        centers = coords @ basis[:, : K - 1].T
    else:
        centers = rng.normal(size=(K, dim))
    gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    nearest = gaps[~np.eye(K, dtype=bool)].min()
    centers = centers * (distance / nearest)
    noise = rng.normal(0.0, spread, size=(K, per_cluster_n, dim))
    features = (centers[:, None, :] + noise).reshape(K * per_cluster_n, dim)
    labels = np.repeat(np.arange(K), per_cluster_n)
    return LabeledDataset(features, labels, K)


def cluster_centers(dataset: LabeledDataset) -> np.ndarray:
    return np.stack([dataset.features[dataset.labels == c].mean(axis=0)
                     for c in range(dataset.class_count)])


def stratified_split(
    dataset: LabeledDataset, test_fraction: float, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(dataset.class_count):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        cut = int(round(len(idx) * test_fraction))
        test.extend(idx[:cut])
        train.extend(idx[cut:])
    return dataset.subset(np.sort(train)), dataset.subset(np.sort(test))


def partition_by_label(dataset: LabeledDataset, label_to_subset: Mapping[int, int]) -> Partition:
    """Group samples by ``label_to_subset[label]``; subsets are ordered by id."""
    present = np.unique(dataset.labels)
    missing = [int(c) for c in present if int(c) not in label_to_subset]
    if missing:
        raise ValueError(f"labels {missing} have no subset assignment")
    ids = sorted(set(int(v) for v in label_to_subset.values()))
    lookup = np.full(dataset.class_count, -1, dtype=np.int64)
    for label, sid in label_to_subset.items():
        if 0 <= int(label) < dataset.class_count:
            lookup[int(label)] = int(sid)
    assigned = lookup[dataset.labels]
    subsets = []
    for sid in ids:
        members = np.flatnonzero(assigned == sid)
        if members.size == 0:
            raise ValueError(f"subset {sid} would be empty")
        subsets.append(members)
    return Partition(subsets, ids)


def identity_mapping(class_count: int) -> dict[int, int]:
    return {c: c for c in range(class_count)}


def load_mapping(path: str | Path) -> dict[int, int]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: mapping must be a JSON object")
    try:
        return {int(k): int(v) for k, v in doc.items()}
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: mapping keys and values must be integers") from exc


def mapping_to_json(mapping: Mapping[int, int]) -> str:
    return json.dumps({str(k): int(v) for k, v in sorted(mapping.items())}, indent=1)


def dataset_to_csv(dataset: LabeledDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"f{i}" for i in range(dataset.dim)] + ["label"])
    for row, label in zip(dataset.features, dataset.labels):
        writer.writerow([repr(float(v)) for v in row] + [int(label)])
    return buf.getvalue()


def dataset_from_csv(text: str, class_count: int | None = None) -> LabeledDataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][-1] != "label":
        raise FormatError("dataset CSV must have a header ending in 'label'")
    body = [r for r in rows[1:] if r]
    if not body:
        raise FormatError("dataset CSV has no samples")
    try:
        features = np.array([[float(v) for v in r[:-1]] for r in body])
        labels = np.array([int(r[-1]) for r in body])
    except ValueError as exc:
        raise FormatError(f"non-numeric CSV entry: {exc}") from exc
    if class_count is None:
        class_count = int(labels.max()) + 1
    return LabeledDataset(features, labels, class_count)


# ---------------------------------------------------------------------------
# images


@dataclass
class Image:
    pixels: np.ndarray  # (height, width, channels), values in [0, 1]

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3 or self.pixels.shape[2] not in (1, 3):
            raise ValueError("image must be (height, width, 1 or 3)")
        if np.any(self.pixels < 0.0) or np.any(self.pixels > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def _parse_pnm(raw: bytes, source: str) -> tuple[bytes, int, int, int, bytes]:
    """Split a binary PNM file into (magic, width, height, maxval, raster)."""
    if len(raw) < 2 or raw[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{source}: not a binary P5/P6 pixmap")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        if pos >= len(raw):
            raise FormatError(f"{source}: truncated header")
        ch = raw[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = raw.find(b"\n", pos)
            if end < 0:
                raise FormatError(f"{source}: unterminated header comment")
            pos = end + 1
        elif ch.isdigit():
            start = pos
            while pos < len(raw) and raw[pos : pos + 1].isdigit():
                pos += 1
            if pos - start > 9:
                raise FormatError(f"{source}: header value too large")
            fields.append(int(raw[start:pos]))
        else:
            raise FormatError(f"{source}: unexpected byte {ch!r} in header")
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise FormatError(f"{source}: missing whitespace after header")
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"{source}: empty image dimensions")
    if maxval != 255:
        raise FormatError(f"{source}: unsupported maxval {maxval} (only 255)")
    return raw[:2], width, height, maxval, raw[pos + 1 :]


def load_pixmap(path: str | Path) -> Image:
    raw = Path(path).read_bytes()
    return decode_pixmap(raw, str(path))


def decode_pixmap(raw: bytes, source: str = "<bytes>") -> Image:
    magic, width, height, _, raster = _parse_pnm(raw, source)
    channels = 3 if magic == b"P6" else 1
    needed = width * height * channels
    if len(raster) < needed:
        raise FormatError(f"{source}: truncated payload ({len(raster)} of {needed} bytes)")
    data = np.frombuffer(raster, dtype=np.uint8, count=needed)
    return Image(data.reshape(height, width, channels) / 255.0)


def encode_pixmap(image: Image) -> bytes:
    magic = b"P6" if image.channels == 3 else b"P5"
    data = np.rint(image.pixels * 255.0).astype(np.uint8)
    header = b"%s\n%d %d\n255\n" % (magic, image.width, image.height)
    return header + data.tobytes()


def save_pixmap(image: Image, path: str | Path) -> None:
    atomic_write_bytes(path, encode_pixmap(image))


@dataclass
class RegionMap:
    labels: np.ndarray  # (height, width) region ids 0..region_count-1
    region_count: int

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise ValueError("region map must be 2-D")
        counts = np.bincount(self.labels.reshape(-1), minlength=self.region_count)
        if counts.size != self.region_count or np.any(counts == 0):
            raise ValueError("every region id in [0, region_count) must be non-empty")

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.labels.shape)

    @classmethod
    def uniform(cls, height: int, width: int) -> "RegionMap":
        return cls(np.zeros((height, width), dtype=np.int64), 1)


def merge_small_regions(labels: np.ndarray, min_pixels: int = 4) -> np.ndarray:
    """Fold every label with fewer than ``min_pixels`` pixels into the label
    most frequent among its 4-neighbours (ties: smallest label). Smallest
    regions are merged first."""
    labels = np.array(labels, dtype=np.int64)
    while True:
        values, counts = np.unique(labels, return_counts=True)
        small = [(c, v) for v, c in zip(values, counts) if c < min_pixels]
        if not small or len(values) == 1:
            return labels
        _, victim = min(small)
        region = labels == victim
        neighbours: list[np.ndarray] = []
        for axis, step in ((0, 1), (0, -1), (1, 1), (1, -1)):
            shifted = np.roll(region, step, axis=axis)
            # np.roll wraps around; clear the wrapped edge
            edge = [slice(None)] * 2
            edge[axis] = slice(0, 1) if step == 1 else slice(-1, None)
            shifted[tuple(edge)] = False
            neighbours.append(labels[shifted & ~region])
        around = np.concatenate(neighbours)
        if around.size == 0:
            return labels
        vals, freq = np.unique(around, return_counts=True)
        labels[region] = vals[np.argmax(freq)]


def regions_from_levels(levels: np.ndarray, min_pixels: int = 4) -> RegionMap:
    """Region map from raw gray levels: small regions are merged, then the
    surviving levels are renumbered 0.. in increasing order."""
    merged = merge_small_regions(levels, min_pixels)
    _, dense = np.unique(merged, return_inverse=True)
    dense = dense.reshape(merged.shape)
    return RegionMap(dense, int(dense.max()) + 1)


def load_regions(path: str | Path, min_pixels: int = 4) -> RegionMap:
    image = load_pixmap(path)
    if image.channels != 1:
        raise FormatError(f"{path}: region map must be a P5 graymap")
    levels = np.rint(image.pixels[:, :, 0] * 255.0).astype(np.int64)
    return regions_from_levels(levels, min_pixels)


def save_regions(regions: RegionMap, path: str | Path) -> None:
    if regions.region_count > 256:
        raise ValueError("at most 256 regions fit a graymap")
    save_pixmap(Image(regions.labels[:, :, None] / 255.0), path)


def pixel_coordinates(height: int, width: int, convention: str = "corner") -> np.ndarray:
    """(height * width, 2) array of (x, y) coordinates in row-major pixel order.

    ``corner``: first and last pixel centres sit on -1 and +1.
    ``center``: pixel centres with half-pixel insets, ``-1 + (2i + 1) / n``.
    A one-pixel axis maps to 0 under either convention.
    """

    def axis(n: int) -> np.ndarray:
        if n == 1:
            return np.zeros(1)
        i = np.arange(n, dtype=np.float64)
        if convention == "corner":
            return -1.0 + 2.0 * i / (n - 1)
        if convention == "center":
            return -1.0 + (2.0 * i + 1.0) / n
        raise ValueError(f"unknown coordinate convention {convention!r}")

    ys, xs = np.meshgrid(axis(height), axis(width), indexing="ij")
    return np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)


def image_to_coord_dataset(
    image: Image, regions: RegionMap, convention: str = "corner"
) -> LabeledDataset:
    """One sample per pixel: (x, y) features, colour targets, region labels."""
    if regions.shape != (image.height, image.width):
        raise ValueError(f"region map {regions.shape} does not match image "
                         f"{(image.height, image.width)}")
    coords = pixel_coordinates(image.height, image.width, convention)
    targets = image.pixels.reshape(-1, image.channels)
    return LabeledDataset(coords, regions.labels.reshape(-1), regions.region_count, targets)


def two_region_fixture(size: int = 16, seed: int = 0) -> tuple[Image, RegionMap]:
    """Test image with two regions of different character.

    The left half is a smooth colour ramp; the right half carries a seeded
    high-frequency pattern. Regions split the image into equal halves.
    """
    rng = np.random.default_rng(seed)
    half = size // 2
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    pixels = np.empty((size, size, 3))
    pixels[..., 0] = 0.2 + 0.6 * xx
    pixels[..., 1] = 0.3 + 0.4 * yy
    pixels[..., 2] = 0.5 + 0.3 * xx * yy
    tiles = rng.uniform(0.05, 0.95, size=(size // 2, size // 2, 3))
    texture = np.kron(tiles, np.ones((2, 2, 1)))[:size, :size]
    pixels[:, half:] = texture[:, half:]
    labels = np.zeros((size, size), dtype=np.int64)
    labels[:, half:] = 1
    return Image(pixels), RegionMap(labels, 2)
