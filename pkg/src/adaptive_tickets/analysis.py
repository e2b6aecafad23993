"""Mask similarity, collapse diagnostics and semantic alignment."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .masking import BinaryMask, MaskSet
from .tensor import ShapeError


def jaccard(a: BinaryMask, b: BinaryMask) -> float:
    """|a & b| / |a | b| over surviving weights; two empty masks give 1.0."""
    if a.shapes != b.shapes:
        raise ShapeError(f"mask shapes differ: {a.shapes} vs {b.shapes}")
    fa, fb = a.flat(), b.flat()
    union = np.count_nonzero(fa | fb)
    if union == 0:
        return 1.0
    return np.count_nonzero(fa & fb) / union


def similarity_matrix(masks: MaskSet, scope: str | int = "global") -> np.ndarray:
    """Pairwise Jaccard over all prunable weights (``"global"``) or one layer."""
    if scope == "global":
        bits = masks.bit_matrix()
    elif isinstance(scope, (int, np.integer)) and not isinstance(scope, bool):
        if not 0 <= scope < len(masks.shapes):
            raise IndexError(f"layer {scope} out of range for {len(masks.shapes)} layers")
        bits = masks.bit_matrix(int(scope))
    else:
        raise ValueError(f"invalid similarity scope {scope!r}")
    inter, union = kernels.pair_counts(bits)
    inter = np.asarray(inter, dtype=np.float64)
    union = np.asarray(union, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 1.0)
    return sim


def mean_similarity_to_others(sim: np.ndarray) -> np.ndarray:
    """Per subset, mean Jaccard to every other subset (NaN when K == 1)."""
    K = sim.shape[0]
    if K == 1:
        return np.full(1, np.nan)
    off = ~np.eye(K, dtype=bool)
    return np.array([sim[k][off[k]].mean() for k in range(K)])


@dataclass
class CollapseCurve:
    """Performance and similarity of every subnetwork along a sparsity sweep.

    ``metric`` and ``mean_jaccard`` are (levels, K) arrays; ``metric`` holds
    balanced accuracy for classifiers or PSNR for image fits.
    """

    sparsities: np.ndarray
    metric: np.ndarray
    mean_jaccard: np.ndarray
    subset_ids: list

    def __post_init__(self) -> None:
        self.sparsities = np.asarray(self.sparsities, dtype=np.float64)
        self.metric = np.asarray(self.metric, dtype=np.float64)
        self.mean_jaccard = np.asarray(self.mean_jaccard, dtype=np.float64)
        if np.any(np.diff(self.sparsities) <= 0):
            raise ValueError("sparsity levels must be strictly increasing")

    def overall_jaccard(self) -> np.ndarray:
        return self.mean_jaccard.mean(axis=1)

    def overall_metric(self) -> np.ndarray:
        return self.metric.mean(axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["sparsity", "subset_id", "metric", "mean_jaccard"])
        for i, s in enumerate(self.sparsities):
            for k, sid in enumerate(self.subset_ids):
                writer.writerow([repr(float(s)), sid, repr(float(self.metric[i, k])),
                                 repr(float(self.mean_jaccard[i, k]))])
        return buf.getvalue()


def detect_collapse(
    sparsities: Sequence[float],
    similarity: Sequence[float],
    tau: float = 0.15,
    mode: str = "spike",
    floor: float = 0.05,
    anchor: str = "start",
) -> float | None:
    """Label-free oversparsification warning from a similarity curve alone.

    ``spike``: first level whose forward difference (next level minus this
    one) exceeds ``tau`` per 10 points of sparsity. ``anchor="end"`` reports
    the level the jump lands on instead of the one it starts from.
    ``drop``: first level whose similarity falls below ``floor``.
    Returns the flagged sparsity or None.
    """
    s = np.asarray(sparsities, dtype=np.float64)
    j = np.asarray(similarity, dtype=np.float64)
    if s.size != j.size or s.size < 3:
        raise ValueError("need at least three (sparsity, similarity) points")
    if np.any(np.diff(s) <= 0):
        raise ValueError("sparsities must be strictly increasing")
    if mode == "spike":
        slope = np.diff(j) / (np.diff(s) / 0.1)
        hits = np.flatnonzero(slope > tau)
        if anchor not in ("start", "end"):
            raise ValueError(f"unknown anchor {anchor!r}")
        if not hits.size:
            return None
        return float(s[hits[0] + (anchor == "end")])
    if mode == "drop":
        hits = np.flatnonzero(j < floor)
        return float(s[hits[0]]) if hits.size else None
    raise ValueError(f"unknown collapse mode {mode!r}")


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size)
    sorted_v = v[order]
    start = 0
    while start < v.size:
        stop = start
        while stop + 1 < v.size and sorted_v[stop + 1] == sorted_v[start]:
            stop += 1
        ranks[order[start : stop + 1]] = 0.5 * (start + stop) + 1.0
        start = stop + 1
    return ranks


def spearman(a: Sequence[float], b: Sequence[float]) -> float | None:
    """Spearman's rho as the Pearson correlation of average ranks.

    Returns None when either input is constant (rho undefined).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size != b.size or a.size < 2:
        raise ValueError("need two equal-length sequences of at least two values")
    ra, rb = average_ranks(a), average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt(np.dot(ra, ra) * np.dot(rb, rb))
    if denom == 0.0:
        return None
    return float(np.clip(np.dot(ra, rb) / denom, -1.0, 1.0))


def upper_triangle(matrix: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(matrix.shape[0], k=1)
    return np.asarray(matrix)[iu]


def semantic_alignment(
    masks: MaskSet,
    semantic: np.ndarray,
    scope: str | int = "global",
    row: int | None = None,
) -> float | None:
    """Rank correlation between mask similarity and semantic similarity.

    Uses every pair above the diagonal, or with ``row`` only the pairs that
    involve that subset.
    """
    semantic = np.asarray(semantic, dtype=np.float64)
    K = len(masks)
    if semantic.shape != (K, K):
        raise ShapeError(f"semantic matrix {semantic.shape} does not match K={K}")
    sim = similarity_matrix(masks, scope)
    if row is not None:
        others = [j for j in range(K) if j != row]
        if len(others) < 2:
            raise ValueError("row mode needs K >= 3")
        return spearman(sim[row, others], semantic[row, others])
    if K < 3:
        raise ValueError("need K >= 3 subsets for at least three pairs")
    return spearman(upper_triangle(sim), upper_triangle(semantic))


def load_semantic_matrix(path: str | Path) -> tuple[list[int], np.ndarray]:
    """CSV with a header of subset ids and a symmetric body of values in [0, 1]."""
    rows = [r for r in csv.reader(io.StringIO(Path(path).read_text())) if r]
    if not rows:
        raise ValueError(f"{path}: empty semantic matrix")
    ids = [int(v) for v in rows[0]]
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    if body.shape != (len(ids), len(ids)):
        raise ValueError(f"{path}: expected a {len(ids)}x{len(ids)} body, got {body.shape}")
    if not np.allclose(body, body.T, rtol=0.0, atol=1e-12):
        raise ValueError(f"{path}: semantic matrix is not symmetric")
    if np.any(body < 0.0) or np.any(body > 1.0):
        raise ValueError(f"{path}: semantic similarities must lie in [0, 1]")
    return ids, body


def matrix_to_csv(ids: Sequence, matrix: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(ids))
    for r in np.asarray(matrix):
        writer.writerow([repr(float(v)) for v in r])
    return buf.getvalue()
