"""Top-k image retrieval over precomputed global descriptors.

Descriptors are opaque fixed-length vectors (4096-dimensional in typical
CNN-based setups); ranking uses the L2 distance between L2-normalized
vectors, evaluated by exhaustive linear scan.  Database sizes here are
small enough that exactness beats approximate search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DEFAULT_GLOBAL_DESCRIPTOR_DIM",
    "GlobalDescriptor",
    "RetrievalConfig",
    "RetrievalIndex",
    "build_index",
    "query_top_k",
]

DEFAULT_GLOBAL_DESCRIPTOR_DIM = 4096


@dataclass(frozen=True)
class GlobalDescriptor:
    image_id: str
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{self.image_id}: descriptor contains non-finite values")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class RetrievalConfig:
    """Number of candidates to retrieve; clamped to the database size at
    query time."""

    top_k: int = 20

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


class RetrievalIndex:
    """Immutable store of L2-normalized descriptors in insertion order."""

    def __init__(self, ids: list[str], matrix: np.ndarray) -> None:
        self.ids = list(ids)
        self.matrix = matrix  # (N, D), rows unit length

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def build_index(descriptors: list[GlobalDescriptor]) -> RetrievalIndex:
    """Normalize and stack descriptors; rejects zero vectors and mixed
    dimensions.  Duplicate vectors are retained with their own ids."""
    if len(descriptors) == 0:
        raise ValueError("descriptor list must be non-empty")
    dim = descriptors[0].values.shape[0]
    rows = []
    for d in descriptors:
        if d.values.shape[0] != dim:
            raise ValueError(
                f"{d.image_id}: dimension {d.values.shape[0]} != index dimension {dim}"
            )
        n = np.linalg.norm(d.values)
        if n <= 0.0:
            raise ValueError(f"{d.image_id}: zero-norm descriptor cannot be normalized")
        rows.append(d.values / n)
    return RetrievalIndex([d.image_id for d in descriptors], np.stack(rows))


def query_top_k(
    index: RetrievalIndex, query: GlobalDescriptor, cfg: RetrievalConfig
) -> list[tuple[str, float]]:
    """Ascending (image id, distance) list of the min(top_k, size) nearest
    database images; equal distances break by image id."""
    q = query.values
    if q.shape[0] != index.dim:
        raise ValueError(f"query dimension {q.shape[0]} != index dimension {index.dim}")
    n = np.linalg.norm(q)
    if n <= 0.0:
        raise ValueError("zero-norm query descriptor")
    dist = np.linalg.norm(index.matrix - q / n, axis=1)
    ranked = sorted(zip(index.ids, dist.tolist()), key=lambda t: (t[1], t[0]))
    return ranked[: min(cfg.top_k, len(index))]
