"""Shared domain types and the similarity primitives."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import DimensionError, InvalidInputError, ZeroNormError


class SimilarityMode(str, enum.Enum):
    COSINE = "cosine"
    INNER_PRODUCT = "inner_product"


class Embedding:
    """Immutable fixed-dimension vector.

    Values are held as a read-only float64 array so that cached embeddings
    can be shared between worker threads without copying.
    """

    __slots__ = ("_values",)

    def __init__(self, values: Iterable[float]):
        arr = np.array(values, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise InvalidInputError("embedding must have at least one dimension")
        if not np.isfinite(arr).all():
            raise InvalidInputError("embedding values must be finite")
        arr.setflags(write=False)
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dim(self) -> int:
        return int(self._values.shape[0])

    def norm(self) -> float:
        return float(math.sqrt(float(np.dot(self._values, self._values))))

    def tolist(self) -> list[float]:
        return [float(v) for v in self._values]

    def __len__(self) -> int:
        return self.dim

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Embedding):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self._values, other._values))

    def __hash__(self) -> int:
        return hash(self._values.tobytes())

    def __repr__(self) -> str:
        head = ", ".join(f"{v:.4g}" for v in self._values[:4])
        more = ", ..." if self.dim > 4 else ""
        return f"Embedding(dim={self.dim}, [{head}{more}])"


@dataclass(frozen=True)
class Query:
    id: str
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise InvalidInputError(f"query {self.id!r} has empty text")


@dataclass(frozen=True)
class ContextDoc:
    id: str
    text: str
    title: Optional[str] = None


@dataclass(frozen=True)
class ScoredContext:
    context_id: str
    score: float
    rank: int


def _as_array(v: Embedding | np.ndarray | Iterable[float]) -> np.ndarray:
    if isinstance(v, Embedding):
        return v.values
    return np.asarray(v, dtype=np.float64).reshape(-1)


def inner_product(a, b) -> float:
    """Dot product accumulated in double precision."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise DimensionError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(np.dot(x, y))


def similarity(a, b, mode: SimilarityMode | str = SimilarityMode.COSINE) -> float:
    """Cosine similarity or raw inner product between two embeddings.

    Raises:
        DimensionError: if the vectors have different lengths.
        ZeroNormError: if either vector is zero in cosine mode.
    """
    mode = SimilarityMode(mode)
    x, y = _as_array(a), _as_array(b)
    dot = inner_product(x, y)
    if mode is SimilarityMode.INNER_PRODUCT:
        return dot
    nx = math.sqrt(float(np.dot(x, x)))
    ny = math.sqrt(float(np.dot(y, y)))
    if nx == 0.0 or ny == 0.0:
        raise ZeroNormError("cosine similarity is undefined for a zero vector")
    return dot / (nx * ny)
