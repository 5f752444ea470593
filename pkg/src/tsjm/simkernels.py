"""Frame-level cosine kernels and parameter-free cross-attention similarity."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .featurestore import FeatureSequence


class MatrixKind(enum.Enum):
    DISTANCE = "distance"
    SIMILARITY = "similarity"


@dataclass(frozen=True, eq=False)
class CostMatrix:
    values: np.ndarray
    kind: MatrixKind

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        if not np.all(np.isfinite(v)):
            raise ValueError("cost matrix entries must be finite")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def as_frames(x) -> np.ndarray:
    """float64 view of a FeatureSequence or array-like of frames."""
    if isinstance(x, FeatureSequence):
        x = x.frames
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    return a


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("undefined cosine: zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _normalized(frames: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(frames, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("undefined cosine: zero-norm frame")
    return frames / norms


def cosine_grid(S, Q) -> np.ndarray:
    """Raw T_s x T_q cosine values (clamped), no wrapping."""
    s, q = as_frames(S), as_frames(Q)
    if s.shape[1] != q.shape[1]:
        raise ValueError(f"dimension mismatch: D={s.shape[1]} vs D={q.shape[1]}")
    return np.clip(_normalized(s) @ _normalized(q).T, -1.0, 1.0)


def frame_similarity_matrix(S, Q) -> CostMatrix:
    return CostMatrix(cosine_grid(S, Q), MatrixKind.SIMILARITY)


def frame_distance_matrix(S, Q) -> CostMatrix:
    return CostMatrix(1.0 - cosine_grid(S, Q), MatrixKind.DISTANCE)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def attention_pool(x: np.ndarray, context: np.ndarray) -> np.ndarray:
    """Softmax(x . context / sqrt(D)) weighted sum of the rows of x."""
    w = _softmax(x @ context / np.sqrt(x.shape[1]))
    return w @ x


def cross_attention_similarity(x, y) -> float:
    """Cosine between x pooled against mean(y) and y pooled against mean(x).

    Both contexts are frame means, so the result does not depend on frame
    order within either sequence.
    """
    xa, ya = as_frames(x), as_frames(y)
    if xa.shape[1] != ya.shape[1]:
        raise ValueError(f"dimension mismatch: D={xa.shape[1]} vs D={ya.shape[1]}")
    px = attention_pool(xa, ya.mean(axis=0))
    py = attention_pool(ya, xa.mean(axis=0))
    nx, ny = np.linalg.norm(px), np.linalg.norm(py)
    if nx == 0 or ny == 0:
        raise ValueError("undefined cross-attention similarity: zero-norm pooled vector")
    return float(np.clip(px @ py / (nx * ny), -1.0, 1.0))
