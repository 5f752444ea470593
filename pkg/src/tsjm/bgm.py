"""Bipartite graph matching: Kuhn-Munkres video similarity and its loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .otm import _check_target, softmax_xent, softmax_xent_grad
from .simkernels import CostMatrix, MatrixKind, as_frames, frame_similarity_matrix


@dataclass(frozen=True)
class PerfectMatching:
    assignment: tuple[int, ...]
    total_weight: float

    def to_csv(self, W) -> str:
        values = W.values if isinstance(W, CostMatrix) else np.asarray(W)
        return "".join(f"{l},{m},{float(values[l, m])!r}\n" for l, m in enumerate(self.assignment))


def _weight_values(W) -> np.ndarray:
    if isinstance(W, CostMatrix):
        if W.kind is not MatrixKind.SIMILARITY:
            raise ValueError("km_match expects a similarity matrix")
        values = W.values
    else:
        values = np.asarray(W, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"non-square matrix {values.shape}")
    if values.shape[0] == 0:
        raise ValueError("empty matrix")
    if not np.all(np.isfinite(values)):
        raise ValueError("weights must be finite")
    return np.ascontiguousarray(values, dtype=np.float64)


def km_match(W) -> PerfectMatching:
    values = _weight_values(W)
    assignment = _kernels.km_assign(values)
    total = float(values[np.arange(len(assignment)), assignment].sum())
    return PerfectMatching(tuple(int(a) for a in assignment), total)


def km_weights(Ws: np.ndarray) -> np.ndarray:
    """Optimal matching weight for a stack of square matrices (B, T, T)."""
    Ws = np.ascontiguousarray(Ws, dtype=np.float64)
    if Ws.ndim != 3 or Ws.shape[1] != Ws.shape[2] or Ws.shape[1] == 0:
        raise ValueError("expected a non-empty (B, T, T) stack")
    return _kernels.km_weight_batch(Ws)


def video_similarity_km(S, Q) -> float:
    ts, tq = as_frames(S).shape[0], as_frames(Q).shape[0]
    if ts != tq:
        raise ValueError(f"perfect matching needs equal lengths, got T_s={ts}, T_q={tq}")
    return km_match(frame_similarity_matrix(S, Q)).total_weight


def km_loss(similarities, true_class: int) -> float:
    return softmax_xent(similarities, true_class)


def km_loss_grad(similarities, true_class: int) -> np.ndarray:
    """d km_loss / d similarities = softmax(s) - onehot."""
    return softmax_xent_grad(_check_target(similarities, true_class), true_class)
