"""Ordered temporal matching: DTW video distance and its cross-entropy loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .simkernels import CostMatrix, MatrixKind, frame_distance_matrix


@dataclass(frozen=True)
class AlignmentPath:
    steps: tuple[tuple[int, int], ...]
    total_cost: float

    def to_csv(self, D) -> str:
        values = D.values if isinstance(D, CostMatrix) else np.asarray(D)
        return "".join(f"{l},{m},{float(values[l, m])!r}\n" for l, m in self.steps)


def _distance_values(D) -> np.ndarray:
    if isinstance(D, CostMatrix):
        if D.kind is not MatrixKind.DISTANCE:
            raise ValueError("dtw expects a distance matrix")
        values = D.values
    else:
        values = np.asarray(D, dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise ValueError("empty matrix")
    if not np.all(np.isfinite(values)):
        raise ValueError("cost matrix entries must be finite")
    return np.ascontiguousarray(values, dtype=np.float64)


def dtw(D) -> AlignmentPath:
    """Minimum-cost monotone path from (0, 0) to (T_s-1, T_q-1).

    Steps are (1,1), (0,1), (1,0); DP ties prefer them in that order.
    """
    path, cost = _kernels.dtw_path(_distance_values(D))
    return AlignmentPath(tuple((int(l), int(m)) for l, m in path), float(cost))


def dtw_costs(Ds: np.ndarray) -> np.ndarray:
    """DTW cost for a stack of equally shaped distance matrices (B, T_s, T_q)."""
    Ds = np.ascontiguousarray(Ds, dtype=np.float64)
    if Ds.ndim != 3 or Ds.shape[1] == 0 or Ds.shape[2] == 0:
        raise ValueError("expected a non-empty (B, T_s, T_q) stack")
    return _kernels.dtw_cost_batch(Ds)


def video_distance_ota(S, Q) -> float:
    return dtw(frame_distance_matrix(S, Q)).total_cost


def _check_target(values, true_class):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("expected a non-empty vector")
    if not 0 <= true_class < values.size:
        raise IndexError(f"true_class {true_class} out of range for N={values.size}")
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    return values


def softmax_xent(logits, true_class) -> float:
    """-log softmax(logits)[true_class], max-shifted."""
    z = _check_target(logits, true_class)
    shift = z.max()
    return float(shift + np.log(np.exp(z - shift).sum()) - z[true_class])


def softmax_xent_grad(logits, true_class) -> np.ndarray:
    z = _check_target(logits, true_class)
    p = np.exp(z - z.max())
    p /= p.sum()
    p[true_class] -= 1.0
    return p


def ota_loss(distances, true_class: int) -> float:
    """Cross-entropy over negated video distances."""
    return softmax_xent(-_check_target(distances, true_class), true_class)


def ota_loss_grad(distances, true_class: int) -> np.ndarray:
    """d ota_loss / d distances = onehot - softmax(-d)."""
    return -softmax_xent_grad(-_check_target(distances, true_class), true_class)
