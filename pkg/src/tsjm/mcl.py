"""Multi-modal contrastive learning: residual bottleneck adapter, batched
cross-attention similarity and symmetric InfoNCE, each with its backward pass.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .featurestore import BadMagicError, ChecksumError, FsetError, TruncatedPayloadError
from .simkernels import as_frames, cross_attention_similarity

DEFAULT_TAU = 0.1


@dataclass(frozen=True, eq=False)
class AdapterParams:
    W_down: np.ndarray
    b_down: np.ndarray
    W_up: np.ndarray
    b_up: np.ndarray

    def __post_init__(self):
        for name in ("W_down", "b_down", "W_up", "b_up"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        D, B = self.W_down.shape
        if self.b_down.shape != (B,) or self.W_up.shape != (B, D) or self.b_up.shape != (D,):
            raise ValueError("inconsistent adapter parameter shapes")
        if not all(np.all(np.isfinite(a)) for a in self.blocks()):
            raise ValueError("adapter parameters must be finite")

    @property
    def dim(self) -> int:
        return self.W_down.shape[0]

    @property
    def bottleneck(self) -> int:
        return self.W_down.shape[1]

    def blocks(self):
        return (self.W_down, self.b_down, self.W_up, self.b_up)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.blocks()])

    @classmethod
    def from_flat(cls, vec, dim, bottleneck) -> AdapterParams:
        D, B = dim, bottleneck
        sizes = [D * B, B, B * D, D]
        parts = np.split(np.asarray(vec, dtype=np.float64), np.cumsum(sizes)[:-1])
        return cls(parts[0].reshape(D, B), parts[1], parts[2].reshape(B, D), parts[3])

    def __eq__(self, other):
        if not isinstance(other, AdapterParams):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.blocks(), other.blocks()))

    __hash__ = None


def init_adapter(dim: int, bottleneck: int | None = None, rng=None) -> AdapterParams:
    """Random down-projection with a zero up-projection, i.e. the identity map."""
    B = bottleneck if bottleneck is not None else max(1, dim // 4)
    if not 1 <= B < dim:
        raise ValueError(f"bottleneck must satisfy 1 <= B < D, got B={B}, D={dim}")
    rng = np.random.default_rng(rng)
    return AdapterParams(
        rng.standard_normal((dim, B)) * np.sqrt(2.0 / dim),
        np.zeros(B),
        np.zeros((B, dim)),
        np.zeros(dim),
    )


@dataclass(frozen=True)
class Adapters:
    rgb: AdapterParams
    flow: AdapterParams

    def __getitem__(self, modality) -> AdapterParams:
        return self.rgb if str(getattr(modality, "value", modality)) == "rgb" else self.flow


def init_adapters(dim: int, bottleneck: int | None = None, seed=0) -> Adapters:
    rng = np.random.default_rng(seed)
    return Adapters(init_adapter(dim, bottleneck, rng), init_adapter(dim, bottleneck, rng))


def adapter_forward(x, p: AdapterParams) -> np.ndarray:
    """x + relu(x W_down + b_down) W_up + b_up over the last axis of x."""
    x = as_frames(x)
    if x.shape[-1] != p.dim:
        raise ValueError(f"dimension mismatch: input D={x.shape[-1]}, adapter D={p.dim}")
    h = np.maximum(x @ p.W_down + p.b_down, 0.0)
    return x + h @ p.W_up + p.b_up


def adapter_backward(x, p: AdapterParams, upstream) -> tuple[np.ndarray, AdapterParams]:
    """Gradients of <upstream, adapter_forward(x, p)> w.r.t. x and p.

    Leading axes of x (frames, batch, ...) are summed over for the parameter
    gradients. The relu subgradient at 0 is 0.
    """
    x = as_frames(x)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != x.shape:
        raise ValueError(f"shape mismatch: upstream {g.shape} vs input {x.shape}")
    if x.shape[-1] != p.dim:
        raise ValueError(f"dimension mismatch: input D={x.shape[-1]}, adapter D={p.dim}")
    z = x @ p.W_down + p.b_down
    h = np.maximum(z, 0.0)
    gz = (g @ p.W_up.T) * (z > 0)
    x2, g2, h2, gz2 = (a.reshape(-1, a.shape[-1]) for a in (x, g, h, gz))
    grads = AdapterParams(x2.T @ gz2, gz2.sum(0), h2.T @ g2, g2.sum(0))
    return g + gz @ p.W_down.T, grads


# ------------------------------------------------- batched cross-attention


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_attention_matrix(X: np.ndarray, Y: np.ndarray):
    """Entry (i, j) = cross_attention_similarity(X[i], Y[j]), for stacks of
    equally long sequences X (k, T, D) and Y (k', T', D).

    Returns the matrix and a cache for :func:`cross_attention_backward`.
    The result is not clamped, so it stays differentiable.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[-1] != Y.shape[-1]:
        raise ValueError("dimension mismatch")
    scale = np.sqrt(X.shape[-1])
    cx, cy = X.mean(axis=1), Y.mean(axis=1)
    wx = _softmax(np.einsum("itd,jd->ijt", X, cy) / scale)
    wy = _softmax(np.einsum("jtd,id->ijt", Y, cx) / scale)
    px = np.einsum("ijt,itd->ijd", wx, X)
    py = np.einsum("ijt,jtd->ijd", wy, Y)
    nx = np.linalg.norm(px, axis=-1)
    ny = np.linalg.norm(py, axis=-1)
    if np.any(nx == 0) or np.any(ny == 0):
        raise ValueError("undefined cross-attention similarity: zero-norm pooled vector")
    sim = np.einsum("ijd,ijd->ij", px, py) / (nx * ny)
    cache = (X, Y, scale, cx, cy, wx, wy, px, py, nx, ny, sim)
    return sim, cache


def cross_attention_backward(cache, G: np.ndarray):
    X, Y, scale, cx, cy, wx, wy, px, py, nx, ny, sim = cache
    G = np.asarray(G, dtype=np.float64)
    inv = (G / (nx * ny))[..., None]
    dpx = inv * py - (G * sim / nx**2)[..., None] * px
    dpy = inv * px - (G * sim / ny**2)[..., None] * py

    dX = np.einsum("ijt,ijd->itd", wx, dpx)
    dwx = np.einsum("ijd,itd->ijt", dpx, X)
    dax = wx * (dwx - (wx * dwx).sum(-1, keepdims=True)) / scale
    dX += np.einsum("ijt,jd->itd", dax, cy)
    dcy = np.einsum("ijt,itd->jd", dax, X)

    dY = np.einsum("ijt,ijd->jtd", wy, dpy)
    dwy = np.einsum("ijd,jtd->ijt", dpy, Y)
    day = wy * (dwy - (wy * dwy).sum(-1, keepdims=True)) / scale
    dY += np.einsum("ijt,id->jtd", day, cx)
    dcx = np.einsum("ijt,jtd->id", day, Y)

    dX += dcx[:, None, :] / X.shape[1]
    dY += dcy[:, None, :] / Y.shape[1]
    return dX, dY


@dataclass(frozen=True)
class ContrastiveBatch:
    rgb: tuple
    flow: tuple
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if len(self.rgb) < 1 or len(self.rgb) != len(self.flow):
            raise ValueError("need k >= 1 (rgb, flow) pairs")
        if not self.tau > 0:
            raise ValueError("temperature must be > 0")


def _stack(seqs):
    arrs = [as_frames(s) for s in seqs]
    if len({a.shape for a in arrs}) != 1:
        return None
    return np.stack(arrs)


def mcl_similarity_matrix(batch: ContrastiveBatch) -> np.ndarray:
    """k x k cross-modal similarities; diagonal entries are the positive pairs."""
    X, Y = _stack(batch.rgb), _stack(batch.flow)
    if X is None or Y is None:
        return np.array([[cross_attention_similarity(r, f) for f in batch.flow] for r in batch.rgb])
    sim, _ = cross_attention_matrix(X, Y)
    return np.clip(sim, -1.0, 1.0)


def _check_sim(sim, tau):
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1] or sim.shape[0] == 0:
        raise ValueError(f"non-square similarity matrix {sim.shape}")
    if not tau > 0:
        raise ValueError("temperature must be > 0")
    if not np.all(np.isfinite(sim)):
        raise ValueError("similarities must be finite")
    return sim


def _lse(z, axis):
    m = z.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def infonce_loss(sim, tau: float = DEFAULT_TAU) -> float:
    """Symmetric InfoNCE: rgb->flow and flow->rgb cross-entropy, positives on the diagonal."""
    z = _check_sim(sim, tau) / tau
    k = z.shape[0]
    diag = np.diag(z)
    return float(((_lse(z, 1) - diag).sum() + (_lse(z, 0) - diag).sum()) / (2 * k))


def infonce_grad(sim, tau: float = DEFAULT_TAU) -> np.ndarray:
    z = _check_sim(sim, tau) / tau
    k = z.shape[0]
    p_row = np.exp(z - _lse(z, 1)[:, None])
    p_col = np.exp(z - _lse(z, 0)[None, :])
    return (p_row + p_col - 2 * np.eye(k)) / (2 * k * tau)


# ------------------------------------------------------- ADPT checkpoints

ADPT_MAGIC = b"ADPT"
_ADPT_HEAD = struct.Struct("<4sII")


def encode_adapter(p: AdapterParams) -> bytes:
    body = _ADPT_HEAD.pack(ADPT_MAGIC, p.bottleneck, p.dim) + b"".join(
        np.ascontiguousarray(a, dtype="<f4").tobytes() for a in p.blocks()
    )
    return body + struct.pack("<I", zlib.crc32(body))


def decode_adapter(data: bytes, offset: int = 0) -> tuple[AdapterParams, int]:
    if data[offset : offset + 4] != ADPT_MAGIC:
        raise BadMagicError("bad magic")
    if offset + _ADPT_HEAD.size > len(data):
        raise TruncatedPayloadError("truncated adapter header")
    _, B, D = _ADPT_HEAD.unpack_from(data, offset)
    n = 2 * D * B + B + D
    end = offset + _ADPT_HEAD.size + 4 * n
    if end + 4 > len(data):
        raise TruncatedPayloadError("truncated adapter payload")
    (crc,) = struct.unpack_from("<I", data, end)
    if crc != zlib.crc32(data[offset:end]):
        raise ChecksumError("checksum mismatch")
    vec = np.frombuffer(data, dtype="<f4", count=n, offset=offset + _ADPT_HEAD.size)
    if not np.all(np.isfinite(vec)):
        raise FsetError("non-finite adapter parameters")
    return AdapterParams.from_flat(vec.astype(np.float64), D, B), end + 4


def save_adapters(adapters: Adapters, path) -> None:
    Path(path).write_bytes(encode_adapter(adapters.rgb) + encode_adapter(adapters.flow))


def load_adapters(path) -> Adapters:
    data = Path(path).read_bytes()
    rgb, off = decode_adapter(data, 0)
    flow, off = decode_adapter(data, off)
    if off != len(data):
        raise FsetError("trailing bytes after adapter sections")
    return Adapters(rgb, flow)
