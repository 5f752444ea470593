"""Feature-sequence data model, the FSET binary format and synthetic data.

Videos are stored as paired RGB / flow frame-feature matrices. Values are
held as float32 so that a save/load round trip is bit-exact; all matching
code upcasts to float64.
"""

from __future__ import annotations

import enum
import itertools
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FSET"
VERSION = 1
_HEADER = struct.Struct("<4sHII")
_RECORD = struct.Struct("<III")
_CRC = struct.Struct("<I")
MIN_FRAME_NORM = 1e-8


class FsetError(ValueError):
    """Base class for feature-store format and invariant errors."""


class BadMagicError(FsetError):
    pass


class VersionMismatchError(FsetError):
    pass


class TruncatedPayloadError(FsetError):
    pass


class ChecksumError(FsetError):
    pass


class NaNValuesError(FsetError):
    pass


class InvariantViolation(FsetError):
    pass


class Modality(enum.Enum):
    RGB = "rgb"
    FLOW = "flow"


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """T x D frame features of one video in one modality."""

    frames: np.ndarray
    modality: Modality = Modality.RGB

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise InvariantViolation(f"frames must be T x D with T, D >= 1, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise NaNValuesError("non-finite frame values")
        if np.any(np.linalg.norm(frames.astype(np.float64), axis=1) < MIN_FRAME_NORM):
            raise InvariantViolation("zero frame vector")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return (
            self.modality == other.modality
            and self.frames.shape == other.frames.shape
            and self.frames.tobytes() == other.frames.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True)
class VideoRecord:
    video_id: int
    class_id: int
    rgb: FeatureSequence
    flow: FeatureSequence

    def __post_init__(self):
        if self.rgb.T != self.flow.T:
            raise InvariantViolation(f"video {self.video_id}: rgb.T={self.rgb.T} != flow.T={self.flow.T}")
        if self.rgb.D != self.flow.D:
            raise InvariantViolation(f"video {self.video_id}: rgb.D != flow.D")

    @property
    def T(self) -> int:
        return self.rgb.T

    def stream(self, modality: Modality | str) -> FeatureSequence:
        return self.rgb if Modality(modality) is Modality.RGB else self.flow


@dataclass(frozen=True)
class FeatureStore:
    records: tuple[VideoRecord, ...]
    num_classes: int
    dim: int
    by_class: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        if not records:
            raise InvariantViolation("empty store")
        members: list[list[int]] = [[] for _ in range(self.num_classes)]
        index = {}
        for pos, rec in enumerate(records):
            if rec.rgb.D != self.dim:
                raise InvariantViolation(f"video {rec.video_id}: dim {rec.rgb.D} != store dim {self.dim}")
            if not 0 <= rec.class_id < self.num_classes:
                raise InvariantViolation(f"video {rec.video_id}: class_id {rec.class_id} out of range")
            if rec.video_id in index:
                raise InvariantViolation(f"duplicate video_id {rec.video_id}")
            index[rec.video_id] = pos
            members[rec.class_id].append(pos)
        empty = [c for c, m in enumerate(members) if not m]
        if empty:
            raise InvariantViolation(f"classes without records: {empty[:5]}")
        object.__setattr__(self, "by_class", tuple(tuple(m) for m in members))
        object.__setattr__(self, "_index", index)

    def __len__(self):
        return len(self.records)

    def get(self, video_id: int) -> VideoRecord:
        try:
            return self.records[self._index[video_id]]
        except KeyError:
            raise KeyError(f"unknown video id {video_id}") from None

    def subset(self, positions) -> FeatureStore:
        """Store made of the records at ``positions``, class ids compacted."""
        recs = [self.records[p] for p in positions]
        remap = {c: i for i, c in enumerate(sorted({r.class_id for r in recs}))}
        recs = [VideoRecord(r.video_id, remap[r.class_id], r.rgb, r.flow) for r in recs]
        return FeatureStore(tuple(recs), len(remap), self.dim)


def merge_stores(*stores: FeatureStore) -> FeatureStore:
    """Concatenate stores, offsetting class ids and video ids so both stay unique."""
    recs = []
    class_off = 0
    vid_off = 0
    for s in stores:
        if s.dim != stores[0].dim:
            raise InvariantViolation("cannot merge stores of different dim")
        for r in s.records:
            recs.append(VideoRecord(r.video_id + vid_off, r.class_id + class_off, r.rgb, r.flow))
        class_off += s.num_classes
        vid_off = max(r.video_id for r in recs) + 1
    return FeatureStore(tuple(recs), class_off, stores[0].dim)


# ---------------------------------------------------------------- FSET I/O


def _u32(value, what):
    if not 0 <= value < 2**32:
        raise InvariantViolation(f"{what}={value} does not fit in u32")
    return value


def encode_store(store: FeatureStore) -> bytes:
    if not isinstance(store, FeatureStore) or not store.records:
        raise InvariantViolation("empty store")
    parts = [_HEADER.pack(MAGIC, VERSION, _u32(len(store.records), "num_records"), _u32(store.dim, "dim"))]
    for r in store.records:
        parts.append(_RECORD.pack(_u32(r.video_id, "video_id"), _u32(r.class_id, "class_id"), _u32(r.T, "T")))
        parts.append(np.ascontiguousarray(r.rgb.frames, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(r.flow.frames, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def decode_store(data: bytes) -> FeatureStore:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("bad magic")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError("truncated header")
    _, version, n_records, dim = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise VersionMismatchError(f"version mismatch: file has {version}, expected {VERSION}")
    if dim < 1:
        raise InvariantViolation("invariant violation: dim must be >= 1")
    off = _HEADER.size
    raw = []
    for _ in range(n_records):
        if off + _RECORD.size > len(data):
            raise TruncatedPayloadError("truncated payload")
        vid, cid, T = _RECORD.unpack_from(data, off)
        off += _RECORD.size
        if T < 1:
            raise InvariantViolation(f"invariant violation: video {vid} declares T={T}")
        nbytes = T * dim * 4
        if off + 2 * nbytes > len(data):
            raise TruncatedPayloadError("truncated payload")
        rgb = np.frombuffer(data, dtype="<f4", count=T * dim, offset=off).reshape(T, dim)
        flow = np.frombuffer(data, dtype="<f4", count=T * dim, offset=off + nbytes).reshape(T, dim)
        off += 2 * nbytes
        raw.append((vid, cid, rgb, flow))
    if off + _CRC.size > len(data):
        raise TruncatedPayloadError("truncated payload: missing checksum")
    if off + _CRC.size != len(data):
        raise FsetError(f"{len(data) - off - _CRC.size} trailing bytes after checksum")
    (crc,) = _CRC.unpack_from(data, off)
    if crc != zlib.crc32(data[:off]):
        raise ChecksumError("checksum mismatch")
    if not raw:
        raise InvariantViolation("invariant violation: empty store")
    records = []
    for vid, cid, rgb, flow in raw:
        if not (np.all(np.isfinite(rgb)) and np.all(np.isfinite(flow))):
            raise NaNValuesError(f"video {vid}: non-finite values")
        records.append(
            VideoRecord(vid, cid, FeatureSequence(rgb.copy(), Modality.RGB), FeatureSequence(flow.copy(), Modality.FLOW))
        )
    num_classes = max(r.class_id for r in records) + 1
    return FeatureStore(tuple(records), num_classes, dim)


def save_store(store: FeatureStore, path) -> None:
    data = encode_store(store)
    Path(path).write_bytes(data)


def load_store(path) -> FeatureStore:
    return decode_store(Path(path).read_bytes())


# ---------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic misalignment benchmark.

    Each class is an ordered list of ``num_subactions`` unit anchors. A video
    optionally permutes that order, stretches every sub-action by a factor from
    ``speed_warp_range`` and is resampled to ``frames`` frames. RGB frames are
    the anchors plus noise; flow frames are a fixed random linear map applied
    to the anchor change at each frame (the first sub-action moves from rest).

    With ``anchor_pool > 0`` classes are distinct ordered selections from a
    shared pool of that many primitives, so some classes differ only in the
    order of their sub-actions.
    """

    num_classes: int = 24
    videos_per_class: int = 20
    frames: int = 8
    dim: int = 16
    num_subactions: int = 3
    speed_warp_range: tuple[float, float] = (0.5, 2.0)
    permute_subactions: bool = False
    noise_sigma: float = 0.1
    seed: int = 0
    anchor_pool: int = 0

    def __post_init__(self):
        lo, hi = self.speed_warp_range
        checks = [
            (self.num_classes >= 1, "num_classes must be >= 1"),
            (self.videos_per_class >= 1, "videos_per_class must be >= 1"),
            (self.frames >= 1, "frames must be >= 1"),
            (self.dim >= 1, "dim must be >= 1"),
            (1 <= self.num_subactions <= self.frames, "num_subactions must be in [1, frames]"),
            (0 < lo <= hi < np.inf, "speed_warp_range must be a finite interval inside (0, inf)"),
            (self.noise_sigma >= 0, "noise_sigma must be >= 0"),
            (0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer"),
            (self.anchor_pool == 0 or self.anchor_pool >= self.num_subactions, "anchor_pool must be 0 or >= num_subactions"),
            (
                self.anchor_pool == 0 or math.perm(self.anchor_pool, self.num_subactions) >= self.num_classes,
                "anchor_pool too small for num_classes distinct ordered classes",
            ),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


def _unit_rows(rng, n, d):
    while True:
        v = rng.standard_normal((n, d))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        if np.all(norms > 1e-6):
            return v / norms


def _segment_of_frames(durations, T):
    """Sub-action index covering each of T evenly spaced sample times."""
    edges = np.cumsum(durations)
    times = (np.arange(T) + 0.5) / T * edges[-1]
    return np.minimum(np.searchsorted(edges, times, side="right"), len(durations) - 1)


def _noisy(rng, clean, sigma):
    out = clean + sigma * rng.standard_normal(clean.shape)
    for t in range(out.shape[0]):
        tries = 0
        while np.linalg.norm(out[t].astype(np.float32)) < MIN_FRAME_NORM:
            if sigma == 0 or tries > 100:
                raise ValueError("cannot generate a non-zero frame; increase noise_sigma")
            out[t] = clean[t] + sigma * rng.standard_normal(clean.shape[1])
            tries += 1
    return out


def gen_synthetic(cfg: SynthConfig) -> FeatureStore:
    rng = np.random.default_rng(cfg.seed)
    S, T, D = cfg.num_subactions, cfg.frames, cfg.dim
    if cfg.anchor_pool:
        pool = _unit_rows(rng, cfg.anchor_pool, D)
        tuples = list(itertools.permutations(range(cfg.anchor_pool), S))
        chosen = rng.choice(len(tuples), size=cfg.num_classes, replace=False)
        anchors = [pool[list(tuples[i])] for i in chosen]
    else:
        anchors = [_unit_rows(rng, S, D) for _ in range(cfg.num_classes)]
    flow_map = rng.standard_normal((D, D)) / np.sqrt(D)
    lo, hi = cfg.speed_warp_range
    records = []
    vid = 0
    for c in range(cfg.num_classes):
        for _ in range(cfg.videos_per_class):
            order = rng.permutation(S) if cfg.permute_subactions else np.arange(S)
            # log-uniform so that a factor and its reciprocal are equally likely
            warp = np.exp(rng.uniform(np.log(lo), np.log(hi), size=S))
            seg = _segment_of_frames(warp, T)
            seq = anchors[c][order]
            prev = np.vstack([np.zeros((1, D)), seq[:-1]])
            rgb_clean = seq[seg]
            flow_clean = (seq - prev)[seg] @ flow_map.T
            rgb = _noisy(rng, rgb_clean, cfg.noise_sigma)
            flow = _noisy(rng, flow_clean, cfg.noise_sigma)
            records.append(
                VideoRecord(
                    vid,
                    c,
                    FeatureSequence(rgb.astype(np.float32), Modality.RGB),
                    FeatureSequence(flow.astype(np.float32), Modality.FLOW),
                )
            )
            vid += 1
    return FeatureStore(tuple(records), cfg.num_classes, D)


def gen_noise_store(num_classes: int, videos_per_class: int, frames: int, dim: int, seed: int) -> FeatureStore:
    """Labels attached to pure Gaussian features: nothing to learn or match."""
    rng = np.random.default_rng(seed)
    records = []
    for vid in range(num_classes * videos_per_class):
        rgb = rng.standard_normal((frames, dim)).astype(np.float32)
        flow = rng.standard_normal((frames, dim)).astype(np.float32)
        records.append(
            VideoRecord(vid, vid // videos_per_class, FeatureSequence(rgb, Modality.RGB), FeatureSequence(flow, Modality.FLOW))
        )
    return FeatureStore(tuple(records), num_classes, dim)
