"""N-way K-shot episodes, four-branch scoring, score fusion and evaluation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import bgm, otm
from .featurestore import FeatureStore, Modality, VideoRecord
from .mcl import Adapters, adapter_forward
from .simkernels import as_frames

BRANCHES = ("ota_rgb", "ota_flow", "km_rgb", "km_flow")


class EpisodeError(ValueError):
    """The store cannot supply the requested episode."""


@dataclass(frozen=True)
class Episode:
    classes: tuple[int, ...]
    support: tuple[tuple[VideoRecord, ...], ...]
    queries: tuple[tuple[VideoRecord, int], ...]

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes) or len(self.support) != len(self.classes):
            raise EpisodeError("episode needs N distinct classes, one support group each")
        if len({len(g) for g in self.support}) != 1 or len(self.support[0]) < 1:
            raise EpisodeError("every class needs the same K >= 1 support records")
        support_ids = {r.video_id for g in self.support for r in g}
        if any(r.video_id in support_ids for r, _ in self.queries):
            raise EpisodeError("a query video also appears in the support set")
        if any(not 0 <= label < self.way for _, label in self.queries):
            raise EpisodeError("query label outside [0, N)")

    @property
    def way(self) -> int:
        return len(self.classes)

    @property
    def shot(self) -> int:
        return len(self.support[0])


def sample_episode(store: FeatureStore, n_way: int, k_shot: int, queries_per_class: int = 1, seed=0) -> Episode:
    if n_way < 1 or k_shot < 1 or queries_per_class < 0:
        raise EpisodeError("need n_way >= 1, k_shot >= 1, queries_per_class >= 0")
    need = k_shot + queries_per_class
    eligible = [c for c, members in enumerate(store.by_class) if len(members) >= need]
    if len(eligible) < n_way:
        raise EpisodeError(
            f"store has {len(eligible)} classes with >= {need} videos, {n_way}-way {k_shot}-shot needs {n_way}"
        )
    rng = np.random.default_rng(seed)
    classes = rng.choice(eligible, size=n_way, replace=False)
    support, queries = [], []
    for label, c in enumerate(classes):
        picks = rng.choice(store.by_class[c], size=need, replace=False)
        support.append(tuple(store.records[p] for p in picks[:k_shot]))
        queries.extend((store.records[p], label) for p in picks[k_shot:])
    return Episode(tuple(int(c) for c in classes), tuple(support), tuple(queries))


# ----------------------------------------------------------------- scoring


def _adapted(seq, modality: Modality, adapters: Adapters | None) -> np.ndarray:
    x = as_frames(seq)
    if adapters is not None:
        x = adapter_forward(x, adapters[modality])
    return x


def _unit_frames(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("undefined cosine: zero-norm frame")
    return x / norms


def _branch_scores(sup: np.ndarray, qry: np.ndarray, n_way: int):
    """(ota, km) score arrays of shape (Q, N) from unit-norm stacks.

    sup is (N*K, T, D) grouped by class, qry is (Q, T, D).
    """
    cos = np.clip(np.einsum("std,qmd->qstm", sup, qry), -1.0, 1.0)
    Q, NK, T, _ = cos.shape
    flat = cos.reshape(Q * NK, T, T)
    dist = otm.dtw_costs(1.0 - flat).reshape(Q, n_way, -1).mean(axis=2)
    if flat.shape[1] != flat.shape[2]:
        raise ValueError("perfect matching needs equal lengths")
    sim = bgm.km_weights(flat).reshape(Q, n_way, -1).mean(axis=2)
    return -dist, sim


def _branch_scores_loop(support, queries, modality, adapters):
    n_way = len(support)
    ota = np.empty((len(queries), n_way))
    km = np.empty_like(ota)
    for qi, q in enumerate(queries):
        qx = _adapted(q.stream(modality), modality, adapters)
        for c, group in enumerate(support):
            sx = [_adapted(r.stream(modality), modality, adapters) for r in group]
            ota[qi, c] = -np.mean([otm.video_distance_ota(s, qx) for s in sx])
            km[qi, c] = np.mean([bgm.video_similarity_km(s, qx) for s in sx])
    return ota, km


def query_scores(episode: Episode, queries, adapters: Adapters | None = None) -> np.ndarray:
    """Four-branch class scores for each query: array (4, Q, N), higher is better."""
    queries = list(queries)
    out = np.empty((4, len(queries), episode.way))
    support_recs = [r for g in episode.support for r in g]
    uniform = len({r.T for r in support_recs} | {q.T for q in queries}) == 1
    for m, modality in enumerate((Modality.RGB, Modality.FLOW)):
        if uniform:
            sup = _unit_frames(np.stack([_adapted(r.stream(modality), modality, adapters) for r in support_recs]))
            qry = _unit_frames(np.stack([_adapted(q.stream(modality), modality, adapters) for q in queries]))
            ota, km = _branch_scores(sup, qry, episode.way)
        else:
            ota, km = _branch_scores_loop(episode.support, queries, modality, adapters)
        out[m] = ota
        out[2 + m] = km
    return out


def class_prototype_scores(episode: Episode, adapters: Adapters | None, query: VideoRecord):
    """(Score_ota_rgb, Score_ota_flow, Score_km_rgb, Score_km_flow), each an N-vector.

    OTA scores are negated mean DTW distances to a class's K support videos;
    KM scores are mean matching similarities.
    """
    s = query_scores(episode, [query], adapters)[:, 0, :]
    return tuple(s)


@dataclass(frozen=True)
class FusionWeights:
    ota_rgb: float = 0.25
    ota_flow: float = 0.25
    km_rgb: float = 0.25
    km_flow: float = 0.25

    def __post_init__(self):
        w = self.as_array()
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("fusion weights must be finite and >= 0")
        if not np.any(w > 0):
            raise ValueError("at least one fusion weight must be > 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.ota_rgb, self.ota_flow, self.km_rgb, self.km_flow], dtype=np.float64)

    @classmethod
    def parse(cls, text: str) -> FusionWeights:
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 4:
            raise ValueError("expected four comma-separated weights")
        return cls(*parts)


def znormalize(v: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance along the last axis; (near-)constant rows map to 0."""
    v = np.asarray(v, dtype=np.float64)
    mean = v.mean(axis=-1, keepdims=True)
    std = v.std(axis=-1, keepdims=True)
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    return np.where(flat, 0.0, (v - mean) / np.where(flat, 1.0, std))


def fuse_scores(scores, weights: FusionWeights) -> np.ndarray:
    """Weighted sum of the z-normalized branch scores.

    ``scores`` is (4, N) or (4, ..., N); the branch axis comes first.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.shape[0] != 4:
        raise ValueError("expected four score vectors")
    if not isinstance(weights, FusionWeights):
        weights = FusionWeights(*weights)
    return np.tensordot(weights.as_array(), znormalize(s), axes=1)


def classify(fused) -> int:
    fused = np.asarray(fused)
    if fused.size == 0:
        raise ValueError("cannot classify an empty score vector")
    return int(np.argmax(fused))  # argmax returns the first maximum


# -------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class EvalConfig:
    n_way: int = 5
    k_shot: int = 1
    queries_per_class: int = 1
    episodes: int = 10000
    weights: FusionWeights = field(default_factory=FusionWeights)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.queries_per_class < 1:
            raise ValueError("queries_per_class must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class EvalReport:
    mean_accuracy: float
    ci95_halfwidth: float
    episodes: int
    branch_accuracies: dict
    branch_ci95: dict
    config: dict
    per_episode: np.ndarray = field(repr=False, default=None)

    def to_json(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95_halfwidth,
            "episodes": self.episodes,
            "branch_accuracies": self.branch_accuracies,
            "branch_ci95": self.branch_ci95,
            "config": self.config,
        }

    def per_episode_csv(self) -> str:
        names = BRANCHES + ("fused",)
        rows = ["episode," + ",".join(names)]
        for i, row in enumerate(self.per_episode):
            rows.append(f"{i}," + ",".join(repr(float(v)) for v in row))
        return "\n".join(rows) + "\n"


def episode_seed(seed: int, index: int) -> list[int]:
    return [int(seed), int(index)]


class _Bank:
    """Unit-normalised (and optionally adapted) features for every record."""

    def __init__(self, store: FeatureStore, adapters: Adapters | None):
        self.store = store
        self.uniform = len({r.T for r in store.records}) == 1
        self.frames = {}
        if self.uniform:
            for modality in (Modality.RGB, Modality.FLOW):
                x = np.stack([as_frames(r.stream(modality)) for r in store.records])
                if adapters is not None:
                    x = adapter_forward(x, adapters[modality])
                self.frames[modality] = _unit_frames(x)

    def scores(self, episode: Episode, adapters) -> np.ndarray:
        if not self.uniform:
            return query_scores(episode, [q for q, _ in episode.queries], adapters)
        idx = self.store._index
        sup_pos = [idx[r.video_id] for g in episode.support for r in g]
        qry_pos = [idx[q.video_id] for q, _ in episode.queries]
        out = np.empty((4, len(qry_pos), episode.way))
        for m, modality in enumerate((Modality.RGB, Modality.FLOW)):
            f = self.frames[modality]
            out[m], out[2 + m] = _branch_scores(f[sup_pos], f[qry_pos], episode.way)
        return out


def _run_episode(store, bank, cfg: EvalConfig, weights, adapters, index) -> np.ndarray:
    ep = sample_episode(store, cfg.n_way, cfg.k_shot, cfg.queries_per_class, episode_seed(cfg.seed, index))
    scores = bank.scores(ep, adapters)
    labels = np.array([label for _, label in ep.queries])
    preds = np.concatenate([scores.argmax(axis=-1), fuse_scores(scores, weights).argmax(axis=-1)[None]])
    return (preds == labels).mean(axis=1)


def _ci95(acc: np.ndarray) -> float:
    if len(acc) < 2:
        return 0.0
    return float(1.96 * acc.std(ddof=1) / np.sqrt(len(acc)))


def evaluate(store: FeatureStore, cfg: EvalConfig = EvalConfig(), adapters: Adapters | None = None) -> EvalReport:
    """Mean accuracy over ``cfg.episodes`` episodes, each seeded by (seed, index).

    Results are gathered by episode index, so they do not depend on ``threads``.
    """
    # fail fast on infeasible configurations
    sample_episode(store, cfg.n_way, cfg.k_shot, cfg.queries_per_class, episode_seed(cfg.seed, 0))
    bank = _Bank(store, adapters)
    per_episode = np.empty((cfg.episodes, 5))

    def work(chunk):
        for i in chunk:
            per_episode[i] = _run_episode(store, bank, cfg, cfg.weights, adapters, i)

    chunks = np.array_split(np.arange(cfg.episodes), max(1, min(cfg.episodes, cfg.threads * 4)))
    if cfg.threads == 1:
        for c in chunks:
            work(c)
    else:
        with ThreadPoolExecutor(cfg.threads) as pool:
            list(pool.map(work, chunks))

    names = BRANCHES + ("fused",)
    means = per_episode.mean(axis=0)
    config = asdict(cfg)
    config["weights"] = [float(w) for w in cfg.weights.as_array()]
    return EvalReport(
        mean_accuracy=float(means[4]),
        ci95_halfwidth=_ci95(per_episode[:, 4]),
        episodes=cfg.episodes,
        branch_accuracies={n: float(v) for n, v in zip(names, means)},
        branch_ci95={n: _ci95(per_episode[:, i]) for i, n in enumerate(names)},
        config=config,
        per_episode=per_episode,
    )


def nway_sweep(store: FeatureStore, cfg: EvalConfig, ways=range(5, 11), adapters=None) -> list[EvalReport]:
    return [evaluate(store, replace(cfg, n_way=n), adapters) for n in ways]
