"""Plain gradient-descent training of the two modality adapters.

Objective per minibatch:

    L = l_cl * InfoNCE(batch) + l_ota * (L_ota_rgb + L_ota_flow) + l_km * (L_km_rgb + L_km_flow)

The matching losses are averaged over the queries of one episode attached to
the minibatch. DTW paths and KM matchings are treated as constants when
differentiating (gradients flow through the selected frame pairs only).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .episodic import Episode, sample_episode
from .featurestore import FeatureStore, Modality
from .mcl import (
    DEFAULT_TAU,
    AdapterParams,
    Adapters,
    adapter_backward,
    adapter_forward,
    cross_attention_backward,
    cross_attention_matrix,
    infonce_grad,
    infonce_loss,
    init_adapters,
)
from .otm import ota_loss, ota_loss_grad
from .bgm import km_loss, km_loss_grad
from .simkernels import as_frames

log = logging.getLogger(__name__)

MODALITIES = (Modality.RGB, Modality.FLOW)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-5
    tau: float = DEFAULT_TAU
    lambdas: tuple[float, float, float] = (1.0, 1.0, 1.0)
    bottleneck: int | None = None
    n_way: int = 5
    k_shot: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.learning_rate >= 0 and np.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be >= 0")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        lam = np.asarray(self.lambdas, dtype=np.float64)
        if lam.shape != (3,) or np.any(lam < 0) or not np.any(lam > 0):
            raise ValueError("lambdas must be three values >= 0 with at least one > 0")


@dataclass
class TrainBatch:
    """Videos for the contrastive term plus an episode for the matching terms."""

    rgb: np.ndarray  # (k, T, D)
    flow: np.ndarray
    episode: Episode | None = None


@dataclass
class LossParts:
    total: float
    l_cl: float
    l_ota: float
    l_km: float
    structures: dict = field(default_factory=dict, repr=False)


def _zero_like(p: AdapterParams) -> AdapterParams:
    return AdapterParams(*(np.zeros_like(a) for a in p.blocks()))


def _add(a: AdapterParams, b: AdapterParams, scale=1.0) -> AdapterParams:
    return AdapterParams(*(x + scale * y for x, y in zip(a.blocks(), b.blocks())))


def _unit_backward(x, u, norms, du):
    """Gradient through u = x / |x| (row-wise)."""
    return (du - (du * u).sum(-1, keepdims=True) * u) / norms


def _matching_terms(sup, qry, labels, n_way, lam_ota, lam_km, frozen, key):
    """Matching losses and gradients for one modality.

    sup (N*K, T, D) and qry (Q, T, D) are adapted features. Returns
    (l_ota, l_km, d_sup, d_qry, structures).
    """
    sn = np.linalg.norm(sup, axis=-1, keepdims=True)
    qn = np.linalg.norm(qry, axis=-1, keepdims=True)
    U, V = sup / sn, qry / qn
    cos = np.einsum("std,qmd->qstm", U, V)
    Q, NK, T, Tq = cos.shape
    K = NK // n_way
    coef = np.zeros_like(cos)
    structures = {}
    l_ota = l_km = 0.0
    if lam_ota > 0:
        masks = np.zeros_like(cos)
        for q in range(Q):
            for s in range(NK):
                path = frozen.get((key, "dtw", q, s)) if frozen else None
                if path is None:
                    path, _ = _kernels.dtw_path(np.ascontiguousarray(1.0 - cos[q, s]))
                structures[(key, "dtw", q, s)] = path
                masks[q, s, path[:, 0], path[:, 1]] += 1.0
        dist = (masks * (1.0 - cos)).sum(axis=(2, 3)).reshape(Q, n_way, K).mean(axis=2)
        for q in range(Q):
            l_ota += ota_loss(dist[q], labels[q]) / Q
            g = np.repeat(ota_loss_grad(dist[q], labels[q]), K) / (K * Q)
            coef[q] -= lam_ota * g[:, None, None] * masks[q]
    if lam_km > 0:
        masks = np.zeros_like(cos)
        for q in range(Q):
            for s in range(NK):
                assign = frozen.get((key, "km", q, s)) if frozen else None
                if assign is None:
                    assign = _kernels.km_assign(np.ascontiguousarray(cos[q, s]))
                structures[(key, "km", q, s)] = assign
                masks[q, s, np.arange(T), assign] = 1.0
        sim = (masks * cos).sum(axis=(2, 3)).reshape(Q, n_way, K).mean(axis=2)
        for q in range(Q):
            l_km += km_loss(sim[q], labels[q]) / Q
            g = np.repeat(km_loss_grad(sim[q], labels[q]), K) / (K * Q)
            coef[q] += lam_km * g[:, None, None] * masks[q]
    dU = np.einsum("qstm,qmd->std", coef, V)
    dV = np.einsum("qstm,std->qmd", coef, U)
    return l_ota, l_km, _unit_backward(sup, U, sn, dU), _unit_backward(qry, V, qn, dV), structures


def _episode_arrays(ep: Episode, modality):
    sup = np.stack([as_frames(r.stream(modality)) for g in ep.support for r in g])
    qry = np.stack([as_frames(q.stream(modality)) for q, _ in ep.queries])
    return sup, qry


def loss_and_grad(batch: TrainBatch, adapters: Adapters, cfg: TrainConfig, frozen=None, need_grad=True):
    """Total loss of one minibatch and its gradient w.r.t. both adapters.

    ``frozen`` maps alignment keys to fixed DTW paths / KM assignments, as
    returned in ``LossParts.structures``; missing keys are recomputed.
    """
    lam_cl, lam_ota, lam_km = (float(v) for v in cfg.lambdas)
    grads = {m: _zero_like(adapters[m]) for m in MODALITIES}
    l_cl = l_ota = l_km = 0.0
    structures = {}

    if lam_cl > 0 and len(batch.rgb) > 0:
        xr = adapter_forward(batch.rgb, adapters.rgb)
        xf = adapter_forward(batch.flow, adapters.flow)
        sim, cache = cross_attention_matrix(xr, xf)
        l_cl = infonce_loss(sim, cfg.tau)
        if need_grad:
            dxr, dxf = cross_attention_backward(cache, lam_cl * infonce_grad(sim, cfg.tau))
            grads[Modality.RGB] = _add(grads[Modality.RGB], adapter_backward(batch.rgb, adapters.rgb, dxr)[1])
            grads[Modality.FLOW] = _add(grads[Modality.FLOW], adapter_backward(batch.flow, adapters.flow, dxf)[1])

    if (lam_ota > 0 or lam_km > 0) and batch.episode is not None:
        ep = batch.episode
        labels = [label for _, label in ep.queries]
        for m in MODALITIES:
            sup_raw, qry_raw = _episode_arrays(ep, m)
            sup = adapter_forward(sup_raw, adapters[m])
            qry = adapter_forward(qry_raw, adapters[m])
            lo, lk, dsup, dqry, st = _matching_terms(sup, qry, labels, ep.way, lam_ota, lam_km, frozen, m.value)
            l_ota += lo
            l_km += lk
            structures.update(st)
            if need_grad:
                grads[m] = _add(grads[m], adapter_backward(sup_raw, adapters[m], dsup)[1])
                grads[m] = _add(grads[m], adapter_backward(qry_raw, adapters[m], dqry)[1])

    total = lam_cl * l_cl + lam_ota * l_ota + lam_km * l_km
    parts = LossParts(total, l_cl, l_ota, l_km, structures)
    return parts, Adapters(grads[Modality.RGB], grads[Modality.FLOW])


def total_loss(batch: TrainBatch, adapters: Adapters, cfg: TrainConfig, frozen=None) -> float:
    return loss_and_grad(batch, adapters, cfg, frozen, need_grad=False)[0].total


def make_batches(store: FeatureStore, cfg: TrainConfig) -> list[TrainBatch]:
    """Fixed minibatches: one seeded shuffle of the store, chunked, each with
    its own seeded episode when a matching term is active."""
    rng = np.random.default_rng([cfg.seed, 0])
    order = rng.permutation(len(store))
    uses_matching = cfg.lambdas[1] > 0 or cfg.lambdas[2] > 0
    batches = []
    for b, start in enumerate(range(0, len(order), cfg.batch_size)):
        recs = [store.records[p] for p in order[start : start + cfg.batch_size]]
        rgb = np.stack([as_frames(r.rgb) for r in recs])
        flow = np.stack([as_frames(r.flow) for r in recs])
        ep = None
        if uses_matching:
            ep = sample_episode(store, min(cfg.n_way, store.num_classes), cfg.k_shot, 1, [cfg.seed, 1, b])
        batches.append(TrainBatch(rgb, flow, ep))
    return batches


@dataclass
class TrainResult:
    adapters: Adapters
    trajectory: list[dict]

    def trajectory_csv(self) -> str:
        rows = ["epoch,total,l_cl,l_ota,l_km"]
        for r in self.trajectory:
            rows.append(f"{r['epoch']},{r['total']!r},{r['l_cl']!r},{r['l_ota']!r},{r['l_km']!r}")
        return "\n".join(rows) + "\n"


def _epoch_loss(batches, adapters, cfg) -> dict:
    parts = [loss_and_grad(b, adapters, cfg, need_grad=False)[0] for b in batches]
    n = len(parts)
    return {
        "total": sum(p.total for p in parts) / n,
        "l_cl": sum(p.l_cl for p in parts) / n,
        "l_ota": sum(p.l_ota for p in parts) / n,
        "l_km": sum(p.l_km for p in parts) / n,
    }


def train(store: FeatureStore, cfg: TrainConfig, adapters: Adapters | None = None) -> TrainResult:
    """Per-minibatch gradient descent over fixed batches.

    ``trajectory[e]`` is the mean minibatch loss with the parameters reached
    after ``e`` epochs (``e = 0`` is the initialisation).
    """
    if adapters is None:
        adapters = init_adapters(store.dim, cfg.bottleneck, seed=[cfg.seed, 2])
    batches = make_batches(store, cfg)
    trajectory = [dict(epoch=0, **_epoch_loss(batches, adapters, cfg))]
    for epoch in range(1, cfg.epochs + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                for batch in batches:
                    _, g = loss_and_grad(batch, adapters, cfg)
                    adapters = Adapters(
                        _add(adapters.rgb, g.rgb, -cfg.learning_rate),
                        _add(adapters.flow, g.flow, -cfg.learning_rate),
                    )
                row = dict(epoch=epoch, **_epoch_loss(batches, adapters, cfg))
        except ValueError as exc:
            # non-finite parameters or similarities surface as ValueError
            raise TrainingDiverged(epoch) from exc
        if not np.isfinite(row["total"]):
            raise TrainingDiverged(epoch)
        trajectory.append(row)
        log.debug("epoch %d total %.6f", epoch, row["total"])
    return TrainResult(adapters, trajectory)


def retrieval_probe(store: FeatureStore, adapters: Adapters | None, k: int | None = None) -> float:
    """Top-1 rgb -> flow retrieval accuracy over the first ``k`` records."""
    recs = store.records[: k if k is not None else len(store)]
    if len(recs) < 2:
        raise ValueError("retrieval probe needs at least 2 pairs")
    rgb = np.stack([as_frames(r.rgb) for r in recs])
    flow = np.stack([as_frames(r.flow) for r in recs])
    if adapters is not None:
        rgb = adapter_forward(rgb, adapters.rgb)
        flow = adapter_forward(flow, adapters.flow)
    sim, _ = cross_attention_matrix(rgb, flow)
    return float(np.mean(sim.argmax(axis=1) == np.arange(len(recs))))
