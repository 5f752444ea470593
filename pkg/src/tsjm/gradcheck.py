"""Central finite-difference checks for every analytic gradient in the package."""

from __future__ import annotations

import numpy as np

from .bgm import km_loss, km_loss_grad
from .featurestore import SynthConfig, gen_synthetic
from .episodic import sample_episode
from .mcl import (
    AdapterParams,
    Adapters,
    adapter_backward,
    adapter_forward,
    cross_attention_backward,
    cross_attention_matrix,
    infonce_grad,
    infonce_loss,
)
from .otm import ota_loss, ota_loss_grad
from .trainer import TrainBatch, TrainConfig, loss_and_grad, total_loss

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4


def central_difference(f, x: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        fp = f(x)
        x[idx] = orig - eps
        fm = f(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic, numeric) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-10)
    return float(np.linalg.norm(a - n) / scale)


def _random_params(rng, D, B, scale=0.5):
    return AdapterParams(
        rng.standard_normal((D, B)) * scale,
        rng.standard_normal(B) * 0.1,
        rng.standard_normal((B, D)) * scale,
        rng.standard_normal(D) * 0.1,
    )


def check_ota_loss(rng, eps):
    N = int(rng.integers(2, 8))
    d = rng.uniform(0, 4, N)
    t = int(rng.integers(N))
    return relative_error(ota_loss_grad(d, t), central_difference(lambda v: ota_loss(v, t), d, eps))


def check_km_loss(rng, eps):
    N = int(rng.integers(2, 8))
    s = rng.uniform(-2, 8, N)
    t = int(rng.integers(N))
    return relative_error(km_loss_grad(s, t), central_difference(lambda v: km_loss(v, t), s, eps))


def check_infonce(rng, eps):
    k = int(rng.integers(2, 7))
    sim = rng.uniform(-1, 1, (k, k))
    tau = float(rng.uniform(0.1, 1.0))
    return relative_error(infonce_grad(sim, tau), central_difference(lambda m: infonce_loss(m, tau), sim, eps))


def check_adapter(rng, eps):
    T, D, B = 3, 6, 2
    p = _random_params(rng, D, B)
    x = rng.standard_normal((T, D))
    g = rng.standard_normal((T, D))
    dx, dp = adapter_backward(x, p, g)
    num_x = central_difference(lambda v: np.sum(g * adapter_forward(v, p)), x, eps)
    num_p = central_difference(
        lambda v: np.sum(g * adapter_forward(x, AdapterParams.from_flat(v, D, B))), p.flat(), eps
    )
    return max(relative_error(dx, num_x), relative_error(dp.flat(), num_p))


def check_mcl_chain(rng, eps):
    """adapter -> cross-attention similarity -> InfoNCE, w.r.t. both adapters."""
    k, T, D, B = 4, 4, 6, 2
    tau = float(rng.uniform(0.2, 1.0))
    rgb = rng.standard_normal((k, T, D))
    flow = rng.standard_normal((k, T, D))
    pr, pf = _random_params(rng, D, B), _random_params(rng, D, B)
    n = pr.flat().size

    def loss(vec):
        ar = AdapterParams.from_flat(vec[:n], D, B)
        af = AdapterParams.from_flat(vec[n:], D, B)
        sim, _ = cross_attention_matrix(adapter_forward(rgb, ar), adapter_forward(flow, af))
        return infonce_loss(sim, tau)

    xr, xf = adapter_forward(rgb, pr), adapter_forward(flow, pf)
    sim, cache = cross_attention_matrix(xr, xf)
    dxr, dxf = cross_attention_backward(cache, infonce_grad(sim, tau))
    analytic = np.concatenate([adapter_backward(rgb, pr, dxr)[1].flat(), adapter_backward(flow, pf, dxf)[1].flat()])
    return relative_error(analytic, central_difference(loss, np.concatenate([pr.flat(), pf.flat()]), eps))


_TINY = SynthConfig(num_classes=4, videos_per_class=3, frames=4, dim=6, num_subactions=2, permute_subactions=True, noise_sigma=0.3)


def check_trainer(rng, eps):
    """Full objective (all three terms) w.r.t. both adapters, alignments frozen."""
    D, B = _TINY.dim, 2
    store = gen_synthetic(SynthConfig(**{**_TINY.__dict__, "seed": int(rng.integers(2**32))}))
    ep = sample_episode(store, 3, 1, 1, int(rng.integers(2**32)))
    picks = rng.choice(len(store), size=4, replace=False)
    batch = TrainBatch(
        np.stack([store.records[p].rgb.frames for p in picks]).astype(np.float64),
        np.stack([store.records[p].flow.frames for p in picks]).astype(np.float64),
        ep,
    )
    cfg = TrainConfig(tau=float(rng.uniform(0.2, 1.0)), lambdas=(1.0, 1.0, 1.0))
    adapters = Adapters(_random_params(rng, D, B, 0.3), _random_params(rng, D, B, 0.3))
    parts, grads = loss_and_grad(batch, adapters, cfg)
    n = adapters.rgb.flat().size

    def loss(vec):
        a = Adapters(AdapterParams.from_flat(vec[:n], D, B), AdapterParams.from_flat(vec[n:], D, B))
        return total_loss(batch, a, cfg, frozen=parts.structures)

    x0 = np.concatenate([adapters.rgb.flat(), adapters.flow.flat()])
    analytic = np.concatenate([grads.rgb.flat(), grads.flow.flat()])
    return relative_error(analytic, central_difference(loss, x0, eps))


SUITES = {
    "ota_loss": check_ota_loss,
    "km_loss": check_km_loss,
    "infonce": check_infonce,
    "adapter": check_adapter,
    "mcl_chain": check_mcl_chain,
    "trainer": check_trainer,
}


def run_suites(eps: float = DEFAULT_EPS, instances: int = 50, seed: int = 0, suites=None) -> dict[str, float]:
    """Maximum relative error of each suite over ``instances`` seeded instances."""
    out = {}
    for i, name in enumerate(suites or SUITES):
        errs = [SUITES[name](np.random.default_rng([seed, i, j]), eps) for j in range(instances)]
        out[name] = max(errs)
    return out
