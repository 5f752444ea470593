"""Named synthetic stores used by the CLI, the scripts and the acceptance suite."""

from __future__ import annotations

from .featurestore import FeatureStore, SynthConfig, gen_noise_store, gen_synthetic, merge_stores

# speed/length variation only: DTW's home ground
WARP = SynthConfig(num_classes=10, videos_per_class=10, speed_warp_range=(0.5, 2.0), permute_subactions=False, noise_sigma=0.1)

# sub-action order shuffled inside every video: KM's home ground
PERMUTED = SynthConfig(num_classes=10, videos_per_class=10, permute_subactions=True, noise_sigma=0.3)

# one sub-action per video, flow a linear image of rgb: the contrastive training set
CORRELATED = SynthConfig(num_classes=64, videos_per_class=4, num_subactions=1, noise_sigma=0.3)


def mixed_store(num_classes: int = 24, videos_per_class: int = 20, noise_sigma: float = 0.3, seed: int = 0) -> FeatureStore:
    """Half the classes warped with order-defined sub-actions from a shared
    pool, the other half with shuffled sub-action order."""
    half = num_classes // 2
    warped = gen_synthetic(
        SynthConfig(
            num_classes=half,
            videos_per_class=videos_per_class,
            noise_sigma=noise_sigma,
            permute_subactions=False,
            anchor_pool=4,
            seed=seed,
        )
    )
    permuted = gen_synthetic(
        SynthConfig(
            num_classes=num_classes - half,
            videos_per_class=videos_per_class,
            noise_sigma=noise_sigma,
            permute_subactions=True,
            seed=seed + 1,
        )
    )
    return merge_stores(warped, permuted)


def benchmark_store(seed: int = 0) -> FeatureStore:
    """The default evaluation store: 24 classes x 20 videos, T=8, D=16."""
    return mixed_store(24, 20, 0.3, seed)


def noise_store(seed: int = 0) -> FeatureStore:
    return gen_noise_store(24, 20, 8, 16, seed)


PRESETS = {
    "benchmark": benchmark_store,
    "noise": noise_store,
    "warp": lambda seed=0: gen_synthetic(SynthConfig(**{**WARP.__dict__, "seed": seed})),
    "permuted": lambda seed=0: gen_synthetic(SynthConfig(**{**PERMUTED.__dict__, "seed": seed})),
    "correlated": lambda seed=0: gen_synthetic(SynthConfig(**{**CORRELATED.__dict__, "seed": seed})),
}
