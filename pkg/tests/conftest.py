import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tsjm.featurestore import FeatureSequence, FeatureStore, Modality, SynthConfig, VideoRecord, gen_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_store():
    return gen_synthetic(SynthConfig(num_classes=5, videos_per_class=10, frames=8, dim=16, num_subactions=3,
                                     speed_warp_range=(0.5, 2.0), permute_subactions=True, noise_sigma=0.1, seed=7))


def make_record(vid, cid, rgb, flow=None):
    rgb = np.asarray(rgb, dtype=np.float32)
    flow = rgb if flow is None else np.asarray(flow, dtype=np.float32)
    return VideoRecord(vid, cid, FeatureSequence(rgb, Modality.RGB), FeatureSequence(flow, Modality.FLOW))


def make_store(records, num_classes=None):
    num_classes = num_classes or max(r.class_id for r in records) + 1
    return FeatureStore(tuple(records), num_classes, records[0].rgb.D)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
