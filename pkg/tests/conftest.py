import numpy as np
import pytest

from ecgfusion import ClassId, EcgRecord, RngStream


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_records(counts, shape=(2, 4), seed=0, class_names=None):
    """Tiny in-memory records grouped by class index."""
    rng = np.random.default_rng(seed)
    by_class = {}
    idx = 0
    for k, count in enumerate(counts):
        name = class_names[k] if class_names else ""
        label = ClassId(k, name)
        by_class[k] = [
            EcgRecord(rng.normal(size=shape), label=label, id=f"r{idx + i:04d}")
            for i in range(count)
        ]
        idx += count
    return by_class


def stream(seed=0, name="test"):
    return RngStream(seed, name)
