import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ddar.model import ExtractorConfig, init_model
from ddar.rng import Rng

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def small_config():
    return ExtractorConfig(input_dim=3, width=6, depth=2, embed_dim=8, dropout_rate=0.0)


@pytest.fixture
def small_model(small_config):
    """d=8, m=4, n=8, C=2 with nonzero centroids so every term of the RBF head is exercised."""
    rng = Rng(11)
    model = init_model(small_config, num_classes=2, num_prototypes=4, centroid_dim=8, rng=rng)
    model.centroids = rng.normal(model.centroids.shape, std=0.5)
    return model


@pytest.fixture
def small_batch():
    rng = np.random.default_rng(5)
    return rng.normal(size=(5, 3)), np.array([0, 1, 1, 0, 1])


class RunCache:
    """Full-size two-moons runs keyed by (method, seed, loss_weight), trained at most once per session."""

    def __init__(self):
        self._runs = {}

    def get(self, method, seed, loss_weight=0.1):
        import time
        from dataclasses import replace

        from ddar.experiments import run_once
        from ddar.training import TrainConfig

        key = (method, seed, loss_weight)
        if key not in self._runs:
            t0 = time.process_time()
            result = run_once(method, seed, cfg=replace(TrainConfig(), loss_weight=loss_weight))
            self._runs[key] = (result, time.process_time() - t0)
        return self._runs[key]


@pytest.fixture(scope="session")
def run_cache():
    return RunCache()
