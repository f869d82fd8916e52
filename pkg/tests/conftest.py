import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from synthtrial.dataset import BINARY, Column, FeatureKind, Schema, TrialDataset

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def mixed_schema() -> Schema:
    return Schema(
        (
            Column("age", FeatureKind.real()),
            Column("dose", FeatureKind.positive()),
            Column("visits", FeatureKind.count()),
            Column("site", FeatureKind.categorical(("A", "B", "C"))),
            Column("male", BINARY),
        )
    )


def mixed_dataset(n: int = 40, seed: int = 0, treated_fraction: float = 0.0) -> TrialDataset:
    rng = np.random.default_rng(seed)
    cov = {
        "age": rng.normal(50.0, 10.0, n),
        "dose": rng.lognormal(0.0, 0.5, n),
        "visits": rng.poisson(3.0, n).astype(float),
        "site": rng.integers(0, 3, n),
        "male": rng.integers(0, 2, n),
    }
    treat = (rng.random(n) < treated_fraction).astype(int)
    time = rng.weibull(1.5, n) * 2.0 + 1e-3
    event = (rng.random(n) < 0.8).astype(int)
    return TrialDataset(mixed_schema(), cov, treat, time, event)


@pytest.fixture
def mixed():
    return mixed_dataset()


@pytest.fixture(scope="session")
def sim_default():
    from synthtrial.simulate import SimConfig, simulate_trial

    return simulate_trial(SimConfig(seed=11))
