import numpy as np
import pytest

from cfpl import autograd as ag
from cfpl.config import RunConfig, tiny_config
from cfpl.synth import synth_dataset


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture
def f64():
    """Run a test under 64-bit tensors."""
    with ag.precision(np.float64):
        yield


@pytest.fixture
def tiny() -> RunConfig:
    return tiny_config()


def micro_config(**overrides) -> RunConfig:
    """Smallest config that still exercises every path; for fast train tests."""
    cfg = tiny_config().replace(
        width=64, heads=4, qformer_heads=4, query_count=8,
        image_layers=2, text_layers=2,
    )
    return cfg.replace(**overrides)


@pytest.fixture
def micro() -> RunConfig:
    return micro_config()


@pytest.fixture(scope="session")
def synth3(tmp_path_factory):
    """3-domain synthetic dataset shared across the suite."""
    out = tmp_path_factory.mktemp("synth3")
    info = synth_dataset(out, domains=3, per_class=16, seed=7)
    return info


@pytest.fixture(scope="session")
def synth2(tmp_path_factory):
    """2-domain synthetic dataset for overfit-style runs."""
    out = tmp_path_factory.mktemp("synth2")
    info = synth_dataset(out, domains=2, per_class=24, seed=11)
    return info
