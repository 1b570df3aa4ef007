import pytest

from prunelens.fixtures import plant_staged_fixture, staged_config, staged_samples
from prunelens.model import full_topology
from prunelens.probes import capture
from prunelens.tasks import label_distribution


@pytest.fixture(scope="session")
def staged():
    """8-layer staged model with the transition planted at layer 4."""
    config = staged_config(n_layers=8)
    model = plant_staged_fixture(config, 4)
    samples = staged_samples()
    return model, samples


@pytest.fixture(scope="session")
def staged_traces(staged):
    model, samples = staged
    return capture(model, full_topology(model.config), samples)


@pytest.fixture(scope="session")
def staged_labels(staged):
    _, samples = staged
    return label_distribution(samples)
