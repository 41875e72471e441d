"""Shared fixtures: the default gridworld mixture and one desk-scale pipeline run."""

import numpy as np
import pytest

from mdpmix import harness
from mdpmix.simulator import GridworldSpec, build_gridworld_mixture, sample_dataset


def experiment_data_seed(seed, horizon, trial):
    """Same per-cell seed derivation the experiment sweep uses."""
    return int(np.random.SeedSequence((seed, horizon, trial)).generate_state(1)[0])


@pytest.fixture(scope="session")
def grid_mixture():
    return build_gridworld_mixture(GridworldSpec())


@pytest.fixture(scope="session")
def desk_dataset(grid_mixture):
    return sample_dataset(grid_mixture, 1000, 200, experiment_data_seed(0, 200, 0))


@pytest.fixture(scope="session")
def desk_run(desk_dataset):
    opts = harness.PipelineOptions(
        num_components=2, beta=0.005, num_states=64, num_actions=4
    )
    return harness.run_pipeline(desk_dataset, opts)


@pytest.fixture(scope="session")
def separated_run():
    """Strongly separated, balanced gridworld: every channel cleanly bimodal."""
    mixture = build_gridworld_mixture(
        GridworldSpec(adversarial_strength=1.0, mixture_weight=0.5)
    )
    dataset = sample_dataset(mixture, 400, 200, 123)
    opts = harness.PipelineOptions(
        num_components=2, beta=0.005, num_states=64, num_actions=4
    )
    res = harness.run_pipeline(dataset, opts)
    truth = {t.id: t.true_label for t in dataset}
    return res, truth, dataset
