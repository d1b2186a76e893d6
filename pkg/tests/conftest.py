# Shared models for the unit tests.

import numpy as np
import pytest

from nonneg_cl.module_utils.latent_model import build_model


@pytest.fixture
def two_class():
    """Two classes, four samples: class 0 uniform on samples 0 and 1,
    class 1 uniform on samples 2 and 3."""
    return build_model({
        'preset': 'explicit',
        'class_prior': [0.5, 0.5],
        'conditional': [[0.5, 0.5, 0.0, 0.0],
                        [0.0, 0.0, 0.5, 0.5]],
    })


@pytest.fixture
def one_hot():
    return build_model({'preset': 'one_hot', 'm': 5, 'n_samples': 50})


@pytest.fixture
def overlap():
    return build_model({'preset': 'overlap', 'm': 2, 'n_samples': 20,
                        'epsilon': 0.05})


@pytest.fixture
def random_model():
    return build_model({'preset': 'random', 'm': 4, 'n_samples': 12},
                       seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
