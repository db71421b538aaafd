import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gaitsep import data as D
from gaitsep import models as M

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def specs():
    return {name: M.build_spec(name) for name in M.MODEL_NAMES}


@pytest.fixture(scope="session")
def small_synth():
    """Four subjects, 60 windows per class each; quick enough for CLI tests."""
    return D.synth_generate(D.SynthConfig(n_subjects=4, windows_per_class=60))


def random_params(spec, seed):
    """Initialized parameters with BN state and biases moved off their defaults."""
    params = M.init_params(spec, seed)
    r = np.random.default_rng(seed + 1)
    arrays = {}
    for i, block in enumerate(params.layers):
        if block is None:
            continue
        for name in ("bias", "gamma", "beta", "running_mean", "running_var"):
            arr = getattr(block, name, None)
            if arr is None:
                continue
            if name == "gamma":
                arrays[(i, name)] = 1.0 + 0.2 * r.standard_normal(arr.shape)
            elif name == "running_var":
                arrays[(i, name)] = 0.5 + r.random(arr.shape)
            else:
                arrays[(i, name)] = 0.1 * r.standard_normal(arr.shape)
    return params.with_arrays(arrays)
