import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def single_kg_dir(tmp_path):
    from multikg.synthetic import write_single_kg
    return write_single_kg(tmp_path / "kg")


@pytest.fixture
def duplicated_kg_dir(tmp_path):
    from multikg.synthetic import write_duplicated_kg
    return write_duplicated_kg(tmp_path / "dup")


@pytest.fixture
def typing_kg_dir(tmp_path):
    from multikg.synthetic import write_typing_kg
    return write_typing_kg(tmp_path / "et")


@pytest.fixture
def multisource_dir(tmp_path):
    from multikg.synthetic import write_multisource
    return write_multisource(tmp_path / "ms")
