import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from sharedint.harness import load_scenario  # noqa: E402

settings.register_profile(
    "repo", deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow], max_examples=100,
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def reference():
    return load_scenario("reference")


@pytest.fixture(scope="session")
def ref_vocab(reference):
    return reference.build_vocabulary()


@pytest.fixture
def small_vocab():
    from sharedint.concepts import make_vocabulary

    return make_vocabulary([
        ("then", "connector"), ("in-order-to", "connector"), ("self", "object"), ("walk", "action"),
        ("tree", "object"), ("on-top-of", "relation"),
    ])
