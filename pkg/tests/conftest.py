import os

import numpy as np
import pytest

from ntg import config as ntg_config


def pytest_collection_modifyitems(config, items):
    if os.getenv("NTG_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set NTG_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(autouse=True)
def single_thread():
    ntg_config.set_threads(1)
    yield
    ntg_config.set_threads(1)
