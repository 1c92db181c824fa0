import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from multiscale_crn import load_builtin  # noqa: E402
from multiscale_crn.pipeline import MultiscaleModel  # noqa: E402


@pytest.fixture(scope="session")
def builtin():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load_builtin(name)
        return cache[name]

    return get


@pytest.fixture(scope="session")
def model(builtin):
    cache = {}

    def get(name):
        if name not in cache:
            net, spec, _ = builtin(name)
            cache[name] = MultiscaleModel(net, spec)
        return cache[name]

    return get
