import importlib.util
import os
from pathlib import Path

import numpy as np
import pytest

from pprec import kernels
from pprec.dataset import InteractionDataset

ROOT = Path(__file__).resolve().parents[1]
ACCEPTANCE_LINES = []

BACKENDS = kernels.available_backends()


def random_dataset(rng, n_users, n_items, density=0.2):
    """Random binary dataset where every user and item has at least one like."""
    mask = rng.random((n_users, n_items)) < density
    for u in range(n_users):
        if not mask[u].any():
            mask[u, rng.integers(n_items)] = True
    for i in range(n_items):
        if not mask[:, i].any():
            mask[rng.integers(n_users), i] = True
    users, items = np.nonzero(mask)
    return InteractionDataset.from_pairs(users, items, n_users, n_items)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def _load_fetcher():
    spec = importlib.util.spec_from_file_location("fetch_ml100k", ROOT / "scripts" / "fetch_ml100k.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


@pytest.fixture(scope="session")
def ml100k_path():
    """MovieLens-100K ratings (movielens-csv), from $PPREC_ML100K or the local cache/mirror."""
    env = os.environ.get("PPREC_ML100K")
    if env:
        return Path(env)
    try:
        return _load_fetcher().fetch()
    except Exception as exc:  # noqa: BLE001
        pytest.fail(f"MovieLens-100K unavailable (set PPREC_ML100K): {exc}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
