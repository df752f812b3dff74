"""Shared fixtures and the ``--runslow`` switch for long reproduction runs."""

import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from hlm_backend.models import Dataset, HlmSpec
from hlm_backend.rng import RngStream
from hlm_backend.simulator import apply_missingness, make_design, simulate_dataset


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run long sampler reproductions"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction of published tables")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_dataset(y, cluster, c, *, c_missing=None, y_missing=None, x2=None, x1=None):
    """Dataset from plain lists; masks default to fully observed."""
    y = np.asarray(y, dtype=float)
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    n_clusters = c.shape[0]
    return Dataset(
        cluster=np.asarray(cluster),
        y=y,
        y_missing=np.zeros(y.shape, dtype=bool) if y_missing is None else np.asarray(y_missing),
        x1=np.zeros((y.shape[0], 0)) if x1 is None else np.asarray(x1, dtype=float),
        x2=np.zeros((n_clusters, 0)) if x2 is None else np.asarray(x2, dtype=float),
        c=c,
        c_missing=np.zeros(c.shape, dtype=bool) if c_missing is None else np.asarray(c_missing),
    )


@pytest.fixture
def baseline_design():
    return make_design("baseline", n_clusters=40, cluster_size=4)


@pytest.fixture
def baseline_spec():
    return HlmSpec(p=2, q1=0, q2=1, active_cc=((0, 1),))


@pytest.fixture
def masked_dataset(baseline_design):
    """A small baseline dataset with the default missingness laws applied."""
    stream = RngStream(11)
    complete = simulate_dataset(baseline_design, stream.derive(0))
    return apply_missingness(complete, baseline_design.laws, stream.derive(1))


def random_spec(rng):
    """A random model shape with random active interaction pairs."""
    p = int(rng.integers(1, 5))
    q1 = int(rng.integers(0, 3))
    q2 = int(rng.integers(0, 3))
    q = q1 + q2
    xc = [(s, col) for s in range(p) for col in range(q) if rng.random() < 0.4]
    cc = [(s, t) for s in range(p) for t in range(s + 1, p) if rng.random() < 0.5]
    return HlmSpec(p=p, q1=q1, q2=q2, active_xc=tuple(xc), active_cc=tuple(cc))
