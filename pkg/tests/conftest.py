import numpy as np
import pytest
import torch

from gvcltraj.scenegen import build_dataset
from gvcltraj.trajset import build_cover
from gvcltraj.varcore import Conv, Dense, NetworkSpec


@pytest.fixture(scope="session")
def small_dataset():
    return build_dataset(60, 3)


@pytest.fixture(scope="session")
def small_trajset(small_dataset):
    return build_cover(np.stack([s.future for s in small_dataset.train]), 8.0)


@pytest.fixture
def tiny_spec():
    """81-parameter network: one conv, pool, state concat, one dense layer."""
    return NetworkSpec((6, 6, 2), 2, (Conv(2, 3),), (Dense(5, 4, activation="identity"),))


@pytest.fixture
def tiny_inputs():
    g = torch.Generator().manual_seed(0)
    rasters = torch.rand(5, 6, 6, 2, generator=g, dtype=torch.float64)
    states = torch.randn(5, 2, generator=g, dtype=torch.float64)
    return rasters, states


# --- acceptance summary --------------------------------------------------------

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")
    config.stash[ACCEPTANCE] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    entry = item.config.stash[ACCEPTANCE].setdefault(number, {"title": title, "ok": True, "details": []})
    entry["ok"] &= rep.passed
    entry["details"] += [f"{k}={v}" for k, v in item.user_properties]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        r = results[number]
        detail = f"  [{'; '.join(r['details'])}]" if r["details"] else ""
        terminalreporter.write_line(f"{'PASS' if r['ok'] else 'FAIL'}  criterion {number}: {r['title']}{detail}")
