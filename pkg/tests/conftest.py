import numpy as np
import pytest

from prunekit.tiny_net import Mlp, make_blobs, train_dense


@pytest.fixture(scope="session")
def blobs():
    return make_blobs(seed=0)


@pytest.fixture(scope="session")
def small_blobs():
    return make_blobs(num_classes=3, dim=6, samples_per_class=60, spread=0.3, seed=1)


@pytest.fixture(scope="session")
def pretrained(blobs):
    train, test = blobs
    model = Mlp(seed=0)
    model.params = train_dense(model, train, iters=1500, lr=0.05, seed=0)
    return model, train, test


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance summary: one PASS/FAIL line per criterion at the end of the run.

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(cid, title): acceptance criterion check")
    config.stash[_ACCEPTANCE] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        cid, title = marker.args
        detail = dict(item.user_properties).get("detail", "")
        item.config.stash[_ACCEPTANCE][cid] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(results, key=lambda c: int(c[1:])):
        title, status, detail = results[cid]
        line = f"{status} {cid} {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)


@pytest.fixture
def detail(record_property):
    """Attach a one-line measurement to the acceptance summary."""
    def _set(text):
        record_property("detail", text)
    return _set
