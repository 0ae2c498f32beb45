import random

import pytest

from hsskit.fastpai import SecurityParams, keygen, toy_keypair
from hsskit.protocols import Deployment

KEY_SEED = 20240611


class RecordingRng(random.Random):
    """Seeded RNG that logs every draw so an oracle can replay the same randomness."""

    def __init__(self, seed):
        super().__init__(seed)
        self.draws = []

    def getrandbits(self, k):
        v = super().getrandbits(k)
        self.draws.append(("bits", k, v))
        return v

    def randrange(self, start, stop=None, step=1):
        v = super().randrange(start, stop, step)
        self.draws.append(("range", start, stop, v))
        return v


@pytest.fixture(scope="session")
def toy_params():
    return SecurityParams.toy_params()


@pytest.fixture(scope="session")
def toy_keys():
    return toy_keypair()


@pytest.fixture
def toy_dep(toy_params, toy_keys):
    pk, sk = toy_keys
    return Deployment.create(toy_params, pk, sk, random.Random(7))


@pytest.fixture(scope="session")
def params():
    return SecurityParams()


@pytest.fixture(scope="session")
def keys(params):
    return keygen(params, random.Random(KEY_SEED))


@pytest.fixture(scope="session")
def dep(params, keys):
    pk, sk = keys
    return Deployment.create(params, pk, sk, random.Random(KEY_SEED + 1))


# ---------------------------------------------------------------- acceptance summary

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion the test belongs to")


def pytest_runtest_logreport(report):
    marks = getattr(report, "criterion", None)
    if marks is None:
        return
    n, title = marks
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "ran": False})
    if report.when == "call" or report.outcome != "passed":
        entry["ran"] = True
        entry["ok"] = entry["ok"] and report.outcome == "passed"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result().criterion = m.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {e['title']}")
