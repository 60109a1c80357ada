import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit_sphere_points(n, rng):
    x = rng.normal(size=(n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


class AcceptanceLog:
    """Runs each named check at most once per session and keeps one summary line per criterion."""

    def __init__(self):
        self.results = {}
        self.lines = []

    def result(self, name):
        import time

        from pcnn import checks, training_checks

        if name not in self.results:
            registry = {**checks.CHECKS, **training_checks.CHECKS}
            t0 = time.perf_counter()
            res = registry[name]()
            res.seconds = time.perf_counter() - t0
            self.results[name] = res
        return self.results[name]

    def record(self, criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        self.lines.append(line)
        print(line)
        return passed


@pytest.fixture(scope="session")
def acceptance(request):
    store = request.config.stash.setdefault(ACCEPTANCE_KEY, {})
    return store.setdefault("log", AcceptanceLog())


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(ACCEPTANCE_KEY, {}).get("log")
    if log is None or not log.lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in log.lines:
        terminalreporter.write_line(line)
