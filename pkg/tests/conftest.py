import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lteloc.scenario import load_scenario  # noqa: E402


@pytest.fixture(scope="session")
def scenarios():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load_scenario(name)
        return cache[name]
    return get


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's outcome for the end-of-run report."""
    report = request.config.__dict__.setdefault("_acceptance", {})

    class Recorder:
        def __init__(self):
            self.key = None

        def __call__(self, number, title):
            self.key = (number, title)
            report.setdefault(self.key, "PASS")
            return self

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            # a criterion split over several tests fails if any part fails
            if exc_type is not None:
                report[self.key] = "FAIL"
            print(f"criterion {self.key[0]:2d} {'PASS' if exc_type is None else 'FAIL'}: {self.key[1]}")
            return False
    return Recorder()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    report = getattr(config, "_acceptance", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for (n, title), outcome in sorted(report.items()):
        terminalreporter.write_line(f"[{outcome}] {n:2d}. {title}")
