"""Collects acceptance verdicts and prints one line per criterion after the run."""
import pytest

_VERDICTS: dict = {}
_DETAILS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): acceptance criterion check")


@pytest.fixture
def detail(request):
    """Attach a measurement line to the criterion of the running test."""
    marker = request.node.get_closest_marker("acceptance")

    def add(text):
        if marker is not None:
            _DETAILS.setdefault(marker.args[0], []).append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.args[0]
    # an expected failure still counts against the criterion
    failed = rep.failed or (rep.skipped and hasattr(rep, "wasxfail"))
    if rep.when == "call" or failed:
        prev = _VERDICTS.get(label, True)
        _VERDICTS[label] = prev and not failed


def _order(label):
    digits = "".join(ch for ch in label if ch.isdigit())
    return (int(digits) if digits else 0, label)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for label in sorted(_VERDICTS, key=_order):
        status = "PASS" if _VERDICTS[label] else "FAIL"
        info = "; ".join(_DETAILS.get(label, []))
        tr.write_line(f"{label:<5} {status}  {info}".rstrip())
